#include "shapemat/features.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/Geometry>
#include <algorithm>
#include <cmath>

#include "shapemat/parallel.hpp"

namespace shapemat {

namespace {
constexpr std::uint64_t kReferenceSeed = 0x5EEDF00Dull;
}

FeatureExtractor::FeatureExtractor(const LabeledMesh& mesh, int reference_points)
    : mesh_(mesh), reference_(sample_area_weighted(mesh, reference_points, kReferenceSeed)), bvh_(mesh) {
  std::vector<Vec3> pts;
  pts.reserve(reference_.size());
  for (const auto& s : reference_) pts.push_back(s.position);
  tree_ = KdTree3(pts);

  min_height_ = mesh.vertices().front().y();
  for (const auto& v : mesh.vertices()) min_height_ = std::min(min_height_, v.y());

  const double total = mesh.total_area();
  for (int c = 0; c < static_cast<int>(mesh.components().size()); ++c) {
    Eigen::AlignedBox3d box;
    for (int f : mesh.components()[c].faces)
      for (int k = 0; k < 3; ++k) box.extend(mesh.corner(f, k));
    component_boxes_.push_back(box);
    component_fraction_.push_back(total > 0 ? mesh.component_area(c) / total : 0.0);
  }
}

double FeatureExtractor::thickness(const SurfaceSample& sample) const {
  const double radius = mesh_.bounding_sphere().radius;
  const Vec3 origin = sample.position - 1e-4 * radius * sample.normal;
  auto hit = bvh_.intersect(origin, -sample.normal);
  return hit ? std::min(hit->t, 2.0 * radius) : 2.0 * radius;
}

Eigen::VectorXd FeatureExtractor::extract(const SurfaceSample& sample) const {
  Eigen::VectorXd x = Eigen::VectorXd::Zero(kFeatureDim);
  const double radius = mesh_.bounding_sphere().radius;
  const Vec3 p = sample.position;
  const Vec3 n = sample.normal;

  for (std::size_t ri = 0; ri < kFeatureRadii.size(); ++ri) {
    const double r = kFeatureRadii[ri] * radius;
    const auto nbrs = tree_.within(p, r);
    auto block = x.segment(ri * kPerRadiusFeatures, kPerRadiusFeatures);
    if (nbrs.empty()) continue;

    const double count = static_cast<double>(nbrs.size());
    Vec3 mean = Vec3::Zero();
    for (int i : nbrs) mean += reference_[i].position;
    mean /= count;
    Mat3 cov = Mat3::Zero();
    double mean_dist = 0.0, mean_up = 0.0, mean_dot = 0.0, y2 = 0.0;
    double ylo = reference_[nbrs[0]].position.y(), yhi = ylo;
    std::array<double, 4> hist{};
    for (int i : nbrs) {
      const auto& s = reference_[i];
      const Vec3 d = s.position - mean;
      cov += d * d.transpose();
      mean_dist += (s.position - p).norm();
      mean_up += std::abs(s.normal.dot(kUpAxis));
      const double dot = std::clamp(s.normal.dot(n), -1.0, 1.0);
      mean_dot += dot;
      hist[std::min(3, static_cast<int>(std::acos(dot) / (M_PI / 4)))] += 1.0;
      y2 += d.y() * d.y();
      ylo = std::min(ylo, s.position.y());
      yhi = std::max(yhi, s.position.y());
    }
    cov /= count;

    if (nbrs.size() >= 3) {
      Eigen::SelfAdjointEigenSolver<Mat3> es(cov);
      const Vec3 ev = es.eigenvalues().cwiseMax(0.0);  // ascending
      const double l1 = ev[2], l2 = ev[1], l3 = ev[0];
      if (l1 > 0) {
        block[0] = 1.0;
        block[1] = l2 / l1;
        block[2] = l3 / l1;
        block[14] = (l1 - l2) / l1;
        block[15] = (l2 - l3) / l1;
      }
    }
    for (int b = 0; b < 4; ++b) block[3 + b] = hist[b] / count;
    block[7] = count / static_cast<double>(reference_.size());
    block[8] = mean_dist / count / r;
    block[9] = (mean - p).dot(n) / r;
    block[10] = (mean - p).norm() / r;
    block[11] = mean_up / count;
    block[12] = std::sqrt(y2 / count) / r;
    block[13] = mean_dot / count;
    block[16] = (yhi - ylo) / (2.0 * r);
  }

  const int g = static_cast<int>(kFeatureRadii.size()) * kPerRadiusFeatures;
  const auto& sphere = mesh_.bounding_sphere();
  const int comp = mesh_.component_of(sample.face);
  const auto& box = component_boxes_[comp];
  Vec3 extents = box.sizes() / radius;
  std::sort(extents.data(), extents.data() + 3, std::greater<>());

  x[g + 0] = (p.y() - min_height_) / (2.0 * radius);
  x[g + 1] = (radius - (p - sphere.center).norm()) / radius;
  x[g + 2] = thickness(sample) / radius;
  x[g + 3] = component_fraction_[comp];
  x[g + 4] = n.y();
  x[g + 5] = std::abs(n.y());
  x[g + 6] = Eigen::Vector2d(p.x() - sphere.center.x(), p.z() - sphere.center.z()).norm() / radius;
  x[g + 7] = box.sizes().y() > 0 ? (p.y() - box.min().y()) / box.sizes().y() : 0.0;
  x[g + 8] = extents[0];
  x[g + 9] = extents[1];
  x[g + 10] = extents[2];
  x[g + 11] = (box.center().y() - min_height_) / (2.0 * radius);
  {
    const Vec3 origin = p + 1e-4 * radius * n;
    auto hit = bvh_.intersect(origin, n);
    x[g + 12] = hit ? std::min(hit->t, 2.0 * radius) / radius : 2.0;
  }
  return x;
}

Eigen::VectorXd extract_point_features(const LabeledMesh& mesh, const SurfaceSample& sample) {
  return FeatureExtractor(mesh).extract(sample);
}

Eigen::MatrixXd extract_features(const LabeledMesh& mesh, const std::vector<SurfaceSample>& samples) {
  const FeatureExtractor fx(mesh);
  Eigen::MatrixXd out(samples.size(), kFeatureDim);
  parallel_for(samples.size(), [&](std::size_t i) { out.row(i) = fx.extract(samples[i]).transpose(); });
  return out;
}

}  // namespace shapemat
