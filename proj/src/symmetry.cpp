#include "shapemat/symmetry.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <json.hpp>
#include <limits>
#include <map>
#include <optional>
#include <random>

#include "shapemat/bvh.hpp"
#include "shapemat/error.hpp"
#include "shapemat/kdtree.hpp"
#include "shapemat/parallel.hpp"

namespace shapemat {

Mat3 upright_rotation(double angle) { return Eigen::AngleAxisd(angle, kUpAxis).toRotationMatrix(); }

namespace {

Vec3 mean_of(std::span<const Vec3> pts) {
  Vec3 m = Vec3::Zero();
  for (const auto& p : pts) m += p;
  return m / static_cast<double>(pts.size());
}

Mat3 covariance_of(std::span<const Vec3> pts) {
  const Vec3 m = mean_of(pts);
  Mat3 c = Mat3::Zero();
  for (const auto& p : pts) c += (p - m) * (p - m).transpose();
  return c / static_cast<double>(pts.size());
}

void require_nondegenerate(std::span<const Vec3> pts) {
  if (pts.size() < 3) throw Error(ErrorKind::DegenerateGeometry, "ICP needs at least three points");
  Eigen::SelfAdjointEigenSolver<Mat3> es(covariance_of(pts));
  const Vec3 ev = es.eigenvalues();  // ascending
  if (!(ev[1] > 1e-12 * std::max(ev[2], 1e-300)))
    throw Error(ErrorKind::DegenerateGeometry, "point set covariance has rank < 2");
}

double rmsd_of(std::span<const Vec3> source, const ClosestPointFn& closest, const RigidTransformd& t,
               std::vector<Vec3>* corr = nullptr) {
  double acc = 0.0;
  for (std::size_t i = 0; i < source.size(); ++i) {
    const Vec3 p = t(source[i]);
    const Vec3 q = closest(p);
    acc += (p - q).squaredNorm();
    if (corr) (*corr)[i] = q;
  }
  return std::sqrt(acc / static_cast<double>(source.size()));
}

}  // namespace

RigidTransformd fit_rigid(std::span<const Vec3> source, std::span<const Vec3> target, int det_sign) {
  const Vec3 ms = mean_of(source), mt = mean_of(target);
  Mat3 h = Mat3::Zero();
  for (std::size_t i = 0; i < source.size(); ++i) h += (source[i] - ms) * (target[i] - mt).transpose();
  Eigen::JacobiSVD<Mat3> svd(h, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Mat3 u = svd.matrixU(), v = svd.matrixV();
  Mat3 d = Mat3::Identity();
  d(2, 2) = (det_sign >= 0 ? 1.0 : -1.0) * (v * u.transpose()).determinant();
  RigidTransformd t;
  t.rotation = v * d * u.transpose();
  t.translation = mt - t.rotation * ms;
  return t;
}

IcpResult icp_align(std::span<const Vec3> source, const ClosestPointFn& closest, const RigidTransformd& init,
                    int max_iter, double tol) {
  require_nondegenerate(source);
  const int sign = init.rotation.determinant() >= 0 ? 1 : -1;
  IcpResult result{init, 0.0, 0};
  std::vector<Vec3> corr(source.size());
  double prev = std::numeric_limits<double>::infinity();
  for (int it = 0; it < max_iter; ++it) {
    const double rmsd = rmsd_of(source, closest, result.transform, &corr);
    if (std::abs(prev - rmsd) < tol) break;
    prev = rmsd;
    result.transform = fit_rigid(source, corr, sign);
    result.iterations = it + 1;
  }
  result.rmsd = rmsd_of(source, closest, result.transform);
  return result;
}

IcpResult icp_align(std::span<const Vec3> source, std::span<const Vec3> target, const RigidTransformd& init,
                    int max_iter, double tol) {
  if (target.empty()) throw Error(ErrorKind::DegenerateGeometry, "ICP target is empty");
  const KdTree3 tree(target);
  return icp_align(
      source, [&](const Vec3& p) { return tree.point(tree.nearest(p)); }, init, max_iter, tol);
}

// ---------------------------------------------------------------------------
// Detection

namespace {

struct ComponentData {
  std::vector<Vec3> points;
  Vec3 centroid = Vec3::Zero();
  Vec3 spread = Vec3::Zero();  // sqrt of covariance eigenvalues, ascending
  double area = 0.0;
  TriangleBvh bvh;
  bool usable = false;
};

std::vector<Vec3> sample_component(const LabeledMesh& mesh, const Component& comp, int n, std::uint64_t seed) {
  std::vector<double> areas;
  for (int f : comp.faces) areas.push_back(mesh.face_areas()[f]);
  std::discrete_distribution<int> pick(areas.begin(), areas.end());
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::mt19937_64 rng(seed);
  std::vector<Vec3> pts;
  pts.reserve(n);
  for (int i = 0; i < n; ++i) {
    const int f = comp.faces[pick(rng)];
    const double r1 = std::sqrt(unit(rng)), r2 = unit(rng);
    pts.push_back(mesh.point_at(f, Vec3(1.0 - r1, r1 * (1.0 - r2), r1 * r2)));
  }
  return pts;
}

struct Candidate {
  RigidTransformd transform;
  double rmsd;
  int source, target, init;
};

bool similar(const RigidTransformd& a, const RigidTransformd& b, const SymmetryOptions& o, double radius) {
  if (a.kind() != b.kind()) return false;
  const double tol_angle = o.cluster_angle_deg * M_PI / 180.0;
  const double tol_axis = o.cluster_axis_deg * M_PI / 180.0;
  const auto ra = a.proper_rotation(), rb = b.proper_rotation();
  if (std::abs(ra.angle() - rb.angle()) > tol_angle) return false;
  if (ra.angle() > tol_angle || rb.angle() > tol_angle) {
    double c = ra.axis().dot(rb.axis());
    // Near a half turn the axis sign is arbitrary.
    if (ra.angle() > M_PI - tol_angle) c = std::abs(c);
    if (std::acos(std::clamp(c, -1.0, 1.0)) > tol_axis) return false;
  }
  return (a.translation - b.translation).norm() <= o.cluster_translation * radius;
}

bool comparable(const ComponentData& a, const ComponentData& b, double tol) {
  const auto rel = [](double x, double y) { return std::abs(x - y) / std::max({std::abs(x), std::abs(y), 1e-300}); };
  if (rel(a.area, b.area) > tol) return false;
  for (int k = 0; k < 3; ++k)
    if (rel(a.spread[k], b.spread[k]) > tol && std::abs(a.spread[k] - b.spread[k]) > 1e-3 * a.spread[2]) return false;
  return true;
}

}  // namespace

std::vector<DetectedSymmetry> detect_symmetries(const LabeledMesh& mesh, const SymmetryOptions& options,
                                                std::uint64_t seed) {
  const auto& comps = mesh.components();
  const int nc = static_cast<int>(comps.size());
  const double radius = mesh.bounding_sphere().radius;
  const double accept = options.rmsd_threshold * radius;
  const double angle_tol = options.cluster_angle_deg * M_PI / 180.0;

  std::vector<ComponentData> data(nc);
  for (int c = 0; c < nc; ++c) {
    auto& d = data[c];
    d.area = mesh.component_area(c);
    if (!(d.area > 0.0)) continue;
    d.points = sample_component(mesh, comps[c], options.samples_per_component, seed + 7919ull * (c + 1));
    d.centroid = mean_of(d.points);
    Eigen::SelfAdjointEigenSolver<Mat3> es(covariance_of(d.points));
    d.spread = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    d.bvh = TriangleBvh(mesh, comps[c].faces);
    d.usable = d.spread[1] > 1e-9 * std::max(d.spread[2], 1e-300);
  }

  // Initial orientations: rotations about the upright axis, and the same
  // rotations composed with mirrors across a vertical and a horizontal plane.
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> jitter(-1.0, 1.0);
  std::vector<Mat3> rotations, mirrors;
  for (int k = 0; k < options.init_rotations; ++k) {
    const double angle = 2.0 * M_PI * k / options.init_rotations + jitter(rng) * M_PI / 180.0;
    rotations.push_back(upright_rotation(angle));
  }
  for (const Vec3& diag : {Vec3(-1, 1, 1), Vec3(1, -1, 1)})
    for (const auto& r : rotations) mirrors.push_back(r * diag.asDiagonal());

  struct Job {
    int source, target, init;
    Mat3 rotation;
  };
  std::vector<Job> jobs;
  for (int a = 0; a < nc; ++a) {
    if (!data[a].usable) continue;
    for (int b = 0; b < nc; ++b) {
      if (!data[b].usable || !comparable(data[a], data[b], options.shape_tolerance)) continue;
      int k = 0;
      if (a != b)
        for (const auto& r : rotations) jobs.push_back({a, b, k++, r});
      for (const auto& r : mirrors) jobs.push_back({a, b, k++, r});
    }
  }

  std::vector<std::optional<Candidate>> results(jobs.size());
  parallel_for(jobs.size(), [&](std::size_t j) {
    const auto& job = jobs[j];
    const auto& src = data[job.source];
    const auto& dst = data[job.target];
    RigidTransformd init;
    init.rotation = job.rotation;
    init.translation = dst.centroid - job.rotation * src.centroid;
    const ClosestPointFn closest = [&](const Vec3& p) { return dst.bvh.closest_point(p).point; };
    // A short first pass weeds out initializations that are going nowhere.
    const int warmup = std::min(options.icp_iterations, 8);
    const double tol = options.coarse_icp_tol * radius;
    auto fit = icp_align(src.points, closest, init, warmup, tol);
    if (!(fit.rmsd < 5.0 * accept)) return;
    if (fit.iterations == warmup && warmup < options.icp_iterations)
      fit = icp_align(src.points, closest, fit.transform, options.icp_iterations - warmup, tol);
    if (!(fit.rmsd < accept)) return;
    // Identity and pure translations are not symmetries we model.
    if (fit.transform.kind() == SymmetryKind::Rotational && fit.transform.proper_rotation().angle() < angle_tol) return;
    results[j] = Candidate{fit.transform, fit.rmsd, job.source, job.target, job.init};
  });

  std::vector<Candidate> accepted;
  for (auto& r : results)
    if (r) accepted.push_back(*r);
  std::stable_sort(accepted.begin(), accepted.end(), [](const Candidate& x, const Candidate& y) { return x.rmsd < y.rmsd; });

  std::vector<Candidate> representatives;
  for (const auto& c : accepted) {
    const bool merged = std::any_of(representatives.begin(), representatives.end(),
                                    [&](const Candidate& r) { return similar(r.transform, c.transform, options, radius); });
    if (!merged) representatives.push_back(c);
  }

  double total_area = 0.0;
  for (const auto& d : data) total_area += d.area;

  // Components the transform carries onto a matching component, and the
  // area fraction they cover.
  auto evaluate = [&](const RigidTransformd& t, DetectedSymmetry& sym, std::vector<Vec3>* mapped, double tol) {
    sym.component_pairs.clear();
    double covered = 0.0;
    for (int c = 0; c < nc; ++c) {
      if (!data[c].usable) continue;
      const Vec3 moved = t(data[c].centroid);
      int target = -1;
      double best = std::numeric_limits<double>::infinity();
      for (int d = 0; d < nc; ++d) {
        if (!data[d].usable) continue;
        const double dist = (data[d].centroid - moved).squaredNorm();
        if (dist < best) {
          best = dist;
          target = d;
        }
      }
      if (target < 0 || !comparable(data[c], data[target], options.shape_tolerance)) continue;
      const double r = rmsd_of(
          data[c].points, [&](const Vec3& p) { return data[target].bvh.closest_point(p).point; }, t);
      if (r < tol) {
        sym.component_pairs.emplace_back(c, target);
        covered += data[c].area;
        if (mapped) mapped->insert(mapped->end(), data[c].points.begin(), data[c].points.end());
      }
    }
    sym.coverage = total_area > 0.0 ? covered / total_area : 0.0;
    return sym.coverage >= options.min_coverage - 1e-9 && !sym.component_pairs.empty();
  };

  // Component-pair fits can be loose along directions a single part does not
  // constrain (e.g. spin about a cylinder's axis); refit each representative
  // against the whole surface.
  const TriangleBvh whole(mesh);
  std::vector<std::optional<DetectedSymmetry>> refined(representatives.size());
  parallel_for(representatives.size(), [&](std::size_t i) {
    DetectedSymmetry coarse{representatives[i].transform, representatives[i].rmsd, 0.0, {}};
    std::vector<Vec3> pts;
    if (!evaluate(coarse.transform, coarse, &pts, 5.0 * accept)) return;
    const auto fit = icp_align(
        pts, [&](const Vec3& p) { return whole.closest_point(p).point; }, coarse.transform, options.icp_iterations,
        options.icp_tol * radius);
    if (fit.transform.kind() == SymmetryKind::Rotational && fit.transform.proper_rotation().angle() < angle_tol) return;
    DetectedSymmetry sym{fit.transform, fit.rmsd, 0.0, {}};
    if (evaluate(sym.transform, sym, nullptr, accept)) refined[i] = std::move(sym);
  });

  std::vector<DetectedSymmetry> out;
  for (auto& r : refined) {
    if (!r) continue;
    const bool dup = std::any_of(out.begin(), out.end(), [&](const DetectedSymmetry& o) {
      return similar(o.transform, r->transform, options, radius);
    });
    if (!dup) out.push_back(std::move(*r));
  }

  std::stable_sort(out.begin(), out.end(), [](const DetectedSymmetry& x, const DetectedSymmetry& y) {
    const int kx = x.transform.kind() == SymmetryKind::Rotational ? 0 : 1;
    const int ky = y.transform.kind() == SymmetryKind::Rotational ? 0 : 1;
    if (kx != ky) return kx < ky;
    return x.transform.proper_rotation().angle() < y.transform.proper_rotation().angle();
  });
  return out;
}

std::vector<SymmetryPair> symmetry_pairs(const LabeledMesh& mesh, const std::vector<DetectedSymmetry>& symmetries,
                                         double residual_cutoff) {
  const auto& centroids = mesh.face_centroids();
  const double radius = mesh.bounding_sphere().radius;
  std::map<int, KdTree3> trees;
  auto tree_for = [&](int comp) -> const KdTree3& {
    auto it = trees.find(comp);
    if (it != trees.end()) return it->second;
    std::vector<Vec3> pts;
    for (int f : mesh.components()[comp].faces) pts.push_back(centroids[f]);
    return trees.emplace(comp, KdTree3(pts)).first->second;
  };

  std::map<std::pair<int, int>, SymmetryPair> best;
  for (std::size_t k = 0; k < symmetries.size(); ++k) {
    const auto& sym = symmetries[k];
    for (auto [a, b] : sym.component_pairs) {
      const auto& tree = tree_for(b);
      const auto& target_faces = mesh.components()[b].faces;
      for (int f : mesh.components()[a].faces) {
        const Vec3 p = sym.transform(centroids[f]);
        const int g = target_faces[tree.nearest(p)];
        if (g == f) continue;
        const double s = std::min(1.0, (p - centroids[g]).norm() / radius);
        if (s > residual_cutoff) continue;
        const auto key = std::make_pair(std::min(f, g), std::max(f, g));
        auto it = best.find(key);
        if (it == best.end() || s < it->second.s) best[key] = SymmetryPair{f, g, s, static_cast<int>(k)};
      }
    }
  }
  std::vector<SymmetryPair> out;
  out.reserve(best.size());
  for (const auto& [key, p] : best) out.push_back(p);
  return out;
}

std::string symmetry_json(const std::vector<DetectedSymmetry>& symmetries, const std::vector<SymmetryPair>& pairs) {
  nlohmann::ordered_json doc;
  doc["symmetries"] = nlohmann::ordered_json::array();
  for (const auto& s : symmetries) {
    nlohmann::ordered_json j;
    std::vector<double> m;
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) m.push_back(s.transform.rotation(r, c));
      m.push_back(s.transform.translation[r]);
    }
    j["transform"] = m;
    j["kind"] = s.transform.kind() == SymmetryKind::Rotational ? "rotational" : "reflective";
    j["rmsd"] = s.rmsd;
    j["coverage"] = s.coverage;
    j["component_pairs"] = s.component_pairs;
    doc["symmetries"].push_back(j);
  }
  doc["pairs"] = nlohmann::ordered_json::array();
  for (const auto& p : pairs) {
    nlohmann::ordered_json j;
    j["f"] = p.f;
    j["f_prime"] = p.f_prime;
    j["s"] = p.s;
    j["transform"] = p.transform;
    doc["pairs"].push_back(j);
  }
  return doc.dump(2);
}

void read_symmetry_json(const std::string& text, std::vector<DetectedSymmetry>& symmetries,
                        std::vector<SymmetryPair>& pairs) {
  try {
    const auto doc = nlohmann::json::parse(text);
    symmetries.clear();
    pairs.clear();
    for (const auto& j : doc.at("symmetries")) {
      DetectedSymmetry s;
      const auto m = j.at("transform").get<std::vector<double>>();
      if (m.size() != 12) throw Error(ErrorKind::MalformedInput, "transform needs 12 numbers");
      for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 3; ++c) s.transform.rotation(r, c) = m[r * 4 + c];
        s.transform.translation[r] = m[r * 4 + 3];
      }
      s.rmsd = j.value("rmsd", 0.0);
      s.coverage = j.value("coverage", 0.0);
      s.component_pairs = j.at("component_pairs").get<std::vector<std::pair<int, int>>>();
      symmetries.push_back(std::move(s));
    }
    for (const auto& j : doc.at("pairs"))
      pairs.push_back({j.at("f").get<int>(), j.at("f_prime").get<int>(), j.at("s").get<double>(),
                       j.at("transform").get<int>()});
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::MalformedInput, std::string("symmetry document: ") + e.what());
  }
}

}  // namespace shapemat
