#include "shapemat/sampling.hpp"

#include <algorithm>
#include <cmath>
#include <json.hpp>
#include <limits>
#include <numeric>
#include <random>
#include <string>

#include "shapemat/bvh.hpp"
#include "shapemat/error.hpp"
#include "shapemat/kdtree.hpp"
#include "shapemat/parallel.hpp"

namespace shapemat {

namespace {

class AreaSampler {
 public:
  explicit AreaSampler(const LabeledMesh& mesh) : mesh_(mesh) {
    if (!(mesh.total_area() > 0.0)) throw Error(ErrorKind::EmptyMesh, "mesh has zero surface area");
    dist_ = std::discrete_distribution<int>(mesh.face_areas().begin(), mesh.face_areas().end());
  }

  SurfaceSample draw(std::mt19937_64& rng) {
    SurfaceSample s;
    s.face = dist_(rng);
    const double r1 = std::sqrt(unit_(rng));
    const double r2 = unit_(rng);
    s.barycentric = Vec3(1.0 - r1, r1 * (1.0 - r2), r1 * r2);
    s.position = mesh_.point_at(s.face, s.barycentric);
    s.normal = mesh_.face_normals()[s.face];
    s.labels = mesh_.face_labels(s.face);
    return s;
  }

 private:
  const LabeledMesh& mesh_;
  std::discrete_distribution<int> dist_;
  std::uniform_real_distribution<double> unit_{0.0, 1.0};
};

// Distance from `p` to the nearest sample other than `self`.
double clearance(const KdTree3& tree, const Vec3& p, int self) {
  for (int i : tree.k_nearest(p, 2))
    if (i != self) return (tree.point(i) - p).norm();
  return std::numeric_limits<double>::infinity();
}

}  // namespace

std::vector<SurfaceSample> sample_area_weighted(const LabeledMesh& mesh, int n, std::uint64_t seed) {
  if (n < 1) throw Error(ErrorKind::MalformedInput, "sample count must be at least 1");
  AreaSampler sampler(mesh);
  std::mt19937_64 rng(seed);
  std::vector<SurfaceSample> out;
  out.reserve(n);
  for (int i = 0; i < n; ++i) out.push_back(sampler.draw(rng));
  return out;
}

void relax_samples(const LabeledMesh& mesh, std::vector<SurfaceSample>& samples, const SamplingOptions& options,
                   std::uint64_t seed) {
  const int n = static_cast<int>(samples.size());
  if (n < 2) return;
  AreaSampler sampler(mesh);
  std::mt19937_64 rng(seed ^ 0x9E3779B97F4A7C15ull);
  const int per_pass = std::max(1, static_cast<int>(std::ceil(options.relax_fraction * n)));

  for (int pass = 0; pass < options.relax_iterations; ++pass) {
    std::vector<Vec3> positions(n);
    for (int i = 0; i < n; ++i) positions[i] = samples[i].position;
    const KdTree3 tree(positions);

    std::vector<double> nn(n);
    for (int i = 0; i < n; ++i) nn[i] = clearance(tree, positions[i], i);
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return nn[a] < nn[b]; });

    for (int r = 0; r < per_pass; ++r) {
      const int i = order[r];
      double best_gap = nn[i];
      for (int c = 0; c < options.relax_candidates; ++c) {
        SurfaceSample cand = sampler.draw(rng);
        const double gap = clearance(tree, cand.position, i);
        if (gap > best_gap) {
          best_gap = gap;
          samples[i] = std::move(cand);
        }
      }
    }
  }
}

std::vector<SurfaceSample> sample_surface_points(const LabeledMesh& mesh, int n, std::uint64_t seed,
                                                 const SamplingOptions& options) {
  auto samples = sample_area_weighted(mesh, n, seed);
  relax_samples(mesh, samples, options, seed);
  return samples;
}

std::vector<Vec3> sphere_directions(int count) {
  std::vector<Vec3> dirs;
  dirs.reserve(count);
  const double golden = M_PI * (3.0 - std::sqrt(5.0));
  for (int i = 0; i < count; ++i) {
    const double y = 1.0 - 2.0 * (i + 0.5) / count;
    const double r = std::sqrt(std::max(0.0, 1.0 - y * y));
    const double phi = golden * i;
    dirs.emplace_back(r * std::cos(phi), y, r * std::sin(phi));
  }
  return dirs;
}

std::vector<SurfaceSample> mark_visibility(const LabeledMesh& mesh, std::vector<SurfaceSample> samples,
                                           const VisibilityOptions& options) {
  const TriangleBvh bvh(mesh);
  const auto dirs = sphere_directions(options.rays);
  const double offset = options.offset * mesh.bounding_sphere().radius;
  parallel_for(samples.size(), [&](std::size_t i) {
    auto& s = samples[i];
    const Vec3 origin = s.position + offset * s.normal;
    s.visible = std::any_of(dirs.begin(), dirs.end(), [&](const Vec3& d) { return !bvh.occluded(origin, d); });
  });
  return samples;
}

std::vector<SurfaceSample> visibility_filter(const LabeledMesh& mesh, std::vector<SurfaceSample> samples,
                                             const VisibilityOptions& options) {
  auto marked = mark_visibility(mesh, std::move(samples), options);
  std::erase_if(marked, [](const SurfaceSample& s) { return !s.visible; });
  return marked;
}

SubsampleResult subsample_even(const std::vector<SurfaceSample>& samples, int k, std::uint64_t seed) {
  SubsampleResult result;
  const int n = static_cast<int>(samples.size());
  if (k > n) {
    result.samples = samples;
    result.warning = true;
    return result;
  }
  if (k <= 0) return result;

  std::mt19937_64 rng(seed);
  int current = std::uniform_int_distribution<int>(0, n - 1)(rng);
  std::vector<double> dist(n, std::numeric_limits<double>::infinity());
  std::vector<char> taken(n, 0);
  result.samples.reserve(k);
  for (int pick = 0; pick < k; ++pick) {
    result.samples.push_back(samples[current]);
    taken[current] = 1;
    int next = -1;
    double far = -1.0;
    for (int i = 0; i < n; ++i) {
      if (taken[i]) continue;
      dist[i] = std::min(dist[i], (samples[i].position - samples[current].position).squaredNorm());
      if (dist[i] > far) {
        far = dist[i];
        next = i;
      }
    }
    current = next;
  }
  return result;
}

std::vector<SurfaceSample> labeled_only(const std::vector<SurfaceSample>& samples) {
  std::vector<SurfaceSample> out;
  for (const auto& s : samples)
    if (!s.labels.empty()) out.push_back(s);
  return out;
}

void write_samples_jsonl(std::ostream& out, const std::vector<SurfaceSample>& samples) {
  for (const auto& s : samples) {
    nlohmann::ordered_json j;
    j["position"] = {s.position.x(), s.position.y(), s.position.z()};
    j["face"] = s.face;
    j["barycentric"] = {s.barycentric.x(), s.barycentric.y(), s.barycentric.z()};
    j["normal"] = {s.normal.x(), s.normal.y(), s.normal.z()};
    j["labels"] = s.labels.names();
    j["visible"] = s.visible;
    out << j.dump() << '\n';
  }
}

std::vector<SurfaceSample> read_samples_jsonl(std::istream& in) {
  std::vector<SurfaceSample> out;
  std::string line;
  int line_no = 0;
  auto vec3 = [](const nlohmann::json& a) { return Vec3(a.at(0).get<double>(), a.at(1).get<double>(), a.at(2).get<double>()); };
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      SurfaceSample s;
      s.position = vec3(j.at("position"));
      s.face = j.at("face").get<int>();
      s.barycentric = vec3(j.at("barycentric"));
      if (j.contains("normal")) s.normal = vec3(j.at("normal"));
      s.labels = MaterialLabelSet::from_names(j.value("labels", std::vector<std::string>{}));
      s.visible = j.value("visible", true);
      out.push_back(std::move(s));
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorKind::MalformedInput, "samples line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace shapemat
