#pragma once

#include <filesystem>
#include <optional>
#include <random>
#include <sstream>
#include <string>

#include "shapemat/crf.hpp"
#include "shapemat/error.hpp"
#include "shapemat/mesh.hpp"

namespace fixtures {

// Unit cube split into "top" (the +Y face) and "rest".
inline const char* kCubeObj = R"(v 0 0 0
v 1 0 0
v 1 1 0
v 0 1 0
v 0 0 1
v 1 0 1
v 1 1 1
v 0 1 1
g top
f 4 8 7 3
g rest
f 1 2 6 5
f 1 4 3 2
f 5 6 7 8
f 1 5 8 4
f 2 3 7 6
)";

inline shapemat::LabeledMesh parse(const std::string& text) {
  std::istringstream in(text);
  return shapemat::parse_obj(in);
}

inline shapemat::LabeledMesh cube() { return parse(kCubeObj); }

// Fresh empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("shapemat_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

// Random graph over `faces` faces with `materials` rows. Pairwise scale
// weights are drawn from [0, max_scale]; tables from [0, 1].
inline shapemat::CrfGraph random_graph(std::mt19937_64& rng, int materials, int faces, double max_scale,
                                       double edge_prob = 0.4) {
  using namespace shapemat;
  std::uniform_real_distribution<double> u(0.05, 0.95), unit(0.0, 1.0), sc(0.0, max_scale);
  Eigen::MatrixXd unary(materials, faces);
  for (int m = 0; m < materials; ++m)
    for (int f = 0; f < faces; ++f) unary(m, f) = u(rng);
  std::array<std::vector<CrfEdge>, kNumFamilies> edges;
  for (int t = 0; t < kNumFamilies; ++t)
    for (int a = 0; a < faces; ++a)
      for (int b = a + 1; b < faces; ++b)
        if (unit(rng) < edge_prob) edges[t].push_back({a, b, unit(rng)});
  CrfWeights w;
  for (auto& per : w.w)
    for (auto& fw : per) fw = FactorWeights{sc(rng), unit(rng), unit(rng), unit(rng)};
  return make_crf_graph(unary, edges, w);
}

template <typename F>
std::optional<shapemat::ErrorKind> error_kind(F&& f) {
  try {
    f();
  } catch (const shapemat::Error& e) {
    return e.kind();
  }
  return std::nullopt;
}



// Tiny training problem: one material, `faces` faces in two runs of equal
// labels, noisy unaries that point at the truth with probability 0.75, a
// chain of adjacency edges plus random distance and symmetry edges.
struct TinyProblem {
  shapemat::CrfGraph graph;
  shapemat::LabelMatrix labels;
};

inline TinyProblem noisy_tiny_problem(std::mt19937_64& rng, int faces = 5) {
  using namespace shapemat;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<int> cut(1, faces - 1);
  const int split = cut(rng);
  LabelMatrix labels(1, faces);
  for (int f = 0; f < faces; ++f) labels(0, f) = f < split ? 1 : 0;
  Eigen::MatrixXd unary(1, faces);
  for (int f = 0; f < faces; ++f) {
    const bool right = unit(rng) < 0.75;
    const double p = 0.6 + 0.3 * unit(rng);
    unary(0, f) = (labels(0, f) == 1) == right ? p : 1.0 - p;
  }
  std::array<std::vector<CrfEdge>, kNumFamilies> edges;
  for (int f = 0; f + 1 < faces; ++f) edges[0].push_back({f, f + 1, 0.3 * unit(rng)});
  for (int a = 0; a < faces; ++a)
    for (int b = a + 2; b < faces; ++b)
      if (unit(rng) < 0.3) edges[1].push_back({a, b, unit(rng)});
  for (int a = 0; a < faces; ++a)
    for (int b = a + 1; b < faces; ++b)
      if (unit(rng) < 0.2) edges[2].push_back({a, b, 0.2 * unit(rng)});
  return {make_crf_graph(unary, edges, CrfWeights::ones()), labels};
}

// Weakly coupled graph at all-ones weights: edge coefficients keep c^2 within
// 1e-5 of 1/2, where the same-label and different-label potentials nearly
// cancel. The scale-weight gradients shrink with that gap too, so a wider
// band lets mean-field bias swamp them. Labels oppose the unary argmax so the
// table-weight gradients are far from zero.
inline TinyProblem weak_tiny_problem(std::mt19937_64& rng, int materials, int faces) {
  using namespace shapemat;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Eigen::MatrixXd unary(materials, faces);
  LabelMatrix labels(materials, faces);
  for (int m = 0; m < materials; ++m)
    for (int f = 0; f < faces; ++f) {
      unary(m, f) = 0.1 + 0.8 * unit(rng);
      labels(m, f) = unary(m, f) < 0.5 ? 1 : 0;
    }
  std::array<std::vector<CrfEdge>, kNumFamilies> edges;
  for (int t = 0; t < kNumFamilies; ++t)
    for (int a = 0; a < faces; ++a)
      for (int b = a + 1; b < faces; ++b)
        if (unit(rng) < 0.5) edges[t].push_back({a, b, std::sqrt(0.5 + 1e-5 * (2.0 * unit(rng) - 1.0))});
  return {make_crf_graph(unary, edges, CrfWeights::ones()), labels};
}

}  // namespace fixtures
