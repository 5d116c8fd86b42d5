#pragma once

#include <cstdint>
#include <iosfwd>
#include <vector>

#include "shapemat/mesh.hpp"

namespace shapemat {

/// Face dual graph in CSR form: one node per face, one undirected edge per
/// adjacent face pair weighted by centroid distance.
struct DualGraph {
  std::vector<int> offsets;  // size num_nodes + 1
  std::vector<int> targets;
  std::vector<double> weights;

  int num_nodes() const { return static_cast<int>(offsets.size()) - 1; }
  int num_edges() const { return static_cast<int>(targets.size()) / 2; }
};

struct DistancePair {
  int f = 0;
  int f_prime = 0;
  /// Geodesic distance normalized by the shape's geodesic diameter.
  double d = 0.0;
  bool same_component = true;
};

struct GeodesicOptions {
  double rho = 0.1;
  /// Pairs kept per source face; <= 0 means unbounded.
  int cap = 16;
  int diameter_seeds = 8;
};

DualGraph dual_graph(const LabeledMesh& mesh, const FaceAdjacency& adjacency);

/// Single-source shortest paths; entries beyond `radius` stay infinite.
std::vector<double> dijkstra(const DualGraph& graph, int source, double radius);

/// Max finite shortest-path length over runs from farthest-point seed faces.
double geodesic_diameter(const DualGraph& graph, const LabeledMesh& mesh, int seeds, std::uint64_t seed);

std::vector<DistancePair> geodesic_pairs(const LabeledMesh& mesh, const FaceAdjacency& adjacency,
                                         const GeodesicOptions& options, std::uint64_t seed);
std::vector<DistancePair> geodesic_pairs(const LabeledMesh& mesh, const GeodesicOptions& options,
                                         std::uint64_t seed);

void write_pairs_jsonl(std::ostream& out, const std::vector<DistancePair>& pairs);
std::vector<DistancePair> read_pairs_jsonl(std::istream& in);

}  // namespace shapemat
