#include "shapemat/geodesics.hpp"

#include <algorithm>
#include <functional>
#include <json.hpp>
#include <limits>
#include <map>
#include <queue>
#include <random>
#include <string>

#include "shapemat/error.hpp"
#include "shapemat/parallel.hpp"

namespace shapemat {

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();

std::uint64_t mix(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}
}  // namespace

DualGraph dual_graph(const LabeledMesh& mesh, const FaceAdjacency& adjacency) {
  const int n = mesh.num_faces();
  const auto& centroids = mesh.face_centroids();
  std::vector<std::vector<std::pair<int, double>>> lists(n);
  for (const auto& p : adjacency.pairs) {
    const double w = (centroids[p.a] - centroids[p.b]).norm();
    lists[p.a].emplace_back(p.b, w);
    lists[p.b].emplace_back(p.a, w);
  }
  DualGraph g;
  g.offsets.reserve(n + 1);
  g.offsets.push_back(0);
  for (auto& l : lists) {
    std::sort(l.begin(), l.end());
    for (auto [t, w] : l) {
      g.targets.push_back(t);
      g.weights.push_back(w);
    }
    g.offsets.push_back(static_cast<int>(g.targets.size()));
  }
  return g;
}

std::vector<double> dijkstra(const DualGraph& graph, int source, double radius) {
  std::vector<double> dist(graph.num_nodes(), kInf);
  using Item = std::pair<double, int>;
  std::priority_queue<Item, std::vector<Item>, std::greater<>> heap;
  dist[source] = 0.0;
  heap.emplace(0.0, source);
  while (!heap.empty()) {
    auto [d, u] = heap.top();
    heap.pop();
    if (d > dist[u]) continue;
    for (int e = graph.offsets[u]; e < graph.offsets[u + 1]; ++e) {
      const int v = graph.targets[e];
      const double nd = d + graph.weights[e];
      if (nd < dist[v] && nd <= radius) {
        dist[v] = nd;
        heap.emplace(nd, v);
      }
    }
  }
  return dist;
}

double geodesic_diameter(const DualGraph& graph, const LabeledMesh& mesh, int seeds, std::uint64_t seed) {
  const int n = graph.num_nodes();
  if (n <= 1) return 1.0;
  const auto& centroids = mesh.face_centroids();
  std::mt19937_64 rng(seed);
  int current = std::uniform_int_distribution<int>(0, n - 1)(rng);
  std::vector<double> euclid(n, kInf);
  double diameter = 0.0;
  for (int s = 0; s < seeds; ++s) {
    const auto dist = dijkstra(graph, current, kInf);
    for (double d : dist)
      if (d < kInf) diameter = std::max(diameter, d);
    int next = current;
    double far = -1.0;
    for (int f = 0; f < n; ++f) {
      euclid[f] = std::min(euclid[f], (centroids[f] - centroids[current]).squaredNorm());
      if (euclid[f] > far) {
        far = euclid[f];
        next = f;
      }
    }
    if (far <= 0.0) break;
    current = next;
  }
  return diameter > 0.0 ? diameter : 1.0;
}

std::vector<DistancePair> geodesic_pairs(const LabeledMesh& mesh, const FaceAdjacency& adjacency,
                                         const GeodesicOptions& options, std::uint64_t seed) {
  if (!(options.rho > 0.0 && options.rho <= 1.0))
    throw Error(ErrorKind::MalformedInput, "rho must lie in (0, 1]");
  const DualGraph graph = dual_graph(mesh, adjacency);
  const int n = graph.num_nodes();
  const double diameter = geodesic_diameter(graph, mesh, options.diameter_seeds, seed);
  const double radius = options.rho * diameter;

  std::vector<std::vector<DistancePair>> per_source(n);
  parallel_for(n, [&](std::size_t src) {
    const int f = static_cast<int>(src);
    const auto dist = dijkstra(graph, f, radius);
    std::mt19937_64 rng(mix(seed ^ mix(static_cast<std::uint64_t>(f))));
    struct Candidate {
      double d;
      std::uint64_t tie;
      int face;
    };
    std::vector<Candidate> cands;
    for (int g = 0; g < n; ++g)
      if (g != f && dist[g] < kInf) cands.push_back({dist[g], rng(), g});
    std::sort(cands.begin(), cands.end(), [](const Candidate& a, const Candidate& b) {
      return a.d < b.d || (a.d == b.d && (a.tie < b.tie || (a.tie == b.tie && a.face < b.face)));
    });
    if (options.cap > 0 && static_cast<int>(cands.size()) > options.cap) cands.resize(options.cap);
    for (const auto& c : cands)
      per_source[f].push_back({std::min(f, c.face), std::max(f, c.face), std::min(1.0, c.d / diameter), true});
  });

  // Same pair reached from both ends: keep the smaller distance.
  std::map<std::pair<int, int>, double> merged;
  for (const auto& list : per_source)
    for (const auto& p : list) {
      auto [it, inserted] = merged.emplace(std::make_pair(p.f, p.f_prime), p.d);
      if (!inserted) it->second = std::min(it->second, p.d);
    }
  std::vector<DistancePair> out;
  out.reserve(merged.size());
  for (const auto& [key, d] : merged) out.push_back({key.first, key.second, d, true});
  return out;
}

std::vector<DistancePair> geodesic_pairs(const LabeledMesh& mesh, const GeodesicOptions& options,
                                         std::uint64_t seed) {
  return geodesic_pairs(mesh, compute_adjacency(mesh), options, seed);
}

void write_pairs_jsonl(std::ostream& out, const std::vector<DistancePair>& pairs) {
  for (const auto& p : pairs) {
    nlohmann::ordered_json j;
    j["f"] = p.f;
    j["f_prime"] = p.f_prime;
    j["d"] = p.d;
    out << j.dump() << '\n';
  }
}

std::vector<DistancePair> read_pairs_jsonl(std::istream& in) {
  std::vector<DistancePair> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      out.push_back({j.at("f").get<int>(), j.at("f_prime").get<int>(), j.at("d").get<double>(), true});
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorKind::MalformedInput, "pairs line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace shapemat
