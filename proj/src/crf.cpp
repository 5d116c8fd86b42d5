#include "shapemat/crf.hpp"

#include <algorithm>
#include <cmath>
#include <json.hpp>
#include <limits>
#include <string>

#include "shapemat/error.hpp"
#include "shapemat/kdtree.hpp"
#include "shapemat/parallel.hpp"

namespace shapemat {

std::string_view family_name(Family f) {
  switch (f) {
    case Family::Adjacency: return "adjacency";
    case Family::Distance: return "distance";
    case Family::Symmetry: return "symmetry";
  }
  return "?";
}

CrfWeights CrfWeights::constant(double value) {
  CrfWeights w;
  for (auto& per_material : w.w)
    for (auto& fw : per_material) fw = FactorWeights{value, value, value, value};
  return w;
}

Eigen::VectorXd CrfWeights::flatten() const {
  Eigen::VectorXd v(kNumParams);
  for (int m = 0; m < kNumMaterials; ++m)
    for (int t = 0; t < kNumFamilies; ++t) {
      const auto& fw = w[m][t];
      const int base = param_index(m, static_cast<Family>(t), 0);
      v[base + 0] = fw.scale;
      v[base + 1] = fw.same0;
      v[base + 2] = fw.same1;
      v[base + 3] = fw.differ;
    }
  return v;
}

CrfWeights CrfWeights::unflatten(const Eigen::VectorXd& v) {
  if (v.size() != kNumParams) throw Error(ErrorKind::MalformedInput, "CRF weight vector has wrong length");
  CrfWeights out;
  for (int m = 0; m < kNumMaterials; ++m)
    for (int t = 0; t < kNumFamilies; ++t) {
      const int base = param_index(m, static_cast<Family>(t), 0);
      out.w[m][t] = FactorWeights{v[base], v[base + 1], v[base + 2], v[base + 3]};
    }
  return out;
}

void CrfWeights::project() {
  for (auto& per_material : w)
    for (auto& fw : per_material) {
      fw.scale = std::max(0.0, fw.scale);
      fw.same0 = std::max(0.0, fw.same0);
      fw.same1 = std::max(0.0, fw.same1);
      fw.differ = std::max(0.0, fw.differ);
    }
}

CrfGraph make_crf_graph(Eigen::MatrixXd unary, std::array<std::vector<CrfEdge>, kNumFamilies> edges,
                        const CrfWeights& weights) {
  if (unary.rows() < 1 || unary.rows() > kNumMaterials)
    throw Error(ErrorKind::MalformedInput, "unary table needs 1..5 material rows");
  CrfGraph g;
  g.num_faces = static_cast<int>(unary.cols());
  g.unary = unary.cwiseMax(kUnaryClamp).cwiseMin(1.0 - kUnaryClamp);
  for (const auto& list : edges)
    for (const auto& e : list) {
      if (e.a < 0 || e.b < 0 || e.a >= g.num_faces || e.b >= g.num_faces || e.a == e.b)
        throw Error(ErrorKind::MalformedInput, "CRF edge references an invalid face");
      if (!(e.coef >= 0.0 && e.coef <= 1.0)) throw Error(ErrorKind::MalformedInput, "CRF edge coefficient outside [0, 1]");
    }
  g.edges = std::move(edges);
  g.weights = weights;
  return g;
}

CrfGraph build_crf(const LabeledMesh& mesh, std::span<const SurfaceSample> samples, const Eigen::MatrixXd& probs,
                   const FaceAdjacency& adjacency, std::span<const DistancePair> dist_pairs,
                   std::span<const SymmetryPair> sym_pairs, const CrfWeights& weights) {
  if (samples.empty() || probs.rows() == 0) throw Error(ErrorKind::MissingUnaries, "no unary samples");
  if (probs.rows() != static_cast<Eigen::Index>(samples.size()) || probs.cols() != kNumMaterials)
    throw Error(ErrorKind::Alignment, "unary table must be samples x 5");

  std::vector<Vec3> positions;
  positions.reserve(samples.size());
  for (const auto& s : samples) positions.push_back(s.position);
  const KdTree3 tree(positions);

  Eigen::MatrixXd unary(kNumMaterials, mesh.num_faces());
  for (int f = 0; f < mesh.num_faces(); ++f) {
    const int nearest = tree.nearest(mesh.face_centroids()[f]);
    unary.col(f) = probs.row(nearest).transpose();
  }

  std::array<std::vector<CrfEdge>, kNumFamilies> edges;
  for (const auto& p : adjacency.pairs) edges[0].push_back({p.a, p.b, p.omega});
  for (const auto& p : dist_pairs) edges[1].push_back({p.f, p.f_prime, p.d});
  for (const auto& p : sym_pairs) edges[2].push_back({p.f, p.f_prime, p.s});
  return make_crf_graph(std::move(unary), std::move(edges), weights);
}

CrfGraph extract_material(const CrfGraph& graph, int material) {
  CrfGraph g;
  g.num_faces = graph.num_faces;
  g.unary = graph.unary.row(material);
  g.edges = graph.edges;
  g.weights = graph.weights;
  g.weights.w[0] = graph.weights.w[material];
  return g;
}

// ---------------------------------------------------------------------------
// Mean field

namespace {

// Incident edges per face across all families, in both directions.
struct Neighborhood {
  struct Entry {
    int other;
    int family;
    double coef;
  };
  std::vector<int> offsets;
  std::vector<Entry> entries;

  explicit Neighborhood(const CrfGraph& g) {
    std::vector<int> degree(g.num_faces, 0);
    for (const auto& list : g.edges)
      for (const auto& e : list) {
        ++degree[e.a];
        ++degree[e.b];
      }
    offsets.assign(g.num_faces + 1, 0);
    for (int f = 0; f < g.num_faces; ++f) offsets[f + 1] = offsets[f] + degree[f];
    entries.resize(offsets.back());
    std::vector<int> fill(offsets.begin(), offsets.end() - 1);
    for (int t = 0; t < kNumFamilies; ++t)
      for (const auto& e : g.edges[t]) {
        entries[fill[e.a]++] = {e.b, t, e.coef};
        entries[fill[e.b]++] = {e.a, t, e.coef};
      }
  }
};

double entropy_term(double q) {
  double h = 0.0;
  if (q > 0.0) h += q * std::log(q);
  if (q < 1.0) h += (1.0 - q) * std::log1p(-q);
  return h;
}

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// Mean-field for one material row; fills q and the free-energy trace.
struct MaterialRun {
  Eigen::VectorXd q;
  std::vector<double> free_energy;
  bool converged = false;
  int iterations = 0;
};

MaterialRun run_material(const CrfGraph& g, const Neighborhood& nb, int m, const MeanFieldOptions& options) {
  const int n = g.num_faces;
  MaterialRun run;
  run.q = g.unary.row(m).transpose();

  // Per-family log-potential pieces for this material.
  struct Table {
    double scale, same0, same1, differ;
  };
  std::array<Table, kNumFamilies> tab;
  for (int t = 0; t < kNumFamilies; ++t) {
    const auto& fw = g.weights.at(m, static_cast<Family>(t));
    tab[t] = {fw.scale, fw.same0, fw.same1, fw.differ};
  }

  Eigen::VectorXd logit(n);
  for (int f = 0; f < n; ++f) logit[f] = std::log(g.unary(m, f)) - std::log1p(-g.unary(m, f));

  Eigen::VectorXd target(n), candidate(n);
  double energy = free_energy(g, m, run.q);
  run.free_energy.push_back(energy);

  for (int it = 0; it < options.max_iter; ++it) {
    // Coordinate-wise optimum given the previous sweep's beliefs.
    for (int f = 0; f < n; ++f) {
      double h = logit[f];
      for (int k = nb.offsets[f]; k < nb.offsets[f + 1]; ++k) {
        const auto& e = nb.entries[k];
        const auto& w = tab[e.family];
        const double c2 = e.coef * e.coef;
        const double l00 = -w.scale * w.same0 * c2;
        const double l11 = -w.scale * w.same1 * c2;
        const double ld = -w.scale * w.differ * (1.0 - c2);
        const double qo = run.q[e.other];
        h += qo * (l11 - ld) + (1.0 - qo) * (ld - l00);
      }
      target[f] = sigmoid(h);
    }

    // Damped step; halve it while the free energy would rise.
    double step = options.damping;
    bool accepted = false;
    double next_energy = energy;
    for (int attempt = 0; attempt < 30; ++attempt) {
      candidate = run.q + step * (target - run.q);
      next_energy = free_energy(g, m, candidate);
      if (next_energy <= energy + 1e-13 * std::max(1.0, std::abs(energy))) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    run.iterations = it + 1;
    if (!accepted) {
      // No descent available at machine precision: treat as a fixed point.
      run.converged = true;
      run.free_energy.push_back(energy);
      break;
    }
    const double change = (candidate - run.q).cwiseAbs().maxCoeff();
    run.q.swap(candidate);
    energy = std::min(energy, next_energy);
    run.free_energy.push_back(next_energy);
    if (change < options.tol) {
      run.converged = true;
      break;
    }
  }
  return run;
}

}  // namespace

double free_energy(const CrfGraph& g, int m, const Eigen::VectorXd& q) {
  double energy = 0.0;
  for (int f = 0; f < g.num_faces; ++f) {
    const double u = g.unary(m, f);
    energy += entropy_term(q[f]) - q[f] * std::log(u) - (1.0 - q[f]) * std::log1p(-u);
  }
  for (int t = 0; t < kNumFamilies; ++t) {
    const auto fam = static_cast<Family>(t);
    for (const auto& e : g.edges[t]) {
      const double qa = q[e.a], qb = q[e.b];
      const double l00 = g.log_potential(m, fam, e.coef, 0, 0);
      const double l11 = g.log_potential(m, fam, e.coef, 1, 1);
      const double ld = g.log_potential(m, fam, e.coef, 0, 1);
      energy -= (1 - qa) * (1 - qb) * l00 + qa * qb * l11 + ((1 - qa) * qb + qa * (1 - qb)) * ld;
    }
  }
  return energy;
}

double free_energy(const CrfGraph& g, const Eigen::MatrixXd& q) {
  double total = 0.0;
  for (int m = 0; m < g.num_materials(); ++m) total += free_energy(g, m, q.row(m).transpose());
  return total;
}

Marginals mean_field_infer(const CrfGraph& graph, const MeanFieldOptions& options) {
  const Neighborhood nb(graph);
  const int nm = graph.num_materials();
  std::vector<MaterialRun> runs(nm);
  // Factors only couple variables of the same material.
  parallel_for(nm, [&](std::size_t m) { runs[m] = run_material(graph, nb, static_cast<int>(m), options); });

  Marginals out;
  out.q.resize(nm, graph.num_faces);
  out.converged = true;
  std::size_t longest = 0;
  for (int m = 0; m < nm; ++m) {
    out.q.row(m) = runs[m].q.transpose();
    out.converged = out.converged && runs[m].converged;
    out.iterations = std::max(out.iterations, runs[m].iterations);
    longest = std::max(longest, runs[m].free_energy.size());
  }
  out.free_energy.assign(longest, 0.0);
  for (const auto& r : runs)
    for (std::size_t i = 0; i < longest; ++i) out.free_energy[i] += r.free_energy[std::min(i, r.free_energy.size() - 1)];
  return out;
}

// ---------------------------------------------------------------------------
// Exact oracle

double log_score(const CrfGraph& g, const LabelMatrix& labels) {
  double s = 0.0;
  for (int m = 0; m < g.num_materials(); ++m) {
    for (int f = 0; f < g.num_faces; ++f) s += std::log(labels(m, f) ? g.unary(m, f) : 1.0 - g.unary(m, f));
    for (int t = 0; t < kNumFamilies; ++t)
      for (const auto& e : g.edges[t])
        s += g.log_potential(m, static_cast<Family>(t), e.coef, labels(m, e.a), labels(m, e.b));
  }
  return s;
}

ExactInference exact_inference(const CrfGraph& g) {
  const int nm = g.num_materials(), nf = g.num_faces, nv = nm * nf;
  if (nv > kOracleMaxVariables)
    throw Error(ErrorKind::OracleSize, std::to_string(nv) + " variables exceed the enumeration limit");

  // Precompute log unaries and per-edge 2x2 log-potential tables.
  std::vector<std::array<double, 2>> lu(nv);
  for (int m = 0; m < nm; ++m)
    for (int f = 0; f < nf; ++f) lu[m * nf + f] = {std::log(1.0 - g.unary(m, f)), std::log(g.unary(m, f))};
  struct PairTable {
    int a, b;
    double l[2][2];
  };
  std::vector<PairTable> tables;
  for (int m = 0; m < nm; ++m)
    for (int t = 0; t < kNumFamilies; ++t)
      for (const auto& e : g.edges[t]) {
        PairTable pt{m * nf + e.a, m * nf + e.b, {}};
        for (int l = 0; l < 2; ++l)
          for (int lp = 0; lp < 2; ++lp) pt.l[l][lp] = g.log_potential(m, static_cast<Family>(t), e.coef, l, lp);
        tables.push_back(pt);
      }

  const std::uint64_t states = 1ull << nv;
  std::vector<double> logw(states);
  double max_logw = -std::numeric_limits<double>::infinity();
  for (std::uint64_t x = 0; x < states; ++x) {
    double s = 0.0;
    for (int v = 0; v < nv; ++v) s += lu[v][(x >> v) & 1];
    for (const auto& pt : tables) s += pt.l[(x >> pt.a) & 1][(x >> pt.b) & 1];
    logw[x] = s;
    max_logw = std::max(max_logw, s);
  }
  double z = 0.0;
  std::vector<double> on(nv, 0.0);
  for (std::uint64_t x = 0; x < states; ++x) {
    const double w = std::exp(logw[x] - max_logw);
    z += w;
    for (int v = 0; v < nv; ++v)
      if ((x >> v) & 1) on[v] += w;
  }
  ExactInference out;
  out.marginals.resize(nm, nf);
  for (int m = 0; m < nm; ++m)
    for (int f = 0; f < nf; ++f) out.marginals(m, f) = on[m * nf + f] / z;
  out.log_partition = max_logw + std::log(z);
  return out;
}

Marginals brute_force_marginals(const CrfGraph& graph) {
  Marginals out;
  out.q = exact_inference(graph).marginals;
  out.converged = true;
  return out;
}

double exact_log_likelihood(const CrfGraph& graph, const LabelMatrix& labels) {
  return log_score(graph, labels) - exact_inference(graph).log_partition;
}

// ---------------------------------------------------------------------------
// Training

LikelihoodGradient mean_field_gradient(const CrfGraph& g, const LabelMatrix& labels, const MeanFieldOptions& options) {
  const auto marg = mean_field_infer(g, options);
  LikelihoodGradient out;
  out.gradient = Eigen::VectorXd::Zero(CrfWeights::kNumParams);

  for (int m = 0; m < g.num_materials(); ++m) {
    for (int t = 0; t < kNumFamilies; ++t) {
      const auto fam = static_cast<Family>(t);
      const auto& fw = g.weights.at(m, fam);
      const int base = CrfWeights::param_index(m, fam, 0);
      for (const auto& e : g.edges[t]) {
        const double c2 = e.coef * e.coef;
        // d log phi(l, l') / d scale and / d table(l, l') for each label pair.
        auto accumulate = [&](int l, int lp, double weight) {
          const double shape = l == lp ? c2 : 1.0 - c2;
          const int slot = l != lp ? 3 : (l == 0 ? 1 : 2);
          out.gradient[base] += weight * -fw.table(l, lp) * shape;
          out.gradient[base + slot] += weight * -fw.scale * shape;
        };
        accumulate(labels(m, e.a), labels(m, e.b), 1.0);
        const double qa = marg.q(m, e.a), qb = marg.q(m, e.b);
        accumulate(0, 0, -(1 - qa) * (1 - qb));
        accumulate(1, 1, -qa * qb);
        accumulate(0, 1, -(1 - qa) * qb);
        accumulate(1, 0, -qa * (1 - qb));
      }
    }
  }
  out.approx_log_likelihood = log_score(g, labels) + free_energy(g, marg.q);
  return out;
}

CrfTrainResult train_crf(std::vector<TrainingShape> dataset, const CrfWeights& init, const CrfTrainOptions& options) {
  if (dataset.empty()) throw Error(ErrorKind::MissingData, "CRF training needs at least one shape");
  for (const auto& s : dataset)
    if (s.labels.rows() != s.graph.num_materials() || s.labels.cols() != s.graph.num_faces)
      throw Error(ErrorKind::Alignment, "training labels do not match graph shape");

  CrfTrainResult result;
  result.weights = init;
  const double inv = 1.0 / static_cast<double>(dataset.size());
  std::vector<LikelihoodGradient> per_shape(dataset.size());

  for (int it = 0; it < options.iterations; ++it) {
    for (auto& s : dataset) s.graph.weights = result.weights;
    parallel_for(dataset.size(), [&](std::size_t i) {
      per_shape[i] = mean_field_gradient(dataset[i].graph, dataset[i].labels, options.inference);
    });
    Eigen::VectorXd grad = Eigen::VectorXd::Zero(CrfWeights::kNumParams);
    double ll = 0.0;
    for (const auto& g : per_shape) {
      grad += g.gradient;
      ll += g.approx_log_likelihood;
    }
    result.trace.push_back(ll * inv);
    auto next = CrfWeights::unflatten(result.weights.flatten() + options.learning_rate * inv * grad);
    next.project();
    result.weights = next;
  }
  return result;
}

LabelMatrix face_label_matrix(const LabeledMesh& mesh) {
  LabelMatrix labels = LabelMatrix::Zero(kNumMaterials, mesh.num_faces());
  for (int f = 0; f < mesh.num_faces(); ++f) {
    const auto set = mesh.face_labels(f);
    if (set.empty()) throw Error(ErrorKind::MissingData, "face " + std::to_string(f) + " has no ground-truth label");
    for (Material m : set.materials()) labels(index_of(m), f) = 1;
  }
  return labels;
}

std::vector<FacePrediction> predict_labels(const Marginals& marginals, double threshold) {
  const int nm = static_cast<int>(marginals.q.rows());
  std::vector<FacePrediction> out(marginals.q.cols());
  for (Eigen::Index f = 0; f < marginals.q.cols(); ++f) {
    int best = 0;
    for (int m = 1; m < nm; ++m)
      if (marginals.q(m, f) > marginals.q(best, f)) best = m;
    auto& p = out[f];
    p.top1 = static_cast<Material>(best);
    for (int m = 0; m < nm; ++m)
      if (marginals.q(m, f) >= threshold) p.label_set.insert(static_cast<Material>(m));
    if (p.label_set.empty()) p.label_set.insert(p.top1);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Interchange

namespace {
constexpr const char* kWeightsFormat = "shapemat-crf-weights/1";
}

Eigen::MatrixXd read_unaries_jsonl(std::istream& in, int num_samples) {
  Eigen::MatrixXd probs = Eigen::MatrixXd::Constant(num_samples, kNumMaterials, -1.0);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      const int idx = j.at("sample_index").get<int>();
      if (idx < 0 || idx >= num_samples)
        throw Error(ErrorKind::Alignment, "unary line " + std::to_string(line_no) + ": sample index out of range");
      const auto& p = j.at("probs");
      for (Material m : kAllMaterials) probs(idx, index_of(m)) = p.at(std::string(material_name(m))).get<double>();
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorKind::MalformedInput, "unary line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  if ((probs.array() < 0.0).any()) throw Error(ErrorKind::MissingUnaries, "some samples have no unary record");
  return probs;
}

void write_unaries_jsonl(std::ostream& out, const Eigen::MatrixXd& probs) {
  for (Eigen::Index i = 0; i < probs.rows(); ++i) {
    nlohmann::ordered_json j;
    j["sample_index"] = i;
    nlohmann::ordered_json p;
    for (Material m : kAllMaterials) p[std::string(material_name(m))] = probs(i, index_of(m));
    j["probs"] = p;
    out << j.dump() << '\n';
  }
}

std::string weights_json(const CrfWeights& weights) {
  nlohmann::ordered_json doc;
  doc["format"] = kWeightsFormat;
  nlohmann::ordered_json mats;
  for (Material m : kAllMaterials) {
    nlohmann::ordered_json fams;
    for (int t = 0; t < kNumFamilies; ++t) {
      const auto& fw = weights.w[index_of(m)][t];
      fams[std::string(family_name(static_cast<Family>(t)))] = {
          {"scale", fw.scale}, {"same0", fw.same0}, {"same1", fw.same1}, {"differ", fw.differ}};
    }
    mats[std::string(material_name(m))] = fams;
  }
  doc["materials"] = mats;
  return doc.dump(2);
}

CrfWeights parse_weights_json(const std::string& text) {
  try {
    const auto doc = nlohmann::json::parse(text);
    if (doc.at("format").get<std::string>() != kWeightsFormat)
      throw Error(ErrorKind::MalformedInput, "unsupported weights format tag");
    CrfWeights w;
    for (Material m : kAllMaterials) {
      const auto& fams = doc.at("materials").at(std::string(material_name(m)));
      for (int t = 0; t < kNumFamilies; ++t) {
        const auto& j = fams.at(std::string(family_name(static_cast<Family>(t))));
        w.w[index_of(m)][t] = {j.at("scale").get<double>(), j.at("same0").get<double>(), j.at("same1").get<double>(),
                               j.at("differ").get<double>()};
      }
    }
    return w;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::MalformedInput, std::string("weights document: ") + e.what());
  }
}

void write_face_predictions_jsonl(std::ostream& out, const std::vector<FacePrediction>& predictions,
                                  const Marginals& marginals) {
  for (std::size_t f = 0; f < predictions.size(); ++f) {
    nlohmann::ordered_json j;
    j["face"] = f;
    j["top1"] = material_name(predictions[f].top1);
    j["label_set"] = predictions[f].label_set.names();
    nlohmann::ordered_json q;
    for (int m = 0; m < marginals.q.rows(); ++m)
      q[std::string(material_name(static_cast<Material>(m)))] = marginals.q(m, static_cast<Eigen::Index>(f));
    j["marginals"] = q;
    out << j.dump() << '\n';
  }
}

}  // namespace shapemat
