#pragma once

#include <Eigen/Core>
#include <array>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "shapemat/geodesics.hpp"
#include "shapemat/material.hpp"
#include "shapemat/mesh.hpp"
#include "shapemat/sampling.hpp"
#include "shapemat/symmetry.hpp"

namespace shapemat {

enum class Family : int { Adjacency = 0, Distance = 1, Symmetry = 2 };
inline constexpr int kNumFamilies = 3;
std::string_view family_name(Family f);

/// Weights of one pairwise family for one material: the family scale
/// (w_{m,a}, w_{m,d} or w_{m,s}) and a symmetric 2x2 label table.
struct FactorWeights {
  double scale = 1.0;
  double same0 = 1.0;   // table(0, 0)
  double same1 = 1.0;   // table(1, 1)
  double differ = 1.0;  // table(0, 1) == table(1, 0)

  double table(int l, int lp) const { return l != lp ? differ : (l == 0 ? same0 : same1); }
};

struct CrfWeights {
  static constexpr int kPerFamily = 4;
  static constexpr int kNumParams = kNumMaterials * kNumFamilies * kPerFamily;

  std::array<std::array<FactorWeights, kNumFamilies>, kNumMaterials> w{};

  static CrfWeights constant(double value);
  static CrfWeights ones() { return constant(1.0); }

  FactorWeights& at(int material, Family f) { return w[material][static_cast<int>(f)]; }
  const FactorWeights& at(int material, Family f) const { return w[material][static_cast<int>(f)]; }

  /// Layout: ((material * 3 + family) * 4 + {scale, same0, same1, differ}).
  Eigen::VectorXd flatten() const;
  static CrfWeights unflatten(const Eigen::VectorXd& v);
  static int param_index(int material, Family f, int slot) {
    return (material * kNumFamilies + static_cast<int>(f)) * kPerFamily + slot;
  }
  /// Clamp every weight to >= 0.
  void project();
};

struct CrfEdge {
  int a = 0;
  int b = 0;
  /// omega, d or s depending on the family; in [0, 1].
  double coef = 0.0;
};

inline constexpr double kUnaryClamp = 1e-6;

/// Binary CRF over (material, face) variables. Row m of `unary` holds the
/// clamped probability that C_{m,f} = 1. Row m uses weights.w[m].
struct CrfGraph {
  int num_faces = 0;
  Eigen::MatrixXd unary;
  std::array<std::vector<CrfEdge>, kNumFamilies> edges;
  CrfWeights weights = CrfWeights::ones();

  int num_materials() const { return static_cast<int>(unary.rows()); }
  int num_variables() const { return num_materials() * num_faces; }

  /// log phi_t(C_{m,f} = l, C_{m,f'} = lp) for an edge with coefficient c.
  double log_potential(int material, Family f, double coef, int l, int lp) const {
    const auto& fw = weights.at(material, f);
    const double c2 = coef * coef;
    return -fw.scale * fw.table(l, lp) * (l == lp ? c2 : 1.0 - c2);
  }
};

/// Clamps `unary` into [kUnaryClamp, 1 - kUnaryClamp] and validates edges.
CrfGraph make_crf_graph(Eigen::MatrixXd unary, std::array<std::vector<CrfEdge>, kNumFamilies> edges,
                        const CrfWeights& weights);

/// `probs` is samples x materials. Each face takes the unaries of the sample
/// nearest its centroid.
CrfGraph build_crf(const LabeledMesh& mesh, std::span<const SurfaceSample> samples, const Eigen::MatrixXd& probs,
                   const FaceAdjacency& adjacency, std::span<const DistancePair> dist_pairs,
                   std::span<const SymmetryPair> sym_pairs, const CrfWeights& weights);

/// Single-material graph holding row `material` of `graph` (and its weights as row 0).
CrfGraph extract_material(const CrfGraph& graph, int material);

struct Marginals {
  /// q(C_{m,f} = 1), materials x faces.
  Eigen::MatrixXd q;
  bool converged = false;
  int iterations = 0;
  /// Variational free energy after each sweep (summed over materials).
  std::vector<double> free_energy;
};

struct MeanFieldOptions {
  int max_iter = 200;
  double tol = 1e-6;
  double damping = 0.5;
};

Marginals mean_field_infer(const CrfGraph& graph, const MeanFieldOptions& options = {});

/// Free energy sum_f [q log q - q log u] - sum_edges E_q[log phi] of one material row.
double free_energy(const CrfGraph& graph, int material, const Eigen::VectorXd& q);
double free_energy(const CrfGraph& graph, const Eigen::MatrixXd& q);

inline constexpr int kOracleMaxVariables = 20;

struct ExactInference {
  Eigen::MatrixXd marginals;
  double log_partition = 0.0;
};

/// Enumerates every joint assignment; at most kOracleMaxVariables variables.
ExactInference exact_inference(const CrfGraph& graph);
Marginals brute_force_marginals(const CrfGraph& graph);

/// Labels are materials x faces with entries in {0, 1}.
using LabelMatrix = Eigen::MatrixXi;

/// Unnormalized log-probability of a full labeling.
double log_score(const CrfGraph& graph, const LabelMatrix& labels);
double exact_log_likelihood(const CrfGraph& graph, const LabelMatrix& labels);

struct LikelihoodGradient {
  Eigen::VectorXd gradient;  // CrfWeights::flatten layout
  /// log_score(labels) + free energy: the mean-field estimate of log P(labels).
  double approx_log_likelihood = 0.0;
};

/// Data term minus mean-field estimate of the model expectation.
LikelihoodGradient mean_field_gradient(const CrfGraph& graph, const LabelMatrix& labels,
                                       const MeanFieldOptions& options = {});

struct TrainingShape {
  CrfGraph graph;
  LabelMatrix labels;
};

struct CrfTrainOptions {
  /// The log-likelihood gradient grows with the edge count, so full meshes
  /// (~10^4 edges) need a far smaller step than tiny graphs.
  double learning_rate = 1e-5;
  int iterations = 10;
  MeanFieldOptions inference;
};

struct CrfTrainResult {
  CrfWeights weights;
  /// Mean approximate log-likelihood at the start of each iteration.
  std::vector<double> trace;
};

CrfTrainResult train_crf(std::vector<TrainingShape> dataset, const CrfWeights& init, const CrfTrainOptions& options);

/// Per-face binary ground truth from component labels; every face must be labeled.
LabelMatrix face_label_matrix(const LabeledMesh& mesh);

struct FacePrediction {
  Material top1 = Material::Wood;
  MaterialLabelSet label_set;
};

std::vector<FacePrediction> predict_labels(const Marginals& marginals, double threshold = 0.5);

// Interchange.
Eigen::MatrixXd read_unaries_jsonl(std::istream& in, int num_samples);
void write_unaries_jsonl(std::ostream& out, const Eigen::MatrixXd& probs);
std::string weights_json(const CrfWeights& weights);
CrfWeights parse_weights_json(const std::string& text);
void write_face_predictions_jsonl(std::ostream& out, const std::vector<FacePrediction>& predictions,
                                  const Marginals& marginals);

}  // namespace shapemat
