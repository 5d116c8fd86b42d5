#pragma once

#include <Eigen/Core>
#include <array>
#include <cmath>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "shapemat/material.hpp"

namespace shapemat {

/// Contrastive margin M = sqrt(0.2) - 0.2.
inline const double kDefaultMargin = std::sqrt(0.2) - 0.2;

struct NetShape {
  int input = 64;
  int hidden1 = 128;
  int hidden2 = 64;
  int descriptor = 32;
  int classes = kNumMaterials;

  int num_params() const {
    return hidden1 * input + hidden1 + hidden2 * hidden1 + hidden2 + descriptor * hidden2 + descriptor +
           classes * descriptor + classes;
  }
};

/// input -> tanh(hidden1) -> tanh(hidden2) -> descriptor (L2-normalized)
/// -> sigmoid classification head. Parameters live in one flat vector:
/// W1, b1, W2, b2, W3, b3, Wc, bc (matrices column-major).
class DescriptorNet {
 public:
  struct Forward {
    Eigen::VectorXd input;  // standardized
    Eigen::VectorXd h1, h2;
    Eigen::VectorXd z;           // raw descriptor
    Eigen::VectorXd descriptor;  // z / |z|
    Eigen::VectorXd logits;
    Eigen::VectorXd probs;
  };

  DescriptorNet() = default;
  DescriptorNet(const NetShape& shape, std::uint64_t seed);

  const NetShape& shape() const { return shape_; }
  Eigen::VectorXd& params() { return params_; }
  const Eigen::VectorXd& params() const { return params_; }

  /// Per-feature standardization applied before the first layer.
  void set_standardization(Eigen::VectorXd mean, Eigen::VectorXd scale);
  const Eigen::VectorXd& input_mean() const { return mean_; }
  const Eigen::VectorXd& input_scale() const { return scale_; }

  /// Zeroes the classification layer (all outputs become 0.5).
  void zero_head();
  /// Parameter index range [begin, end) of the classification layer.
  std::pair<int, int> head_range() const;

  Forward forward(const Eigen::VectorXd& features) const;

  /// Accumulates d loss / d params into `grad` given upstream gradients with
  /// respect to the normalized descriptor and the head logits.
  void backward(const Forward& fw, const Eigen::VectorXd& grad_descriptor, const Eigen::VectorXd& grad_logits,
                Eigen::VectorXd& grad) const;

  std::string to_json() const;
  static DescriptorNet from_json(const std::string& text);

 private:
  NetShape shape_;
  Eigen::VectorXd params_;
  Eigen::VectorXd mean_;
  Eigen::VectorXd scale_;
};

struct PointPair {
  int p = 0;
  int q = 0;
  bool positive = false;
};

struct PairBatch {
  std::vector<PointPair> pairs;
  /// Combinations skipped because no valid pair could be drawn.
  int warnings = 0;
};

/// Draws positive and negative pairs 1:4, cycling through the five
/// same-material and ten distinct-material combinations. Negatives never
/// share a label; draws that do are rejected and redrawn.
class PairSampler {
 public:
  PairSampler(std::vector<MaterialLabelSet> labels, std::uint64_t seed, int negatives_per_positive = 4);

  PairBatch next(int n_pairs);

  static const std::array<std::pair<Material, Material>, 10>& negative_combinations();

 private:
  bool draw_positive(PointPair& out);
  bool draw_negative(PointPair& out, std::pair<Material, Material>* combo_used);

  std::vector<MaterialLabelSet> labels_;
  std::array<std::vector<int>, kNumMaterials> pools_;
  std::mt19937_64 rng_;
  int ratio_;
  std::vector<int> positive_cycle_, negative_cycle_;
  std::size_t positive_pos_ = 0, negative_pos_ = 0;
  int warnings_ = 0;
  unsigned warned_ = 0;  // negative combinations already reported
  long emitted_ = 0;
  long positives_emitted_ = 0;
};

PairBatch sample_pairs(const std::vector<MaterialLabelSet>& labels, int n_pairs, std::uint64_t seed);

struct LossWeights {
  double lambda_class = 0.016;
  double lambda_contr = 1.0;
  double margin = kDefaultMargin;
};

struct LossResult {
  double loss = 0.0;
  double class_term = 0.0;  // lambda_class * L_class
  double contr_term = 0.0;  // lambda_contr * L_contr
  Eigen::VectorXd gradient;
};

/// L = lambda_class * L_class + lambda_contr * L_contr over the points of
/// every pair. L_class is the binary cross-entropy (negative log-likelihood).
LossResult multitask_loss(const DescriptorNet& net, const Eigen::MatrixXd& features,
                          const std::vector<MaterialLabelSet>& labels, const std::vector<PointPair>& batch,
                          const LossWeights& weights);

double contrastive_term(const Eigen::VectorXd& fp, const Eigen::VectorXd& fq, bool positive, double margin);

enum class TrainVariant { Multitask, Classification, Contrastive };

LossWeights variant_weights(TrainVariant v);
TrainVariant parse_variant(const std::string& name);

struct DescriptorTrainOptions {
  TrainVariant variant = TrainVariant::Multitask;
  int epochs = 10;
  std::uint64_t seed = 1;
  double learning_rate = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  int batch_pairs = 5;
  /// Pairs drawn per epoch; <= 0 means one per training point.
  int pairs_per_epoch = 0;
  NetShape shape;
  double margin = kDefaultMargin;
  /// Override the variant's loss weights when set.
  std::optional<double> lambda_class;
  std::optional<double> lambda_contr;
  int negatives_per_positive = 4;
};

struct EpochLoss {
  double class_term = 0.0;
  double contr_term = 0.0;
  double total = 0.0;
};

struct DescriptorTrainResult {
  DescriptorNet net;
  std::vector<EpochLoss> trace;
};

/// Siamese training with Adam. The classification layer's gradient is scaled
/// by 1 / lambda_class so it always trains with an effective weight of 1.
DescriptorTrainResult train_descriptor(const Eigen::MatrixXd& features, const std::vector<MaterialLabelSet>& labels,
                                       const DescriptorTrainOptions& options);

struct PointPrediction {
  Eigen::VectorXd probs;
  Eigen::VectorXd descriptor;
};

PointPrediction predict_probs(const DescriptorNet& net, const Eigen::VectorXd& features);

/// {"sample_index": i, "features": [...]} per line.
void write_features_jsonl(std::ostream& out, const Eigen::MatrixXd& features);
Eigen::MatrixXd read_features_jsonl(std::istream& in);

/// {"sample_index": i, "probs": {material: p}, "descriptor": [...]} per line;
/// readable as unaries by the CRF stage.
void write_predictions_jsonl(std::ostream& out, const Eigen::MatrixXd& probs, const Eigen::MatrixXd& descriptors);
void read_predictions_jsonl(std::istream& in, Eigen::MatrixXd& probs, Eigen::MatrixXd& descriptors);

}  // namespace shapemat
