#include "shapemat/descriptor_net.hpp"

#include <algorithm>
#include <iostream>
#include <json.hpp>
#include <numeric>

#include "shapemat/error.hpp"

namespace shapemat {

namespace {

constexpr const char* kNetFormat = "shapemat-descriptor-net/1";

using MapM = Eigen::Map<Eigen::MatrixXd>;
using CMapM = Eigen::Map<const Eigen::MatrixXd>;
using MapV = Eigen::Map<Eigen::VectorXd>;
using CMapV = Eigen::Map<const Eigen::VectorXd>;

struct Offsets {
  int w1, b1, w2, b2, w3, b3, wc, bc, end;
};

Offsets offsets(const NetShape& s) {
  Offsets o{};
  o.w1 = 0;
  o.b1 = o.w1 + s.hidden1 * s.input;
  o.w2 = o.b1 + s.hidden1;
  o.b2 = o.w2 + s.hidden2 * s.hidden1;
  o.w3 = o.b2 + s.hidden2;
  o.b3 = o.w3 + s.descriptor * s.hidden2;
  o.wc = o.b3 + s.descriptor;
  o.bc = o.wc + s.classes * s.descriptor;
  o.end = o.bc + s.classes;
  return o;
}

// log(1 + exp(x)) without overflow.
double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

DescriptorNet::DescriptorNet(const NetShape& shape, std::uint64_t seed) : shape_(shape) {
  if (shape.input <= 0 || shape.hidden1 <= 0 || shape.hidden2 <= 0 || shape.descriptor <= 0 || shape.classes <= 0)
    throw Error(ErrorKind::MalformedInput, "network layer sizes must be positive");
  params_ = Eigen::VectorXd::Zero(shape.num_params());
  mean_ = Eigen::VectorXd::Zero(shape.input);
  scale_ = Eigen::VectorXd::Ones(shape.input);
  std::mt19937_64 rng(seed);
  const Offsets o = offsets(shape);
  auto fill = [&](int begin, int count, double stddev) {
    std::normal_distribution<double> dist(0.0, stddev);
    for (int i = 0; i < count; ++i) params_[begin + i] = dist(rng);
  };
  fill(o.w1, shape.hidden1 * shape.input, std::sqrt(1.0 / shape.input));
  fill(o.w2, shape.hidden2 * shape.hidden1, std::sqrt(1.0 / shape.hidden1));
  fill(o.w3, shape.descriptor * shape.hidden2, std::sqrt(1.0 / shape.hidden2));
  fill(o.wc, shape.classes * shape.descriptor, 0.01);
}

void DescriptorNet::set_standardization(Eigen::VectorXd mean, Eigen::VectorXd scale) {
  if (mean.size() != shape_.input || scale.size() != shape_.input)
    throw Error(ErrorKind::Alignment, "standardization size does not match network input");
  mean_ = std::move(mean);
  scale_ = std::move(scale);
}

void DescriptorNet::zero_head() {
  const auto [b, e] = head_range();
  params_.segment(b, e - b).setZero();
}

std::pair<int, int> DescriptorNet::head_range() const {
  const Offsets o = offsets(shape_);
  return {o.wc, o.end};
}

DescriptorNet::Forward DescriptorNet::forward(const Eigen::VectorXd& features) const {
  const NetShape& s = shape_;
  if (features.size() != s.input) throw Error(ErrorKind::Alignment, "feature vector has the wrong length");
  const Offsets o = offsets(s);
  const double* p = params_.data();
  Forward fw;
  fw.input = (features - mean_).cwiseQuotient(scale_);
  fw.h1 = (CMapM(p + o.w1, s.hidden1, s.input) * fw.input + CMapV(p + o.b1, s.hidden1)).array().tanh().matrix();
  fw.h2 = (CMapM(p + o.w2, s.hidden2, s.hidden1) * fw.h1 + CMapV(p + o.b2, s.hidden2)).array().tanh().matrix();
  fw.z = CMapM(p + o.w3, s.descriptor, s.hidden2) * fw.h2 + CMapV(p + o.b3, s.descriptor);
  const double n = fw.z.norm();
  fw.descriptor = n > 0 ? Eigen::VectorXd(fw.z / n) : Eigen::VectorXd::Unit(s.descriptor, 0);
  fw.logits = CMapM(p + o.wc, s.classes, s.descriptor) * fw.descriptor + CMapV(p + o.bc, s.classes);
  fw.probs = fw.logits.unaryExpr([](double x) { return sigmoid(x); });
  return fw;
}

void DescriptorNet::backward(const Forward& fw, const Eigen::VectorXd& grad_descriptor,
                             const Eigen::VectorXd& grad_logits, Eigen::VectorXd& grad) const {
  const NetShape& s = shape_;
  const Offsets o = offsets(s);
  if (grad.size() != params_.size()) grad = Eigen::VectorXd::Zero(params_.size());
  const double* p = params_.data();
  double* g = grad.data();

  MapM(g + o.wc, s.classes, s.descriptor).noalias() += grad_logits * fw.descriptor.transpose();
  MapV(g + o.bc, s.classes) += grad_logits;
  const Eigen::VectorXd gf = grad_descriptor + CMapM(p + o.wc, s.classes, s.descriptor).transpose() * grad_logits;

  const double n = fw.z.norm();
  if (n <= 0) return;
  const Eigen::VectorXd gz = (gf - fw.descriptor * fw.descriptor.dot(gf)) / n;
  MapM(g + o.w3, s.descriptor, s.hidden2).noalias() += gz * fw.h2.transpose();
  MapV(g + o.b3, s.descriptor) += gz;

  const Eigen::VectorXd ga2 = (CMapM(p + o.w3, s.descriptor, s.hidden2).transpose() * gz)
                                  .cwiseProduct((1.0 - fw.h2.array().square()).matrix());
  MapM(g + o.w2, s.hidden2, s.hidden1).noalias() += ga2 * fw.h1.transpose();
  MapV(g + o.b2, s.hidden2) += ga2;

  const Eigen::VectorXd ga1 = (CMapM(p + o.w2, s.hidden2, s.hidden1).transpose() * ga2)
                                  .cwiseProduct((1.0 - fw.h1.array().square()).matrix());
  MapM(g + o.w1, s.hidden1, s.input).noalias() += ga1 * fw.input.transpose();
  MapV(g + o.b1, s.hidden1) += ga1;
}

std::string DescriptorNet::to_json() const {
  nlohmann::ordered_json doc;
  doc["format"] = kNetFormat;
  doc["layers"] = {shape_.input, shape_.hidden1, shape_.hidden2, shape_.descriptor, shape_.classes};
  doc["input_mean"] = std::vector<double>(mean_.data(), mean_.data() + mean_.size());
  doc["input_scale"] = std::vector<double>(scale_.data(), scale_.data() + scale_.size());
  doc["params"] = std::vector<double>(params_.data(), params_.data() + params_.size());
  return doc.dump();
}

DescriptorNet DescriptorNet::from_json(const std::string& text) {
  try {
    const auto doc = nlohmann::json::parse(text);
    if (doc.at("format").get<std::string>() != kNetFormat)
      throw Error(ErrorKind::MalformedInput, "not a descriptor network checkpoint");
    const auto layers = doc.at("layers").get<std::vector<int>>();
    if (layers.size() != 5) throw Error(ErrorKind::MalformedInput, "checkpoint must list 5 layer sizes");
    DescriptorNet net;
    net.shape_ = NetShape{layers[0], layers[1], layers[2], layers[3], layers[4]};
    const auto params = doc.at("params").get<std::vector<double>>();
    if (static_cast<int>(params.size()) != net.shape_.num_params())
      throw Error(ErrorKind::MalformedInput, "checkpoint parameter count does not match layer sizes");
    net.params_ = CMapV(params.data(), static_cast<Eigen::Index>(params.size()));
    const auto mean = doc.at("input_mean").get<std::vector<double>>();
    const auto scale = doc.at("input_scale").get<std::vector<double>>();
    if (static_cast<int>(mean.size()) != layers[0] || static_cast<int>(scale.size()) != layers[0])
      throw Error(ErrorKind::MalformedInput, "checkpoint standardization has the wrong length");
    net.mean_ = CMapV(mean.data(), layers[0]);
    net.scale_ = CMapV(scale.data(), layers[0]);
    return net;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::MalformedInput, std::string("checkpoint: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Pair sampling

const std::array<std::pair<Material, Material>, 10>& PairSampler::negative_combinations() {
  static const auto combos = [] {
    std::array<std::pair<Material, Material>, 10> out{};
    int k = 0;
    for (int a = 0; a < kNumMaterials; ++a)
      for (int b = a + 1; b < kNumMaterials; ++b) out[k++] = {kAllMaterials[a], kAllMaterials[b]};
    return out;
  }();
  return combos;
}

PairSampler::PairSampler(std::vector<MaterialLabelSet> labels, std::uint64_t seed, int negatives_per_positive)
    : labels_(std::move(labels)), rng_(seed), ratio_(negatives_per_positive) {
  if (ratio_ < 0) throw Error(ErrorKind::MalformedInput, "negative pair ratio must be non-negative");
  for (int i = 0; i < static_cast<int>(labels_.size()); ++i)
    for (Material m : labels_[i].materials()) pools_[index_of(m)].push_back(i);
}

bool PairSampler::draw_positive(PointPair& out) {
  for (int attempt = 0; attempt < kNumMaterials; ++attempt) {
    if (positive_pos_ == positive_cycle_.size()) {
      positive_cycle_.resize(kNumMaterials);
      std::iota(positive_cycle_.begin(), positive_cycle_.end(), 0);
      std::shuffle(positive_cycle_.begin(), positive_cycle_.end(), rng_);
      positive_pos_ = 0;
    }
    const auto& pool = pools_[positive_cycle_[positive_pos_++]];
    if (pool.size() < 2) {
      ++warnings_;
      continue;
    }
    std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
    const std::size_t a = pick(rng_);
    std::size_t b = pick(rng_);
    while (b == a) b = pick(rng_);
    out = {pool[a], pool[b], true};
    return true;
  }
  return false;
}

bool PairSampler::draw_negative(PointPair& out, std::pair<Material, Material>* combo_used) {
  const auto& combos = negative_combinations();
  for (int attempt = 0; attempt < static_cast<int>(combos.size()); ++attempt) {
    if (negative_pos_ == negative_cycle_.size()) {
      negative_cycle_.resize(combos.size());
      std::iota(negative_cycle_.begin(), negative_cycle_.end(), 0);
      std::shuffle(negative_cycle_.begin(), negative_cycle_.end(), rng_);
      negative_pos_ = 0;
    }
    const auto combo = combos[negative_cycle_[negative_pos_++]];
    const auto& pa = pools_[index_of(combo.first)];
    const auto& pb = pools_[index_of(combo.second)];
    if (!pa.empty() && !pb.empty()) {
      std::uniform_int_distribution<std::size_t> pick_a(0, pa.size() - 1), pick_b(0, pb.size() - 1);
      for (int tries = 0; tries < 1000; ++tries) {
        const int a = pa[pick_a(rng_)];
        const int b = pb[pick_b(rng_)];
        if (labels_[a].intersects(labels_[b])) continue;
        out = {a, b, false};
        if (combo_used) *combo_used = combo;
        return true;
      }
    }
    ++warnings_;
    const int slot = negative_cycle_[negative_pos_ - 1];
    if (!(warned_ & (1u << slot)))
      std::cerr << "warning: no " << material_name(combo.first) << "/" << material_name(combo.second)
                << " negative pair without shared labels; skipped\n";
    warned_ |= 1u << slot;
  }
  return false;
}

PairBatch PairSampler::next(int n_pairs) {
  PairBatch batch;
  const int before = warnings_;
  for (int i = 0; i < n_pairs; ++i) {
    const bool positive = emitted_ % (ratio_ + 1) == 0;
    ++emitted_;
    PointPair pair;
    const bool ok = positive ? draw_positive(pair) : draw_negative(pair, nullptr);
    if (ok) batch.pairs.push_back(pair);
  }
  batch.warnings = warnings_ - before;
  return batch;
}

PairBatch sample_pairs(const std::vector<MaterialLabelSet>& labels, int n_pairs, std::uint64_t seed) {
  PairSampler sampler(labels, seed);
  return sampler.next(n_pairs);
}

// ---------------------------------------------------------------------------
// Loss

double contrastive_term(const Eigen::VectorXd& fp, const Eigen::VectorXd& fq, bool positive, double margin) {
  const double d = (fp - fq).norm();
  if (positive) return d * d;
  const double h = std::max(margin - d, 0.0);
  return h * h;
}

LossResult multitask_loss(const DescriptorNet& net, const Eigen::MatrixXd& features,
                          const std::vector<MaterialLabelSet>& labels, const std::vector<PointPair>& batch,
                          const LossWeights& weights) {
  if (batch.empty()) throw Error(ErrorKind::MissingData, "empty pair batch");
  if (weights.margin <= 0) throw Error(ErrorKind::MalformedInput, "contrastive margin must be positive");
  const int classes = net.shape().classes;
  LossResult out;
  out.gradient = Eigen::VectorXd::Zero(net.params().size());
  double l_class = 0.0, l_contr = 0.0;

  auto class_part = [&](const DescriptorNet::Forward& fw, int point, Eigen::VectorXd& grad_logits) {
    const MaterialLabelSet& truth = labels.at(point);
    for (int m = 0; m < classes; ++m) {
      const double p = fw.probs[m];
      const double logit = fw.logits[m];
      const double t = m < kNumMaterials ? truth.indicator(kAllMaterials[m]) : 0.0;
      // -[t log p + (1-t) log(1-p)] in terms of the logit.
      l_class += t * softplus(-logit) + (1.0 - t) * softplus(logit);
      grad_logits[m] = weights.lambda_class * (p - t);
    }
  };

  for (const PointPair& pair : batch) {
    const auto fp = net.forward(features.row(pair.p).transpose());
    const auto fq = net.forward(features.row(pair.q).transpose());
    Eigen::VectorXd gl_p(classes), gl_q(classes);
    class_part(fp, pair.p, gl_p);
    class_part(fq, pair.q, gl_q);

    Eigen::VectorXd gd_p = Eigen::VectorXd::Zero(fp.descriptor.size());
    const Eigen::VectorXd diff = fp.descriptor - fq.descriptor;
    const double d = diff.norm();
    if (pair.positive) {
      l_contr += d * d;
      gd_p = 2.0 * diff;
    } else if (d < weights.margin) {
      const double h = weights.margin - d;
      l_contr += h * h;
      if (d > 0) gd_p = -2.0 * h / d * diff;
    }
    gd_p *= weights.lambda_contr;
    const Eigen::VectorXd gd_q = -gd_p;
    net.backward(fp, gd_p, gl_p, out.gradient);
    net.backward(fq, gd_q, gl_q, out.gradient);
  }
  out.class_term = weights.lambda_class * l_class;
  out.contr_term = weights.lambda_contr * l_contr;
  out.loss = out.class_term + out.contr_term;
  return out;
}

LossWeights variant_weights(TrainVariant v) {
  switch (v) {
    case TrainVariant::Multitask: return {0.016, 1.0, kDefaultMargin};
    case TrainVariant::Classification: return {1.0, 0.0, kDefaultMargin};
    case TrainVariant::Contrastive: return {0.0, 1.0, kDefaultMargin};
  }
  return {};
}

TrainVariant parse_variant(const std::string& name) {
  if (name == "multitask") return TrainVariant::Multitask;
  if (name == "classification") return TrainVariant::Classification;
  if (name == "contrastive") return TrainVariant::Contrastive;
  throw Error(ErrorKind::MalformedInput, "unknown training variant '" + name + "'");
}

// ---------------------------------------------------------------------------
// Training

DescriptorTrainResult train_descriptor(const Eigen::MatrixXd& features, const std::vector<MaterialLabelSet>& labels,
                                       const DescriptorTrainOptions& options) {
  if (features.rows() == 0 || labels.empty()) throw Error(ErrorKind::MissingData, "empty descriptor training set");
  if (features.rows() != static_cast<Eigen::Index>(labels.size()))
    throw Error(ErrorKind::Alignment, "feature rows and labels differ in length");
  NetShape shape = options.shape;
  shape.input = static_cast<int>(features.cols());

  DescriptorTrainResult result;
  result.net = DescriptorNet(shape, options.seed);
  const Eigen::VectorXd mean = features.colwise().mean().transpose();
  Eigen::VectorXd scale = ((features.rowwise() - mean.transpose()).array().square().colwise().mean()).sqrt().transpose();
  for (Eigen::Index i = 0; i < scale.size(); ++i)
    if (!(scale[i] > 1e-12)) scale[i] = 1.0;
  result.net.set_standardization(mean, scale);

  LossWeights lw = variant_weights(options.variant);
  lw.margin = options.margin;
  if (options.lambda_class) lw.lambda_class = *options.lambda_class;
  if (options.lambda_contr) lw.lambda_contr = *options.lambda_contr;
  const auto [head_begin, head_end] = result.net.head_range();
  const double head_scale = lw.lambda_class > 0 && lw.lambda_class < 1 ? 1.0 / lw.lambda_class : 1.0;

  PairSampler sampler(labels, options.seed ^ 0x9E3779B97F4A7C15ULL, options.negatives_per_positive);
  const int per_epoch = options.pairs_per_epoch > 0 ? options.pairs_per_epoch : static_cast<int>(features.rows());
  const int batch_pairs = std::max(1, options.batch_pairs);

  Eigen::VectorXd& w = result.net.params();
  Eigen::VectorXd m1 = Eigen::VectorXd::Zero(w.size()), m2 = Eigen::VectorXd::Zero(w.size());
  long step = 0;
  for (int epoch = 0; epoch < options.epochs; ++epoch) {
    EpochLoss acc;
    int batches = 0;
    for (int drawn = 0; drawn < per_epoch; drawn += batch_pairs) {
      const PairBatch batch = sampler.next(std::min(batch_pairs, per_epoch - drawn));
      if (batch.pairs.empty()) continue;
      LossResult lr = multitask_loss(result.net, features, labels, batch.pairs, lw);
      acc.class_term += lr.class_term;
      acc.contr_term += lr.contr_term;
      acc.total += lr.loss;
      ++batches;
      lr.gradient.segment(head_begin, head_end - head_begin) *= head_scale;

      ++step;
      m1 = options.beta1 * m1 + (1.0 - options.beta1) * lr.gradient;
      m2 = options.beta2 * m2 + (1.0 - options.beta2) * lr.gradient.cwiseAbs2();
      const double c1 = 1.0 - std::pow(options.beta1, static_cast<double>(step));
      const double c2 = 1.0 - std::pow(options.beta2, static_cast<double>(step));
      w.array() -= options.learning_rate * (m1.array() / c1) / ((m2.array() / c2).sqrt() + 1e-8);
    }
    if (batches > 0) {
      acc.class_term /= batches;
      acc.contr_term /= batches;
      acc.total /= batches;
    }
    result.trace.push_back(acc);
  }
  return result;
}

PointPrediction predict_probs(const DescriptorNet& net, const Eigen::VectorXd& features) {
  auto fw = net.forward(features);
  return {std::move(fw.probs), std::move(fw.descriptor)};
}

// ---------------------------------------------------------------------------
// Interchange

namespace {

// Reads indexed JSON-lines rows; every index in [0, n) must appear once.
template <typename Fn>
int read_indexed_lines(std::istream& in, const char* what, Fn&& on_row) {
  std::string line;
  int line_no = 0, count = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      const int idx = j.at("sample_index").get<int>();
      if (idx != count)
        throw Error(ErrorKind::Alignment,
                    std::string(what) + " line " + std::to_string(line_no) + ": sample indices must be consecutive");
      on_row(j);
      ++count;
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorKind::MalformedInput, std::string(what) + " line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return count;
}

Eigen::MatrixXd stack_rows(const std::vector<std::vector<double>>& rows, const char* what) {
  if (rows.empty()) return {};
  Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows[0].size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != rows[0].size())
      throw Error(ErrorKind::MalformedInput, std::string(what) + " rows differ in length");
    for (std::size_t k = 0; k < rows[i].size(); ++k) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = rows[i][k];
  }
  return m;
}

}  // namespace

void write_features_jsonl(std::ostream& out, const Eigen::MatrixXd& features) {
  for (Eigen::Index i = 0; i < features.rows(); ++i) {
    nlohmann::ordered_json j;
    j["sample_index"] = i;
    j["features"] = std::vector<double>(features.row(i).begin(), features.row(i).end());
    out << j.dump() << '\n';
  }
}

Eigen::MatrixXd read_features_jsonl(std::istream& in) {
  std::vector<std::vector<double>> rows;
  read_indexed_lines(in, "features", [&](const nlohmann::json& j) { rows.push_back(j.at("features").get<std::vector<double>>()); });
  return stack_rows(rows, "feature");
}

void write_predictions_jsonl(std::ostream& out, const Eigen::MatrixXd& probs, const Eigen::MatrixXd& descriptors) {
  for (Eigen::Index i = 0; i < probs.rows(); ++i) {
    nlohmann::ordered_json j;
    j["sample_index"] = i;
    nlohmann::ordered_json p;
    for (Material m : kAllMaterials) p[std::string(material_name(m))] = probs(i, index_of(m));
    j["probs"] = p;
    j["descriptor"] = std::vector<double>(descriptors.row(i).begin(), descriptors.row(i).end());
    out << j.dump() << '\n';
  }
}

void read_predictions_jsonl(std::istream& in, Eigen::MatrixXd& probs, Eigen::MatrixXd& descriptors) {
  std::vector<std::vector<double>> p_rows, d_rows;
  read_indexed_lines(in, "prediction", [&](const nlohmann::json& j) {
    std::vector<double> row;
    for (Material m : kAllMaterials) row.push_back(j.at("probs").at(std::string(material_name(m))).get<double>());
    p_rows.push_back(std::move(row));
    d_rows.push_back(j.at("descriptor").get<std::vector<double>>());
  });
  probs = stack_rows(p_rows, "probability");
  descriptors = stack_rows(d_rows, "descriptor");
}

}  // namespace shapemat
