#include <doctest.h>

#include <cmath>
#include <map>
#include <random>
#include <sstream>

#include "fixtures.hpp"
#include "oracles/finite_diff.hpp"
#include "shapemat/descriptor_net.hpp"
#include "shapemat/features.hpp"

using namespace shapemat;

namespace {

// Flat square [-1,1]^2 at y = 0 as an n x n grid.
std::string plane_obj(int n) {
  std::ostringstream o;
  for (int i = 0; i <= n; ++i)
    for (int j = 0; j <= n; ++j) o << "v " << -1.0 + 2.0 * j / n << " 0 " << -1.0 + 2.0 * i / n << "\n";
  o << "g plane\n";
  auto v = [&](int i, int j) { return i * (n + 1) + j + 1; };
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) o << "f " << v(i, j) << " " << v(i + 1, j) << " " << v(i + 1, j + 1) << " " << v(i, j + 1) << "\n";
  return o.str();
}

// Closed regular k-gon prism of radius r along y in [0, h], centred at (cx, cz).
std::string prism_obj(int k, double r, double h, double cx, double cz, int first, const std::string& group) {
  std::ostringstream o;
  for (int y = 0; y < 2; ++y)
    for (int i = 0; i < k; ++i) {
      const double a = 2.0 * M_PI * i / k;
      o << "v " << cx + r * std::cos(a) << " " << y * h << " " << cz + r * std::sin(a) << "\n";
    }
  o << "g " << group << "\n";
  for (int i = 0; i < k; ++i) {
    const int j = (i + 1) % k;
    o << "f " << first + i << " " << first + k + i << " " << first + k + j << " " << first + j << "\n";
  }
  o << "f";
  for (int i = 0; i < k; ++i) o << " " << first + i;
  o << "\nf";
  for (int i = k - 1; i >= 0; --i) o << " " << first + k + i;
  o << "\n";
  return o.str();
}

SurfaceSample at_face(const LabeledMesh& mesh, int face) {
  SurfaceSample s;
  s.face = face;
  s.position = mesh.face_centroids()[face];
  s.normal = mesh.face_normals()[face];
  return s;
}

struct Dataset {
  Eigen::MatrixXd features;
  std::vector<MaterialLabelSet> labels;
};

Dataset random_dataset(std::mt19937_64& rng, int n, int dim) {
  std::normal_distribution<double> g;
  std::uniform_int_distribution<int> m(0, kNumMaterials - 1);
  Dataset d{Eigen::MatrixXd(n, dim), {}};
  for (int i = 0; i < n; ++i) {
    for (int k = 0; k < dim; ++k) d.features(i, k) = g(rng);
    MaterialLabelSet s{kAllMaterials[m(rng)]};
    if (i % 4 == 0) s.insert(kAllMaterials[m(rng)]);
    d.labels.push_back(s);
  }
  return d;
}

const NetShape kSmall{6, 7, 5, 4, kNumMaterials};

}  // namespace

TEST_CASE("flat plane neighbourhoods are planar and isotropic at every radius") {
  const auto mesh = fixtures::parse(plane_obj(8));
  SurfaceSample s;
  s.position = Vec3::Zero();
  s.normal = Vec3::UnitY();
  s.face = 0;
  for (int f = 0; f < mesh.num_faces(); ++f)
    if ((mesh.face_centroids()[f] - s.position).norm() < (mesh.face_centroids()[s.face] - s.position).norm()) s.face = f;
  const auto x = extract_point_features(mesh, s);
  for (int r = 0; r < 3; ++r) {
    const auto block = x.segment(r * kPerRadiusFeatures, kPerRadiusFeatures);
    CHECK(block[0] == 1.0);
    CHECK(block[1] > 0.75);
    CHECK(block[2] < 1e-12);
  }
}

TEST_CASE("inward thickness separates a thin leg from a thick slab") {
  // Slab 2 x 0.6 x 2 above an octagonal leg of apothem ~0.037.
  const std::string obj = prism_obj(4, std::sqrt(2.0), 0.6, 0, 0, 1, "slab") + prism_obj(8, 0.04, 0.6, 3, 0, 9, "leg");
  auto mesh = fixtures::parse(obj);
  const FeatureExtractor fx(mesh);
  const int slab_top = mesh.components()[0].faces.back();
  const int leg_side = mesh.components()[1].faces.front();
  REQUIRE(mesh.face_normals()[slab_top].y() > 0.99);
  REQUIRE(std::abs(mesh.face_normals()[leg_side].y()) < 1e-9);
  const double slab = fx.thickness(at_face(mesh, slab_top));
  const double leg = fx.thickness(at_face(mesh, leg_side));
  CHECK(slab == doctest::Approx(0.6).epsilon(1e-3));
  CHECK(leg == doctest::Approx(2 * 0.04 * std::cos(M_PI / 8)).epsilon(1e-2));
  CHECK(slab >= 5 * leg);
  const double radius = mesh.bounding_sphere().radius;
  const auto xs = fx.extract(at_face(mesh, slab_top));
  const auto xl = fx.extract(at_face(mesh, leg_side));
  CHECK(xs[3 * kPerRadiusFeatures + 2] == doctest::Approx(slab / radius));
  CHECK(xs[3 * kPerRadiusFeatures + 2] >= 5 * xl[3 * kPerRadiusFeatures + 2]);
}

TEST_CASE("features are deterministic and finite") {
  auto mesh = fixtures::cube();
  const auto samples = sample_area_weighted(mesh, 20, 3);
  const auto a = extract_features(mesh, samples);
  const auto b = extract_features(mesh, samples);
  CHECK(a.rows() == 20);
  CHECK(a.cols() == kFeatureDim);
  CHECK(a == b);
  CHECK(a.allFinite());
}

TEST_CASE("contrastive term examples") {
  Eigen::VectorXd f = Eigen::VectorXd::Unit(4, 0), g = Eigen::VectorXd::Unit(4, 1);
  CHECK(kDefaultMargin == doctest::Approx(0.247214).epsilon(1e-6));
  CHECK(contrastive_term(f, f, true, kDefaultMargin) == 0.0);
  CHECK(contrastive_term(f, g, false, kDefaultMargin) == 0.0);
  CHECK(contrastive_term(f, g, true, kDefaultMargin) == doctest::Approx(2.0));
  Eigen::VectorXd h = f;
  h[1] = 0.1;
  CHECK(contrastive_term(f, h, false, kDefaultMargin) == doctest::Approx(std::pow(kDefaultMargin - 0.1, 2)));

  // Positive pair of identical inputs through the network.
  DescriptorNet net(kSmall, 5);
  Eigen::MatrixXd x = Eigen::MatrixXd::Random(2, kSmall.input);
  x.row(1) = x.row(0);
  const std::vector<MaterialLabelSet> labels{{Material::Wood}, {Material::Wood}};
  const auto r = multitask_loss(net, x, labels, {{0, 1, true}}, {0.0, 1.0, kDefaultMargin});
  CHECK(r.contr_term == 0.0);
  CHECK(r.gradient.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("loss is invariant to swapping the points of a pair") {
  std::mt19937_64 rng(8);
  const auto d = random_dataset(rng, 12, kSmall.input);
  DescriptorNet net(kSmall, 2);
  std::vector<PointPair> batch{{0, 1, true}, {2, 3, false}, {4, 5, false}, {6, 7, false}, {8, 9, false}};
  std::vector<PointPair> swapped;
  for (auto p : batch) swapped.push_back({p.q, p.p, p.positive});
  for (const LossWeights w : {LossWeights{}, LossWeights{1.0, 0.0, kDefaultMargin}, LossWeights{0.0, 1.0, 0.9}}) {
    const auto a = multitask_loss(net, d.features, d.labels, batch, w);
    const auto b = multitask_loss(net, d.features, d.labels, swapped, w);
    CHECK(a.loss == doctest::Approx(b.loss).epsilon(1e-14));
    CHECK((a.gradient - b.gradient).cwiseAbs().maxCoeff() < 1e-14);
  }
}

TEST_CASE("loss gradient matches central differences for both variants") {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 5; ++trial) {
    const auto d = random_dataset(rng, 10, kSmall.input);
    DescriptorNet net(kSmall, 100 + trial);
    std::normal_distribution<double> g(0.0, 0.5);
    for (Eigen::Index i = 0; i < net.params().size(); ++i) net.params()[i] += g(rng);
    const auto batch = sample_pairs(d.labels, 5, trial).pairs;
    REQUIRE(!batch.empty());
    // A large margin keeps the negative hinges active.
    for (const LossWeights w : {variant_weights(TrainVariant::Multitask), variant_weights(TrainVariant::Classification),
                                LossWeights{0.016, 1.0, 1.5}}) {
      const auto analytic = multitask_loss(net, d.features, d.labels, batch, w).gradient;
      const auto numeric = oracle::central_difference(
          [&](const Eigen::VectorXd& p) {
            DescriptorNet n = net;
            n.params() = p;
            return multitask_loss(n, d.features, d.labels, batch, w).loss;
          },
          net.params(), 1e-5);
      CHECK(oracle::max_relative_error(analytic, numeric, 1e-6) < 1e-4);
    }
  }
}

TEST_CASE("loss rejects empty batches and non-positive margins") {
  DescriptorNet net(kSmall, 1);
  Eigen::MatrixXd x = Eigen::MatrixXd::Zero(2, kSmall.input);
  const std::vector<MaterialLabelSet> labels{{Material::Wood}, {Material::Metal}};
  CHECK(fixtures::error_kind([&] { multitask_loss(net, x, labels, {}, {}); }) == ErrorKind::MissingData);
  CHECK(fixtures::error_kind([&] { multitask_loss(net, x, labels, {{0, 1, false}}, {0.0, 1.0, 0.0}); }) ==
        ErrorKind::MalformedInput);
}

TEST_CASE("pair sampler ratio, cycling and label rejection") {
  std::vector<MaterialLabelSet> labels;
  for (Material m : kAllMaterials)
    for (int i = 0; i < 6; ++i) labels.push_back({m});
  labels.push_back({Material::Metal, Material::Plastic});

  const auto five = sample_pairs(labels, 5, 3);
  REQUIRE(five.pairs.size() == 5);
  CHECK(five.pairs[0].positive);
  for (int i = 1; i < 5; ++i) CHECK(!five.pairs[i].positive);

  const auto batch = sample_pairs(labels, 50, 11);
  REQUIRE(batch.pairs.size() == 50);
  CHECK(batch.warnings == 0);
  int positives = 0;
  for (const auto& p : batch.pairs) {
    CHECK(p.p != p.q);
    if (p.positive) {
      ++positives;
      CHECK(labels[p.p].intersects(labels[p.q]));
    } else {
      CHECK(!labels[p.p].intersects(labels[p.q]));
    }
  }
  CHECK(positives == 10);
}

TEST_CASE("40 negatives cover each material combination exactly four times") {
  std::vector<MaterialLabelSet> labels;
  for (Material m : kAllMaterials)
    for (int i = 0; i < 3; ++i) labels.push_back({m});
  PairSampler sampler(labels, 4, 4);
  const auto batch = sampler.next(50);
  std::map<std::pair<int, int>, int> combos;
  int negatives = 0;
  for (const auto& p : batch.pairs) {
    if (p.positive) continue;
    ++negatives;
    ++combos[std::minmax(index_of(labels[p.p].materials()[0]), index_of(labels[p.q].materials()[0]))];
  }
  CHECK(negatives == 40);
  CHECK(combos.size() == 10);
  for (const auto& [k, c] : combos) CHECK(c == 4);
}

TEST_CASE("a multi-label sample is never drawn against its own materials") {
  std::vector<MaterialLabelSet> labels{{Material::Metal, Material::Plastic}, {Material::Metal}, {Material::Plastic},
                                       {Material::Wood}, {Material::Wood}};
  PairSampler sampler(labels, 9, 4);
  const auto batch = sampler.next(500);
  for (const auto& p : batch.pairs) {
    if (p.positive) continue;
    CHECK(!labels[p.p].intersects(labels[p.q]));
    CHECK(!(p.p == 0 && (p.q == 1 || p.q == 2)));
    CHECK(!(p.q == 0 && (p.p == 1 || p.p == 2)));
  }
  // Glass and fabric have no samples at all.
  CHECK(batch.warnings > 0);
}

TEST_CASE("pair statistics over 10^4 draws") {
  std::mt19937_64 rng(5);
  std::vector<MaterialLabelSet> labels;
  for (Material m : kAllMaterials)
    for (int i = 0; i < 20; ++i) labels.push_back({m});
  const auto batch = sample_pairs(labels, 10000, 77);
  REQUIRE(batch.pairs.size() == 10000);
  int positives = 0;
  std::map<std::pair<int, int>, int> combos;
  for (const auto& p : batch.pairs) {
    if (p.positive) {
      ++positives;
      continue;
    }
    ++combos[std::minmax(index_of(labels[p.p].materials()[0]), index_of(labels[p.q].materials()[0]))];
  }
  CHECK(std::abs(positives / 1e4 - 0.2) <= 0.01);
  REQUIRE(combos.size() == 10);
  for (const auto& [k, c] : combos) CHECK(std::abs(c / double(10000 - positives) - 0.1) <= 0.01);
}

TEST_CASE("training separates linearly separable two-material data") {
  std::mt19937_64 rng(13);
  std::normal_distribution<double> g(0.0, 0.3);
  const int n = 200, dim = 8;
  Eigen::MatrixXd x(n, dim);
  std::vector<MaterialLabelSet> labels;
  for (int i = 0; i < n; ++i) {
    const bool wood = i % 2 == 0;
    for (int k = 0; k < dim; ++k) x(i, k) = g(rng);
    x(i, 0) += wood ? 1.0 : -1.0;
    labels.push_back({wood ? Material::Wood : Material::Metal});
  }
  DescriptorTrainOptions opts;
  opts.epochs = 50;
  opts.seed = 3;
  const auto r = train_descriptor(x, labels, opts);
  CHECK(r.trace.size() == 50);
  int right = 0;
  for (int i = 0; i < n; ++i) {
    const auto p = predict_probs(r.net, x.row(i).transpose());
    Eigen::Index best;
    p.probs.maxCoeff(&best);
    right += labels[i].contains(kAllMaterials[best]);
  }
  CHECK(right / double(n) >= 0.99);
  CHECK(r.trace.back().total < r.trace.front().total);

  // Deterministic given the seed.
  const auto again = train_descriptor(x, labels, opts);
  CHECK(again.net.params() == r.net.params());
}

TEST_CASE("classification variant keeps a zero contrastive trace") {
  std::mt19937_64 rng(4);
  const auto d = random_dataset(rng, 40, 6);
  DescriptorTrainOptions opts;
  opts.variant = TrainVariant::Classification;
  opts.epochs = 3;
  opts.shape = kSmall;
  const auto r = train_descriptor(d.features, d.labels, opts);
  for (const auto& e : r.trace) {
    CHECK(e.contr_term == 0.0);
    CHECK(e.class_term > 0.0);
  }
  opts.variant = TrainVariant::Multitask;
  opts.lambda_contr = 0.0;
  for (const auto& e : train_descriptor(d.features, d.labels, opts).trace) CHECK(e.contr_term == 0.0);
}

TEST_CASE("training input errors") {
  DescriptorTrainOptions opts;
  CHECK(fixtures::error_kind([&] { train_descriptor(Eigen::MatrixXd(0, 4), {}, opts); }) == ErrorKind::MissingData);
  CHECK(fixtures::error_kind([&] {
          train_descriptor(Eigen::MatrixXd::Zero(3, 4), {{Material::Wood}}, opts);
        }) == ErrorKind::Alignment);
  CHECK(fixtures::error_kind([] { parse_variant("siamese"); }) == ErrorKind::MalformedInput);
  CHECK(parse_variant("contrastive") == TrainVariant::Contrastive);
}

TEST_CASE("prediction outputs") {
  DescriptorNet net(NetShape{}, 17);
  std::mt19937_64 rng(2);
  std::normal_distribution<double> g(0.0, 3.0);
  for (int i = 0; i < 10000; ++i) {
    Eigen::VectorXd x(kFeatureDim);
    for (auto& v : x) v = g(rng);
    const auto p = predict_probs(net, x);
    CHECK_MESSAGE(((p.probs.array() > 0).all() && (p.probs.array() < 1).all()), "fuzz case " << i);
    CHECK(std::abs(p.descriptor.norm() - 1.0) < 1e-9);
    if (i < 10) CHECK(predict_probs(net, x).probs == p.probs);
  }
  net.zero_head();
  const auto p = predict_probs(net, Eigen::VectorXd::Ones(kFeatureDim));
  for (double v : p.probs) CHECK(v == 0.5);
}

TEST_CASE("network, features and predictions round-trip through JSON") {
  DescriptorNet net(kSmall, 6);
  net.set_standardization(Eigen::VectorXd::Constant(kSmall.input, 0.25), Eigen::VectorXd::Constant(kSmall.input, 2.0));
  const auto back = DescriptorNet::from_json(net.to_json());
  CHECK(back.params() == net.params());
  CHECK(back.input_mean() == net.input_mean());
  CHECK(back.input_scale() == net.input_scale());
  CHECK(back.shape().descriptor == kSmall.descriptor);

  Eigen::MatrixXd f = Eigen::MatrixXd::Random(4, 7);
  std::stringstream fs;
  write_features_jsonl(fs, f);
  CHECK(read_features_jsonl(fs) == f);

  Eigen::MatrixXd probs = Eigen::MatrixXd::Random(3, kNumMaterials).cwiseAbs(), desc = Eigen::MatrixXd::Random(3, 4);
  std::stringstream ps;
  write_predictions_jsonl(ps, probs, desc);
  Eigen::MatrixXd p2, d2;
  read_predictions_jsonl(ps, p2, d2);
  CHECK(p2 == probs);
  CHECK(d2 == desc);

  std::stringstream bad("{\"sample_index\": 1, \"features\": [1]}\n");
  CHECK(fixtures::error_kind([&] { read_features_jsonl(bad); }) == ErrorKind::Alignment);
  CHECK(fixtures::error_kind([] { DescriptorNet::from_json("{"); }).has_value());
}
