#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <numeric>
#include <random>

#include "fixtures.hpp"
#include "oracles/eval_ref.hpp"
#include "shapemat/evaluation.hpp"

using namespace shapemat;

namespace {

constexpr Material W = Material::Wood, P = Material::Plastic, M = Material::Metal, G = Material::Glass,
                   F = Material::Fabric;

std::vector<MaterialLabelSet> random_labels(std::mt19937_64& rng, int n, bool multi) {
  std::uniform_int_distribution<int> m(0, kNumMaterials - 1), coin(0, 3);
  std::vector<MaterialLabelSet> out;
  for (int i = 0; i < n; ++i) {
    MaterialLabelSet s{kAllMaterials[m(rng)]};
    if (multi && coin(rng) == 0) s.insert(kAllMaterials[m(rng)]);
    out.push_back(s);
  }
  return out;
}

void check_same(const ClassScores& a, const oracle::Scores& b) {
  for (int c = 0; c < kNumMaterials; ++c) {
    CHECK(a.counts[c] == b.counts[c]);
    CHECK(a.per_class[c] == doctest::Approx(b.per_class[c]).epsilon(1e-12));
  }
  CHECK(a.mean == doctest::Approx(b.mean).epsilon(1e-12));
}

}  // namespace

TEST_CASE("precision trivial cases") {
  Eigen::MatrixXd db(3, 2);
  db << 0, 0, 1, 0, 5, 5;
  const std::vector<MaterialLabelSet> dbl{{W}, {W, M}, {G}};
  Eigen::MatrixXd q(1, 2);
  q << 0.9, 0.1;
  const auto p1 = precision_at_k(q, {{M}}, db, dbl, 1);
  CHECK(p1.per_class[index_of(M)] == 1.0);
  CHECK(p1.counts[index_of(M)] == 1);
  CHECK(p1.mean == 1.0);
  CHECK(precision_at_k(q, {{M}}, db, dbl, 3).per_class[index_of(M)] == doctest::Approx(1.0 / 3));

  const std::vector<MaterialLabelSet> one(3, MaterialLabelSet{F});
  for (int k = 1; k <= 3; ++k) CHECK(precision_at_k(db, one, db, one, k).mean == 1.0);
}

TEST_CASE("precision on a hand-placed 10-point fixture matches the exhaustive oracle") {
  Eigen::MatrixXd d(10, 2);
  d << 0, 0, 0.1, 0, 0, 0.2, 1, 1, 1.1, 1, 1, 1.3, 3, 0, 3, 0.1, 0.5, 0.5, 2, 2;
  const std::vector<MaterialLabelSet> l{{W}, {W}, {W, P}, {M}, {M}, {P, M}, {G}, {G}, {F}, {F}};
  for (int k : {1, 2, 3, 5, 9})
    check_same(precision_at_k(d, l, d, l, k, true), oracle::precision(d, l, d, l, k, true));
  // Self retrieval without leave-one-out: the query itself comes first.
  check_same(precision_at_k(d, l, d, l, 1), oracle::precision(d, l, d, l, 1, false));
  CHECK(precision_at_k(d, l, d, l, 1).mean == 1.0);
  // Query 0's two nearest others are 1 (wood) and 2 (wood, plastic).
  const auto p = precision_at_k(d.topRows(1), {l[0]}, d, l, 2, true);
  CHECK(p.per_class[index_of(W)] == 1.0);
}

TEST_CASE("precision matches the oracle on random data with ties") {
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int> grid(0, 3);
  for (int trial = 0; trial < 20; ++trial) {
    const int nq = 15, nd = 40;
    Eigen::MatrixXd q(nq, 2), db(nd, 2);
    for (int i = 0; i < nq; ++i) q.row(i) << grid(rng), grid(rng);
    for (int i = 0; i < nd; ++i) db.row(i) << grid(rng), grid(rng);
    const auto ql = random_labels(rng, nq, true), dbl = random_labels(rng, nd, true);
    for (int k : {1, 7, 40}) check_same(precision_at_k(q, ql, db, dbl, k), oracle::precision(q, ql, db, dbl, k, false));
  }
}

TEST_CASE("precision does not depend on database order") {
  std::mt19937_64 rng(9);
  std::normal_distribution<double> g;
  Eigen::MatrixXd q(10, 4), db(30, 4);
  for (auto* m : {&q, &db})
    for (Eigen::Index i = 0; i < m->size(); ++i) m->data()[i] = g(rng);
  const auto ql = random_labels(rng, 10, true), dbl = random_labels(rng, 30, true);
  std::vector<int> perm(30);
  std::iota(perm.begin(), perm.end(), 0);
  for (int t = 0; t < 5; ++t) {
    std::shuffle(perm.begin(), perm.end(), rng);
    Eigen::MatrixXd db2(30, 4);
    std::vector<MaterialLabelSet> dbl2;
    for (int i = 0; i < 30; ++i) {
      db2.row(i) = db.row(perm[i]);
      dbl2.push_back(dbl[perm[i]]);
    }
    for (int k : {1, 5, 30}) {
      const auto a = precision_at_k(q, ql, db, dbl, k), b = precision_at_k(q, ql, db2, dbl2, k);
      CHECK(a.per_class == b.per_class);
    }
  }
}

TEST_CASE("precision errors") {
  Eigen::MatrixXd d = Eigen::MatrixXd::Zero(3, 2);
  const std::vector<MaterialLabelSet> l(3, MaterialLabelSet{W});
  CHECK(fixtures::error_kind([&] { precision_at_k(d, l, d, l, 4); }) == ErrorKind::InvalidK);
  CHECK(fixtures::error_kind([&] { precision_at_k(d, l, d, l, 3, true); }) == ErrorKind::InvalidK);
  CHECK(fixtures::error_kind([&] { precision_at_k(d, l, d, l, 0); }) == ErrorKind::InvalidK);
  CHECK(fixtures::error_kind([&] { precision_at_k(d, {{W}}, d, l, 1); }) == ErrorKind::Alignment);
  CHECK(fixtures::error_kind([&] { precision_at_k(d, l, Eigen::MatrixXd::Zero(3, 5), l, 1); }) == ErrorKind::Alignment);
}

TEST_CASE("balanced database keeps the minimum class count per class") {
  std::vector<MaterialLabelSet> l;
  for (int i = 0; i < 10; ++i) l.push_back({W});
  for (int i = 0; i < 4; ++i) l.push_back({M});
  for (int i = 0; i < 6; ++i) l.push_back({G});
  const auto idx = balance_database(l, 5);
  int counts[kNumMaterials] = {};
  for (int i : idx)
    for (Material m : l[i].materials()) ++counts[index_of(m)];
  CHECK(counts[index_of(W)] == 4);
  CHECK(counts[index_of(M)] == 4);
  CHECK(counts[index_of(G)] == 4);
  CHECK(counts[index_of(P)] == 0);
  CHECK(std::is_sorted(idx.begin(), idx.end()));
  CHECK(balance_database(l, 5) == idx);

  // Multi-label points may push a class above the minimum, never below.
  std::mt19937_64 rng(1);
  for (int t = 0; t < 20; ++t) {
    const bool multi = t % 2 == 1;
    const auto labels = random_labels(rng, 60, multi);
    const auto sub = balance_database(labels, t);
    int before[kNumMaterials] = {}, after[kNumMaterials] = {};
    for (const auto& s : labels)
      for (Material m : s.materials()) ++before[index_of(m)];
    for (int i : sub)
      for (Material m : labels[i].materials()) ++after[index_of(m)];
    const int target = *std::min_element(before, before + kNumMaterials, [](int a, int b) {
      return (a == 0 ? INT32_MAX : a) < (b == 0 ? INT32_MAX : b);
    });
    for (int c = 0; c < kNumMaterials; ++c) {
      if (!before[c])
        CHECK(after[c] == 0);
      else if (multi)
        CHECK(after[c] >= target);
      else
        CHECK(after[c] == target);
    }
  }
}

TEST_CASE("top-1 accuracy semantics") {
  const auto a = top1_accuracy({M}, {{M, P}});
  CHECK(a.per_class[index_of(M)] == 1.0);
  CHECK(a.per_class[index_of(P)] == 1.0);
  CHECK(a.counts[index_of(P)] == 1);
  CHECK(top1_accuracy({W}, {{G}}).per_class[index_of(G)] == 0.0);
  const auto all = top1_accuracy({W, P, M, G, F}, {{W}, {P}, {M}, {G}, {F}});
  for (double v : all.per_class) CHECK(v == 1.0);
  CHECK(all.mean == 1.0);
  // Unlabeled points are skipped.
  CHECK(top1_accuracy({W, P}, {{W}, {}}).counts[index_of(P)] == 0);
  CHECK(fixtures::error_kind([] { top1_accuracy({W}, {}); }) == ErrorKind::Alignment);

  std::mt19937_64 rng(12);
  std::uniform_int_distribution<int> m(0, kNumMaterials - 1);
  for (int t = 0; t < 10; ++t) {
    const auto truth = random_labels(rng, 50, true);
    std::vector<Material> pred;
    for (int i = 0; i < 50; ++i) pred.push_back(kAllMaterials[m(rng)]);
    check_same(top1_accuracy(pred, truth), oracle::top1(pred, truth));
  }
}

TEST_CASE("confusion matrix") {
  const auto id = confusion_matrix({W, P, M, G, F}, {{W}, {P}, {M}, {G}, {F}});
  CHECK(id == Eigen::Matrix<double, kNumMaterials, kNumMaterials>::Identity());

  // One multi-label point plus one plastic point predicted as wood.
  const auto c = confusion_matrix({M, W}, {{M, P}, {P}});
  CHECK(c(index_of(M), index_of(M)) == 1.0);
  CHECK(c(index_of(P), index_of(M)) == doctest::Approx(0.5 / 1.5));
  CHECK(c(index_of(P), index_of(W)) == doctest::Approx(1.0 / 1.5));
  CHECK(c.row(index_of(G)).sum() == 0.0);

  std::mt19937_64 rng(4);
  std::uniform_int_distribution<int> m(0, kNumMaterials - 1);
  for (int t = 0; t < 10; ++t) {
    const auto truth = random_labels(rng, 40, true);
    std::vector<Material> pred;
    for (int i = 0; i < 40; ++i) pred.push_back(kAllMaterials[m(rng)]);
    const auto lib = confusion_matrix(pred, truth);
    const Eigen::MatrixXd ref = oracle::confusion(pred, truth);
    CHECK((Eigen::MatrixXd(lib) - ref).cwiseAbs().maxCoeff() < 1e-12);
    for (int r = 0; r < kNumMaterials; ++r) {
      const double s = lib.row(r).sum();
      CHECK((std::abs(s - 1.0) < 1e-9 || s == 0.0));
    }
  }

  // Single-label data: each diagonal entry equals that class's accuracy.
  const auto truth = random_labels(rng, 60, false);
  std::vector<Material> pred;
  for (int i = 0; i < 60; ++i) pred.push_back(kAllMaterials[m(rng)]);
  const auto acc = top1_accuracy(pred, truth);
  const auto cm = confusion_matrix(pred, truth);
  for (int k = 0; k < kNumMaterials; ++k)
    if (acc.counts[k]) CHECK(cm(k, k) == doctest::Approx(acc.per_class[k]));
}

TEST_CASE("argmax ties resolve to the first material") {
  Eigen::MatrixXd p(2, kNumMaterials);
  p << 0.2, 0.5, 0.5, 0.1, 0.0, 0.3, 0.3, 0.3, 0.3, 0.3;
  CHECK(argmax_materials(p) == std::vector<Material>{P, W});
}

TEST_CASE("report serializes to JSON and CSV") {
  EvalReport r;
  r.ks = {1, 30};
  r.precision = {top1_accuracy({W}, {{W}}), ClassScores{}};
  r.top1 = top1_accuracy({W, M}, {{W}, {P}});
  r.confusion = confusion_matrix({W, M}, {{W}, {P}});
  const auto j = nlohmann::json::parse(report_json(r));
  CHECK(j.contains("top1_accuracy"));
  // Absent classes are null rather than a misleading zero.
  CHECK(j["top1_accuracy"]["per_class"]["wood"] == 1.0);
  CHECK(j["top1_accuracy"]["per_class"]["glass"].is_null());
  CHECK(j["precision_at_k"].contains("30"));
  const auto dir = fixtures::temp_dir("eval_csv");
  write_report_csv(r, dir.string());
  for (const char* f : {"precision.csv", "accuracy.csv", "confusion.csv"}) {
    std::ifstream in(dir / f);
    CHECK(in.good());
    std::string line;
    int lines = 0;
    while (std::getline(in, line)) ++lines;
    CHECK(lines > 1);
  }
}
