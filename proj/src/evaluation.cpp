#include "shapemat/evaluation.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <json.hpp>
#include <limits>
#include <numeric>
#include <random>

#include "shapemat/error.hpp"
#include "shapemat/parallel.hpp"

namespace shapemat {

namespace {

void finish_mean(ClassScores& s) {
  double sum = 0.0;
  int classes = 0;
  for (int c = 0; c < kNumMaterials; ++c) {
    if (s.counts[c] == 0) continue;
    sum += s.per_class[c];
    ++classes;
  }
  s.mean = classes > 0 ? sum / classes : 0.0;
}

}  // namespace

std::vector<int> balance_database(const std::vector<MaterialLabelSet>& labels, std::uint64_t seed) {
  std::array<std::vector<int>, kNumMaterials> members;
  for (int i = 0; i < static_cast<int>(labels.size()); ++i)
    for (Material m : labels[i].materials()) members[index_of(m)].push_back(i);
  std::size_t min_count = std::numeric_limits<std::size_t>::max();
  for (const auto& m : members)
    if (!m.empty()) min_count = std::min(min_count, m.size());
  if (min_count == std::numeric_limits<std::size_t>::max()) return {};

  std::mt19937_64 rng(seed);
  std::vector<int> chosen;
  for (auto& m : members) {
    if (m.empty()) continue;
    std::shuffle(m.begin(), m.end(), rng);
    chosen.insert(chosen.end(), m.begin(), m.begin() + static_cast<std::ptrdiff_t>(min_count));
  }
  std::sort(chosen.begin(), chosen.end());
  chosen.erase(std::unique(chosen.begin(), chosen.end()), chosen.end());
  return chosen;
}

ClassScores precision_at_k(const Eigen::MatrixXd& query_descriptors, const std::vector<MaterialLabelSet>& query_labels,
                           const Eigen::MatrixXd& db_descriptors, const std::vector<MaterialLabelSet>& db_labels, int k,
                           bool leave_one_out) {
  const int nq = static_cast<int>(query_descriptors.rows());
  const int nd = static_cast<int>(db_descriptors.rows());
  if (static_cast<int>(query_labels.size()) != nq || static_cast<int>(db_labels.size()) != nd)
    throw Error(ErrorKind::Alignment, "descriptor and label counts differ");
  if (nq > 0 && query_descriptors.cols() != db_descriptors.cols())
    throw Error(ErrorKind::Alignment, "query and database descriptors differ in dimension");
  const int available = leave_one_out ? nd - 1 : nd;
  if (k <= 0 || k > available)
    throw Error(ErrorKind::InvalidK, "k=" + std::to_string(k) + " exceeds the database size " + std::to_string(available));

  std::vector<double> per_query(nq, 0.0);
  parallel_for(nq, [&](int q) {
    std::vector<std::pair<double, int>> d;
    d.reserve(nd);
    for (int i = 0; i < nd; ++i) {
      if (leave_one_out && i == q) continue;
      d.emplace_back((db_descriptors.row(i) - query_descriptors.row(q)).squaredNorm(), i);
    }
    std::partial_sort(d.begin(), d.begin() + k, d.end());
    int hits = 0;
    for (int r = 0; r < k; ++r)
      if (db_labels[d[r].second].intersects(query_labels[q])) ++hits;
    per_query[q] = static_cast<double>(hits) / k;
  });

  ClassScores s;
  for (int q = 0; q < nq; ++q)
    for (Material m : query_labels[q].materials()) {
      s.per_class[index_of(m)] += per_query[q];
      ++s.counts[index_of(m)];
    }
  for (int c = 0; c < kNumMaterials; ++c)
    if (s.counts[c] > 0) s.per_class[c] /= s.counts[c];
  finish_mean(s);
  return s;
}

ClassScores top1_accuracy(const std::vector<Material>& predictions, const std::vector<MaterialLabelSet>& truths) {
  if (predictions.size() != truths.size())
    throw Error(ErrorKind::Alignment, "prediction and truth counts differ");
  ClassScores s;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const double score = truths[i].contains(predictions[i]) ? 1.0 : 0.0;
    for (Material m : truths[i].materials()) {
      s.per_class[index_of(m)] += score;
      ++s.counts[index_of(m)];
    }
  }
  for (int c = 0; c < kNumMaterials; ++c)
    if (s.counts[c] > 0) s.per_class[c] /= s.counts[c];
  finish_mean(s);
  return s;
}

Eigen::Matrix<double, kNumMaterials, kNumMaterials> confusion_matrix(const std::vector<Material>& predictions,
                                                                     const std::vector<MaterialLabelSet>& truths) {
  if (predictions.size() != truths.size())
    throw Error(ErrorKind::Alignment, "prediction and truth counts differ");
  Eigen::Matrix<double, kNumMaterials, kNumMaterials> c = Eigen::Matrix<double, kNumMaterials, kNumMaterials>::Zero();
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const auto mats = truths[i].materials();
    for (Material m : mats) c(index_of(m), index_of(predictions[i])) += 1.0 / static_cast<double>(mats.size());
  }
  for (int r = 0; r < kNumMaterials; ++r) {
    const double sum = c.row(r).sum();
    if (sum > 0) c.row(r) /= sum;
  }
  return c;
}

std::vector<Material> argmax_materials(const Eigen::MatrixXd& probs) {
  std::vector<Material> out(static_cast<std::size_t>(probs.rows()));
  for (Eigen::Index i = 0; i < probs.rows(); ++i) {
    Eigen::Index best = 0;
    for (Eigen::Index m = 1; m < probs.cols(); ++m)
      if (probs(i, m) > probs(i, best)) best = m;
    out[static_cast<std::size_t>(i)] = kAllMaterials[static_cast<std::size_t>(best)];
  }
  return out;
}

namespace {

nlohmann::ordered_json scores_json(const ClassScores& s) {
  nlohmann::ordered_json j;
  j["mean"] = s.mean;
  nlohmann::ordered_json pc, counts;
  for (Material m : kAllMaterials) {
    const int c = index_of(m);
    pc[std::string(material_name(m))] = s.counts[c] > 0 ? nlohmann::ordered_json(s.per_class[c]) : nullptr;
    counts[std::string(material_name(m))] = s.counts[c];
  }
  j["per_class"] = pc;
  j["counts"] = counts;
  return j;
}

std::ofstream open_csv(const std::string& dir, const char* name) {
  std::ofstream out(std::filesystem::path(dir) / name);
  if (!out) throw Error(ErrorKind::Io, std::string("cannot write ") + name);
  out << std::setprecision(17);
  return out;
}

}  // namespace

std::string report_json(const EvalReport& report) {
  nlohmann::ordered_json doc;
  nlohmann::ordered_json prec = nlohmann::ordered_json::object();
  for (std::size_t i = 0; i < report.ks.size(); ++i) prec[std::to_string(report.ks[i])] = scores_json(report.precision[i]);
  doc["precision_at_k"] = prec;
  doc["top1_accuracy"] = scores_json(report.top1);
  nlohmann::ordered_json conf;
  conf["materials"] = nlohmann::ordered_json::array();
  for (Material m : kAllMaterials) conf["materials"].push_back(std::string(material_name(m)));
  conf["rows"] = nlohmann::ordered_json::array();
  for (int r = 0; r < kNumMaterials; ++r) {
    std::vector<double> row(kNumMaterials);
    for (int c = 0; c < kNumMaterials; ++c) row[c] = report.confusion(r, c);
    conf["rows"].push_back(row);
  }
  doc["confusion"] = conf;
  return doc.dump(2);
}

void write_report_csv(const EvalReport& report, const std::string& dir) {
  auto header = [](std::ostream& out, const char* first) {
    out << first;
    for (Material m : kAllMaterials) out << ',' << material_name(m);
  };
  auto cells = [](std::ostream& out, const ClassScores& s) {
    for (int c = 0; c < kNumMaterials; ++c) {
      out << ',';
      if (s.counts[c] > 0) out << s.per_class[c];
    }
  };
  {
    auto out = open_csv(dir, "precision.csv");
    header(out, "k");
    out << ",mean\n";
    for (std::size_t i = 0; i < report.ks.size(); ++i) {
      out << report.ks[i];
      cells(out, report.precision[i]);
      out << ',' << report.precision[i].mean << '\n';
    }
  }
  {
    auto out = open_csv(dir, "accuracy.csv");
    header(out, "metric");
    out << ",mean\ntop1";
    cells(out, report.top1);
    out << ',' << report.top1.mean << '\n';
  }
  {
    auto out = open_csv(dir, "confusion.csv");
    header(out, "truth\\prediction");
    out << '\n';
    for (Material m : kAllMaterials) {
      out << material_name(m);
      for (int c = 0; c < kNumMaterials; ++c) out << ',' << report.confusion(index_of(m), c);
      out << '\n';
    }
  }
}

}  // namespace shapemat
