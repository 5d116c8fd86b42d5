#pragma once

#include <Eigen/Core>
#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "shapemat/material.hpp"

namespace shapemat {

/// Per-class scores plus their unweighted mean over classes that occur.
struct ClassScores {
  std::array<double, kNumMaterials> per_class{};
  /// Number of points averaged into each class; 0 marks an absent class.
  std::array<int, kNumMaterials> counts{};
  double mean = 0.0;
};

/// Indices of a database subset: each occurring class draws the minimum class
/// count from its own members. A multi-label point drawn for one class also
/// counts toward its other classes, so those may end up slightly above it.
std::vector<int> balance_database(const std::vector<MaterialLabelSet>& labels, std::uint64_t seed);

/// Fraction of each query's k Euclidean nearest neighbours that share a label
/// with it. Ties are broken by database index. With `leave_one_out`, query i
/// never retrieves database entry i (for self-retrieval on one set).
ClassScores precision_at_k(const Eigen::MatrixXd& query_descriptors, const std::vector<MaterialLabelSet>& query_labels,
                           const Eigen::MatrixXd& db_descriptors, const std::vector<MaterialLabelSet>& db_labels, int k,
                           bool leave_one_out = false);

/// A point scores 1 when its prediction is in its truth set, and that score
/// is averaged into every class of the truth set. Unlabeled points are skipped.
ClassScores top1_accuracy(const std::vector<Material>& predictions, const std::vector<MaterialLabelSet>& truths);

/// Rows are truths, columns predictions; a point with truth set T adds 1/|T|
/// to each of its truth rows. Rows are normalized to sum to 1.
Eigen::Matrix<double, kNumMaterials, kNumMaterials> confusion_matrix(const std::vector<Material>& predictions,
                                                                     const std::vector<MaterialLabelSet>& truths);

struct EvalReport {
  std::vector<int> ks;
  std::vector<ClassScores> precision;  // aligned with ks
  ClassScores top1;
  Eigen::Matrix<double, kNumMaterials, kNumMaterials> confusion =
      Eigen::Matrix<double, kNumMaterials, kNumMaterials>::Zero();
};

std::string report_json(const EvalReport& report);
/// Writes precision.csv, accuracy.csv and confusion.csv into `dir`.
void write_report_csv(const EvalReport& report, const std::string& dir);

/// Index of the largest entry of each row; ties resolve to the first material.
std::vector<Material> argmax_materials(const Eigen::MatrixXd& probs);

}  // namespace shapemat
