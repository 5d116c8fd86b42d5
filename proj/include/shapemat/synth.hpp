#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "shapemat/material.hpp"
#include "shapemat/mesh.hpp"

namespace shapemat {

enum class Category { Table, Chair, Cabinet };
enum class PartShape { Box, Cylinder };

/// Parametric furniture description. Lengths are in model units with the
/// floor at y = 0. Materials are keyed by part role: "top", "legs" (tables);
/// "seat", "back", "legs" (chairs); "body", "doors", "handles" (cabinets).
struct SynthSpec {
  Category category = Category::Table;
  int legs = 4;
  PartShape leg_shape = PartShape::Cylinder;
  PartShape top_shape = PartShape::Box;
  std::map<std::string, MaterialLabelSet> materials;
  /// Per-vertex displacement bound, in bounding radii.
  double jitter = 0.0;
  std::uint64_t seed = 0;
  /// Grid cells per box face edge; cylinders use 4x this many segments.
  int resolution = 4;
  double width = 1.2;
  double height = 0.75;
};

/// Tables are n-fold rotationally symmetric about the upright axis: leg i is
/// leg_0 rotated by i * 360/n degrees. Chairs and cabinets are mirror
/// symmetric across x = 0. Quads are split into four triangles around their
/// center so the triangulation shares those symmetries.
LabeledMesh generate(const SynthSpec& spec);

/// Default labels for a category.
std::map<std::string, MaterialLabelSet> default_materials(Category category);

/// A chair built as a left half plus its mirror image across x = 0. The half
/// itself has no symmetry.
LabeledMesh mirrored_chair_fixture();

/// Face pairs (same local face index) between every two leg components.
std::vector<std::pair<int, int>> symmetric_leg_face_pairs(const LabeledMesh& mesh);

/// Row m gives the distribution of the label emitted for a corrupted sample
/// of true label m (it may redraw m itself). Default: half the mass on a
/// commonly confused partner (glass/wood, plastic/metal), the rest uniform;
/// fabric is uniform.
Eigen::MatrixXd default_confusion_bias();
Eigen::MatrixXd uniform_confusion_bias();

/// Noisy per-sample unaries: 0.9 on one label and 0.025 on each other. With
/// probability 1 - noise_rate that label is a true one; otherwise it is drawn
/// from the bias row of a true label. Unlabeled samples get 0.2 everywhere.
Eigen::MatrixXd corrupt_unaries(const std::vector<MaterialLabelSet>& truths, double noise_rate,
                                const Eigen::MatrixXd& confusion_bias, std::uint64_t seed);

/// 30 shapes: 12 tables, 12 chairs, 6 cabinets.
std::vector<SynthSpec> benchmark_specs(std::uint64_t seed);
/// Additional shapes from the same distribution (for training).
std::vector<SynthSpec> random_specs(int count, std::uint64_t seed);

SynthSpec parse_synth_spec(const std::string& json_text);
std::string synth_spec_json(const SynthSpec& spec);

Category parse_category(const std::string& name);
const char* category_name(Category c);

}  // namespace shapemat
