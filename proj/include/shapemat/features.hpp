#pragma once

#include <Eigen/Core>
#include <array>
#include <vector>

#include "shapemat/bvh.hpp"
#include "shapemat/kdtree.hpp"
#include "shapemat/mesh.hpp"
#include "shapemat/sampling.hpp"

namespace shapemat {

inline constexpr int kFeatureDim = 64;
inline constexpr int kPerRadiusFeatures = 17;
/// Neighbourhood radii in bounding-sphere radii.
inline constexpr std::array<double, 3> kFeatureRadii = {0.25, 0.5, 1.0};

/// Per-mesh state shared by feature queries: a dense reference point cloud
/// for neighbourhood statistics and a BVH for thickness rays.
class FeatureExtractor {
 public:
  explicit FeatureExtractor(const LabeledMesh& mesh, int reference_points = 2048);

  /// Layout: 3 x 17 neighbourhood statistics (one block per radius), then
  /// 13 point / component descriptors.
  Eigen::VectorXd extract(const SurfaceSample& sample) const;

  /// Inward ray distance to the opposite surface, capped at 2 radii.
  double thickness(const SurfaceSample& sample) const;

 private:
  const LabeledMesh& mesh_;
  std::vector<SurfaceSample> reference_;
  KdTree3 tree_;
  TriangleBvh bvh_;
  double min_height_ = 0.0;
  std::vector<Eigen::AlignedBox3d> component_boxes_;
  std::vector<double> component_fraction_;
};

Eigen::VectorXd extract_point_features(const LabeledMesh& mesh, const SurfaceSample& sample);

/// Rows are samples.
Eigen::MatrixXd extract_features(const LabeledMesh& mesh, const std::vector<SurfaceSample>& samples);

}  // namespace shapemat
