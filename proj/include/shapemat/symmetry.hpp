#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "shapemat/mesh.hpp"

namespace shapemat {

enum class SymmetryKind { Rotational, Reflective };

/// x -> rotation * x + translation, where `rotation` is orthogonal with
/// determinant +1 (rotational) or -1 (reflective).
template <typename Scalar>
struct RigidTransform {
  using Matrix3 = Eigen::Matrix<Scalar, 3, 3>;
  using Vector3 = Eigen::Matrix<Scalar, 3, 1>;

  Matrix3 rotation = Matrix3::Identity();
  Vector3 translation = Vector3::Zero();

  static RigidTransform identity() { return {}; }

  SymmetryKind kind() const { return rotation.determinant() > 0 ? SymmetryKind::Rotational : SymmetryKind::Reflective; }

  template <typename Derived>
  Vector3 operator()(const Eigen::MatrixBase<Derived>& p) const {
    return rotation * p + translation;
  }

  /// (this * other)(x) == this(other(x))
  RigidTransform operator*(const RigidTransform& other) const {
    return {rotation * other.rotation, rotation * other.translation + translation};
  }

  RigidTransform inverse() const {
    const Matrix3 rt = rotation.transpose();
    return {rt, -(rt * translation)};
  }

  /// Angle of the proper rotation part: R itself, or -R for reflections
  /// (-R is the half-turn about the mirror-plane normal).
  Eigen::AngleAxis<Scalar> proper_rotation() const {
    const Matrix3 r = kind() == SymmetryKind::Rotational ? rotation : Matrix3(-rotation);
    return Eigen::AngleAxis<Scalar>(r);
  }

  Scalar orthogonality_error() const {
    return (rotation.transpose() * rotation - Matrix3::Identity()).cwiseAbs().maxCoeff();
  }
};

using RigidTransformd = RigidTransform<double>;

/// Rotation about the upright axis.
Mat3 upright_rotation(double angle);

struct IcpResult {
  RigidTransformd transform;
  double rmsd = 0.0;
  int iterations = 0;
};

/// Maps a query point to its correspondence on the target.
using ClosestPointFn = std::function<Vec3(const Vec3&)>;

/// Best rigid fit of `source` onto `target` (paired by index) whose rotation
/// keeps the determinant sign `det_sign`.
RigidTransformd fit_rigid(std::span<const Vec3> source, std::span<const Vec3> target, int det_sign);

/// Nearest-neighbour ICP against a point set.
IcpResult icp_align(std::span<const Vec3> source, std::span<const Vec3> target, const RigidTransformd& init,
                    int max_iter, double tol);
/// ICP against an arbitrary closest-point query (e.g. a triangle surface).
IcpResult icp_align(std::span<const Vec3> source, const ClosestPointFn& closest, const RigidTransformd& init,
                    int max_iter, double tol);

struct SymmetryOptions {
  int samples_per_component = 256;
  /// ICP acceptance, in bounding radii.
  double rmsd_threshold = 0.02;
  double residual_cutoff = 0.1;
  int init_rotations = 8;
  int icp_iterations = 50;
  /// ICP stops once the rmsd changes by less than this (in bounding radii);
  /// the coarse tolerance applies to component-pair fits, the other to the
  /// final whole-surface refinement.
  double coarse_icp_tol = 1e-5;
  double icp_tol = 1e-10;
  double cluster_angle_deg = 5.0;
  double cluster_axis_deg = 5.0;
  /// In bounding radii.
  double cluster_translation = 0.05;
  /// Fraction of surface area a transform must map onto matching components
  /// (1 keeps only symmetries of the whole shape).
  double min_coverage = 1.0;
  /// Relative tolerance for the area / spread pre-check between components.
  double shape_tolerance = 0.15;
};

struct DetectedSymmetry {
  RigidTransformd transform;
  double rmsd = 0.0;
  double coverage = 0.0;
  /// (source component, target component) pairs the transform maps onto each other.
  std::vector<std::pair<int, int>> component_pairs;
};

std::vector<DetectedSymmetry> detect_symmetries(const LabeledMesh& mesh, const SymmetryOptions& options,
                                                std::uint64_t seed);

struct SymmetryPair {
  int f = 0;
  int f_prime = 0;
  /// |T(center f) - center f'| / bounding radius, clamped to [0, 1].
  double s = 0.0;
  int transform = 0;
};

std::vector<SymmetryPair> symmetry_pairs(const LabeledMesh& mesh, const std::vector<DetectedSymmetry>& symmetries,
                                         double residual_cutoff);

std::string symmetry_json(const std::vector<DetectedSymmetry>& symmetries, const std::vector<SymmetryPair>& pairs);
void read_symmetry_json(const std::string& text, std::vector<DetectedSymmetry>& symmetries,
                        std::vector<SymmetryPair>& pairs);

}  // namespace shapemat
