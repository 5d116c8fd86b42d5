#pragma once

#include <Eigen/Geometry>
#include <limits>
#include <optional>
#include <span>
#include <vector>

#include "shapemat/mesh.hpp"

namespace shapemat {

struct RayHit {
  double t = 0.0;
  int face = -1;
};

struct ClosestPoint {
  Vec3 point = Vec3::Zero();
  double dist2 = std::numeric_limits<double>::infinity();
  int face = -1;
};

/// Bounding-volume hierarchy over a set of mesh triangles (all faces, or a
/// subset such as one component). Read-only after construction.
class TriangleBvh {
 public:
  TriangleBvh() = default;
  explicit TriangleBvh(const LabeledMesh& mesh);
  TriangleBvh(const LabeledMesh& mesh, std::span<const int> faces);

  /// Nearest hit with t in (0, t_max].
  std::optional<RayHit> intersect(const Vec3& origin, const Vec3& dir,
                                  double t_max = std::numeric_limits<double>::infinity()) const;
  bool occluded(const Vec3& origin, const Vec3& dir,
                double t_max = std::numeric_limits<double>::infinity()) const;

  ClosestPoint closest_point(const Vec3& q) const;

  std::size_t num_triangles() const { return tris_.size(); }

 private:
  struct Triangle {
    Vec3 a, b, c;
    int face;
  };
  struct Node {
    Eigen::AlignedBox3d box;
    int left = -1, right = -1;
    int begin = 0, end = 0;
  };
  void init(const LabeledMesh& mesh, std::span<const int> faces);
  int build(int begin, int end);
  template <bool AnyHit>
  std::optional<RayHit> trace(const Vec3& origin, const Vec3& dir, double t_max) const;

  std::vector<Triangle> tris_;
  std::vector<Node> nodes_;
};

/// Moller-Trumbore; returns t of the hit or nothing.
std::optional<double> ray_triangle(const Vec3& origin, const Vec3& dir, const Vec3& a, const Vec3& b, const Vec3& c);
Vec3 closest_point_on_triangle(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c);

}  // namespace shapemat
