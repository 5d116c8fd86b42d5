#pragma once

#include <span>
#include <vector>

#include "shapemat/mesh.hpp"

namespace shapemat {

/// Static 3-d tree over a point set. Ties in nearest queries resolve to the
/// lowest point index, so results never depend on build order.
class KdTree3 {
 public:
  KdTree3() = default;
  explicit KdTree3(std::span<const Vec3> points);

  std::size_t size() const { return points_.size(); }
  bool empty() const { return points_.empty(); }
  const Vec3& point(int i) const { return points_[i]; }

  /// Index of the nearest point, or -1 when empty.
  int nearest(const Vec3& q, double* dist2 = nullptr) const;
  /// Indices within `radius` (inclusive), sorted ascending.
  std::vector<int> within(const Vec3& q, double radius) const;
  /// `k` nearest indices ordered by (distance, index).
  std::vector<int> k_nearest(const Vec3& q, int k) const;

 private:
  struct Node {
    int begin, end;    // range into order_
    int left, right;   // children, -1 for leaves
    int axis;
    double split;
  };
  int build(int begin, int end, int depth);
  void nearest_rec(int node, const Vec3& q, int& best, double& best_d2) const;
  void within_rec(int node, const Vec3& q, double r2, std::vector<int>& out) const;

  std::vector<Vec3> points_;
  std::vector<int> order_;
  std::vector<Node> nodes_;
};

}  // namespace shapemat
