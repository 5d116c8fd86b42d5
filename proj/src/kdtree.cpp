#include "shapemat/kdtree.hpp"

#include <algorithm>
#include <limits>
#include <numeric>
#include <queue>

namespace shapemat {

namespace {
constexpr int kLeafSize = 12;
}

KdTree3::KdTree3(std::span<const Vec3> points) : points_(points.begin(), points.end()) {
  order_.resize(points_.size());
  std::iota(order_.begin(), order_.end(), 0);
  if (!points_.empty()) build(0, static_cast<int>(points_.size()), 0);
}

int KdTree3::build(int begin, int end, int depth) {
  const int id = static_cast<int>(nodes_.size());
  nodes_.push_back({begin, end, -1, -1, 0, 0.0});
  if (end - begin <= kLeafSize) return id;

  Vec3 lo = points_[order_[begin]], hi = lo;
  for (int i = begin; i < end; ++i) {
    lo = lo.cwiseMin(points_[order_[i]]);
    hi = hi.cwiseMax(points_[order_[i]]);
  }
  int axis = 0;
  (hi - lo).maxCoeff(&axis);
  const int mid = (begin + end) / 2;
  std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end, [&](int a, int b) {
    const double pa = points_[a][axis], pb = points_[b][axis];
    return pa < pb || (pa == pb && a < b);
  });
  const double split = points_[order_[mid]][axis];
  const int left = build(begin, mid, depth + 1);
  const int right = build(mid, end, depth + 1);
  nodes_[id].left = left;
  nodes_[id].right = right;
  nodes_[id].axis = axis;
  nodes_[id].split = split;
  return id;
}

void KdTree3::nearest_rec(int node, const Vec3& q, int& best, double& best_d2) const {
  const Node& n = nodes_[node];
  if (n.left < 0) {
    for (int i = n.begin; i < n.end; ++i) {
      const int p = order_[i];
      const double d2 = (points_[p] - q).squaredNorm();
      if (d2 < best_d2 || (d2 == best_d2 && p < best)) {
        best_d2 = d2;
        best = p;
      }
    }
    return;
  }
  const double diff = q[n.axis] - n.split;
  const int near = diff < 0 ? n.left : n.right;
  const int far = diff < 0 ? n.right : n.left;
  nearest_rec(near, q, best, best_d2);
  if (diff * diff <= best_d2) nearest_rec(far, q, best, best_d2);
}

int KdTree3::nearest(const Vec3& q, double* dist2) const {
  if (points_.empty()) return -1;
  int best = -1;
  double best_d2 = std::numeric_limits<double>::infinity();
  nearest_rec(0, q, best, best_d2);
  if (dist2) *dist2 = best_d2;
  return best;
}

void KdTree3::within_rec(int node, const Vec3& q, double r2, std::vector<int>& out) const {
  const Node& n = nodes_[node];
  if (n.left < 0) {
    for (int i = n.begin; i < n.end; ++i)
      if ((points_[order_[i]] - q).squaredNorm() <= r2) out.push_back(order_[i]);
    return;
  }
  const double diff = q[n.axis] - n.split;
  if (diff <= 0 || diff * diff <= r2) within_rec(n.left, q, r2, out);
  if (diff >= 0 || diff * diff <= r2) within_rec(n.right, q, r2, out);
}

std::vector<int> KdTree3::within(const Vec3& q, double radius) const {
  std::vector<int> out;
  if (points_.empty()) return out;
  within_rec(0, q, radius * radius, out);
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<int> KdTree3::k_nearest(const Vec3& q, int k) const {
  // Desk-scale sizes: widen a radius search until it holds k points.
  std::vector<int> out;
  if (points_.empty() || k <= 0) return out;
  k = std::min<int>(k, static_cast<int>(points_.size()));
  double d2 = 0.0;
  nearest(q, &d2);
  double r = std::max(std::sqrt(d2), 1e-12);
  for (;;) {
    out = within(q, r);
    if (static_cast<int>(out.size()) >= k) break;
    r *= 2.0;
  }
  std::sort(out.begin(), out.end(), [&](int a, int b) {
    const double da = (points_[a] - q).squaredNorm(), db = (points_[b] - q).squaredNorm();
    return da < db || (da == db && a < b);
  });
  out.resize(k);
  return out;
}

}  // namespace shapemat
