#include "shapemat/bvh.hpp"

#include <Eigen/Geometry>
#include <algorithm>
#include <numeric>

namespace shapemat {

namespace {
constexpr int kLeafSize = 4;

bool ray_box(const Eigen::AlignedBox3d& box, const Vec3& origin, const Vec3& inv_dir, double t_max) {
  double t0 = 0.0, t1 = t_max;
  for (int k = 0; k < 3; ++k) {
    double tn = (box.min()[k] - origin[k]) * inv_dir[k];
    double tf = (box.max()[k] - origin[k]) * inv_dir[k];
    if (tn > tf) std::swap(tn, tf);
    // NaN from 0*inf means the ray lies in the slab plane; treat as inside.
    if (tn == tn) t0 = std::max(t0, tn);
    if (tf == tf) t1 = std::min(t1, tf);
    if (t0 > t1) return false;
  }
  return true;
}
}  // namespace

std::optional<double> ray_triangle(const Vec3& origin, const Vec3& dir, const Vec3& a, const Vec3& b,
                                   const Vec3& c) {
  const Vec3 e1 = b - a, e2 = c - a;
  const Vec3 p = dir.cross(e2);
  const double det = e1.dot(p);
  if (std::abs(det) < 1e-300) return std::nullopt;
  const double inv = 1.0 / det;
  const Vec3 s = origin - a;
  const double u = s.dot(p) * inv;
  if (u < 0.0 || u > 1.0) return std::nullopt;
  const Vec3 q = s.cross(e1);
  const double v = dir.dot(q) * inv;
  if (v < 0.0 || u + v > 1.0) return std::nullopt;
  const double t = e2.dot(q) * inv;
  if (t <= 0.0) return std::nullopt;
  return t;
}

// Ericson, Real-Time Collision Detection 5.1.5.
Vec3 closest_point_on_triangle(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c) {
  const Vec3 ab = b - a, ac = c - a, ap = p - a;
  const double d1 = ab.dot(ap), d2 = ac.dot(ap);
  if (d1 <= 0 && d2 <= 0) return a;
  const Vec3 bp = p - b;
  const double d3 = ab.dot(bp), d4 = ac.dot(bp);
  if (d3 >= 0 && d4 <= d3) return b;
  const double vc = d1 * d4 - d3 * d2;
  if (vc <= 0 && d1 >= 0 && d3 <= 0) return a + (d1 / (d1 - d3)) * ab;
  const Vec3 cp = p - c;
  const double d5 = ab.dot(cp), d6 = ac.dot(cp);
  if (d6 >= 0 && d5 <= d6) return c;
  const double vb = d5 * d2 - d1 * d6;
  if (vb <= 0 && d2 >= 0 && d6 <= 0) return a + (d2 / (d2 - d6)) * ac;
  const double va = d3 * d6 - d5 * d4;
  if (va <= 0 && (d4 - d3) >= 0 && (d5 - d6) >= 0) return b + ((d4 - d3) / ((d4 - d3) + (d5 - d6))) * (c - b);
  const double denom = 1.0 / (va + vb + vc);
  return a + ab * (vb * denom) + ac * (vc * denom);
}

TriangleBvh::TriangleBvh(const LabeledMesh& mesh) {
  std::vector<int> all(mesh.num_faces());
  std::iota(all.begin(), all.end(), 0);
  init(mesh, all);
}

TriangleBvh::TriangleBvh(const LabeledMesh& mesh, std::span<const int> faces) { init(mesh, faces); }

void TriangleBvh::init(const LabeledMesh& mesh, std::span<const int> faces) {
  tris_.reserve(faces.size());
  for (int f : faces) tris_.push_back({mesh.corner(f, 0), mesh.corner(f, 1), mesh.corner(f, 2), f});
  if (!tris_.empty()) build(0, static_cast<int>(tris_.size()));
}

int TriangleBvh::build(int begin, int end) {
  const int id = static_cast<int>(nodes_.size());
  nodes_.emplace_back();
  Eigen::AlignedBox3d box;
  Eigen::AlignedBox3d centroid_box;
  for (int i = begin; i < end; ++i) {
    box.extend(tris_[i].a).extend(tris_[i].b).extend(tris_[i].c);
    centroid_box.extend(Vec3((tris_[i].a + tris_[i].b + tris_[i].c) / 3.0));
  }
  nodes_[id].box = box;
  nodes_[id].begin = begin;
  nodes_[id].end = end;
  if (end - begin <= kLeafSize) return id;

  int axis = 0;
  centroid_box.sizes().maxCoeff(&axis);
  const int mid = (begin + end) / 2;
  std::nth_element(tris_.begin() + begin, tris_.begin() + mid, tris_.begin() + end,
                   [axis](const Triangle& x, const Triangle& y) {
                     const double cx = x.a[axis] + x.b[axis] + x.c[axis];
                     const double cy = y.a[axis] + y.b[axis] + y.c[axis];
                     return cx < cy || (cx == cy && x.face < y.face);
                   });
  const int left = build(begin, mid);
  const int right = build(mid, end);
  nodes_[id].left = left;
  nodes_[id].right = right;
  return id;
}

template <bool AnyHit>
std::optional<RayHit> TriangleBvh::trace(const Vec3& origin, const Vec3& dir, double t_max) const {
  if (nodes_.empty()) return std::nullopt;
  const Vec3 inv_dir = dir.cwiseInverse();
  std::optional<RayHit> best;
  double limit = t_max;
  int stack[128];
  int top = 0;
  stack[top++] = 0;
  while (top > 0) {
    const Node& n = nodes_[stack[--top]];
    if (!ray_box(n.box, origin, inv_dir, limit)) continue;
    if (n.left < 0) {
      for (int i = n.begin; i < n.end; ++i) {
        const auto& tri = tris_[i];
        auto t = ray_triangle(origin, dir, tri.a, tri.b, tri.c);
        if (!t || *t > limit) continue;
        if (!best || *t < best->t || (*t == best->t && tri.face < best->face)) best = RayHit{*t, tri.face};
        if constexpr (AnyHit) return best;
        limit = *t;
      }
      continue;
    }
    stack[top++] = n.left;
    stack[top++] = n.right;
  }
  return best;
}

std::optional<RayHit> TriangleBvh::intersect(const Vec3& origin, const Vec3& dir, double t_max) const {
  return trace<false>(origin, dir, t_max);
}

bool TriangleBvh::occluded(const Vec3& origin, const Vec3& dir, double t_max) const {
  return trace<true>(origin, dir, t_max).has_value();
}

ClosestPoint TriangleBvh::closest_point(const Vec3& q) const {
  ClosestPoint best;
  if (nodes_.empty()) return best;
  int stack[128];
  int top = 0;
  stack[top++] = 0;
  while (top > 0) {
    const Node& n = nodes_[stack[--top]];
    if (n.box.squaredExteriorDistance(q) > best.dist2) continue;
    if (n.left < 0) {
      for (int i = n.begin; i < n.end; ++i) {
        const auto& tri = tris_[i];
        const Vec3 p = closest_point_on_triangle(q, tri.a, tri.b, tri.c);
        const double d2 = (p - q).squaredNorm();
        if (d2 < best.dist2 || (d2 == best.dist2 && tri.face < best.face)) best = {p, d2, tri.face};
      }
      continue;
    }
    // Visit the nearer child first.
    const double dl = nodes_[n.left].box.squaredExteriorDistance(q);
    const double dr = nodes_[n.right].box.squaredExteriorDistance(q);
    if (dl < dr) {
      stack[top++] = n.right;
      stack[top++] = n.left;
    } else {
      stack[top++] = n.left;
      stack[top++] = n.right;
    }
  }
  return best;
}

}  // namespace shapemat
