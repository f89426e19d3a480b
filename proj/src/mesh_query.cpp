#include "sdfuq/mesh_query.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

namespace sdfuq {

// Ericson, Real-Time Collision Detection, 5.1.5.
Vec3 closest_point_on_triangle(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c) {
  const Vec3 ab = b - a, ac = c - a, ap = p - a;
  const double d1 = ab.dot(ap), d2 = ac.dot(ap);
  if (d1 <= 0.0 && d2 <= 0.0) return a;
  const Vec3 bp = p - b;
  const double d3 = ab.dot(bp), d4 = ac.dot(bp);
  if (d3 >= 0.0 && d4 <= d3) return b;
  const double vc = d1 * d4 - d3 * d2;
  if (vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0) return a + (d1 / (d1 - d3)) * ab;
  const Vec3 cp = p - c;
  const double d5 = ab.dot(cp), d6 = ac.dot(cp);
  if (d6 >= 0.0 && d5 <= d6) return c;
  const double vb = d5 * d2 - d1 * d6;
  if (vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0) return a + (d2 / (d2 - d6)) * ac;
  const double va = d3 * d6 - d5 * d4;
  if (va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0) return b + ((d4 - d3) / ((d4 - d3) + (d5 - d6))) * (c - b);
  const double denom = 1.0 / (va + vb + vc);
  return a + ab * (vb * denom) + ac * (vc * denom);
}

TriangleBVH::TriangleBVH(const TriMesh& mesh) : mesh_(&mesh) {
  require(!mesh.empty(), "TriangleBVH: empty mesh");
  const int n = static_cast<int>(mesh.faces.size());
  order_.resize(static_cast<std::size_t>(n));
  std::iota(order_.begin(), order_.end(), 0);
  centroid_.resize(static_cast<std::size_t>(n));
  for (int f = 0; f < n; ++f) {
    const auto& t = mesh.faces[static_cast<std::size_t>(f)];
    centroid_[static_cast<std::size_t>(f)] = (mesh.vertices[t[0]] + mesh.vertices[t[1]] + mesh.vertices[t[2]]) / 3.0;
  }
  nodes_.reserve(static_cast<std::size_t>(2 * n));
  build(0, n);
}

int TriangleBVH::build(int begin, int end) {
  Node node;
  node.lo = Vec3::Constant(std::numeric_limits<double>::infinity());
  node.hi = -node.lo;
  for (int i = begin; i < end; ++i)
    for (int v : mesh_->faces[static_cast<std::size_t>(order_[static_cast<std::size_t>(i)])]) {
      node.lo = node.lo.cwiseMin(mesh_->vertices[static_cast<std::size_t>(v)]);
      node.hi = node.hi.cwiseMax(mesh_->vertices[static_cast<std::size_t>(v)]);
    }
  node.begin = begin;
  node.end = end;
  const int idx = static_cast<int>(nodes_.size());
  nodes_.push_back(node);
  if (end - begin <= 4) return idx;

  Eigen::Index axis;
  (node.hi - node.lo).maxCoeff(&axis);
  const int mid = (begin + end) / 2;
  std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end, [&](int a, int b) {
    return centroid_[static_cast<std::size_t>(a)](axis) < centroid_[static_cast<std::size_t>(b)](axis);
  });
  const int left = build(begin, mid);
  const int right = build(mid, end);
  nodes_[static_cast<std::size_t>(idx)].left = left;
  nodes_[static_cast<std::size_t>(idx)].right = right;
  return idx;
}

namespace {

double box_sq_distance(const Vec3& p, const Vec3& lo, const Vec3& hi) {
  const Vec3 d = (lo - p).cwiseMax(Vec3::Zero()).cwiseMax(p - hi);
  return d.squaredNorm();
}

}  // namespace

void TriangleBVH::query(int ni, const Vec3& p, ClosestHit& best, double& best_sq) const {
  const Node& node = nodes_[static_cast<std::size_t>(ni)];
  if (node.left < 0) {
    for (int i = node.begin; i < node.end; ++i) {
      const auto f = static_cast<std::size_t>(order_[static_cast<std::size_t>(i)]);
      const auto& t = mesh_->faces[f];
      const Vec3 q = closest_point_on_triangle(p, mesh_->vertices[t[0]], mesh_->vertices[t[1]], mesh_->vertices[t[2]]);
      const double d2 = (q - p).squaredNorm();
      if (d2 < best_sq || (d2 == best_sq && f < best.face)) {
        best_sq = d2;
        best.point = q;
        best.face = f;
      }
    }
    return;
  }
  const Node& l = nodes_[static_cast<std::size_t>(node.left)];
  const Node& r = nodes_[static_cast<std::size_t>(node.right)];
  const double dl = box_sq_distance(p, l.lo, l.hi), dr = box_sq_distance(p, r.lo, r.hi);
  const int first = dl <= dr ? node.left : node.right;
  const int second = dl <= dr ? node.right : node.left;
  if (std::min(dl, dr) <= best_sq) query(first, p, best, best_sq);
  if (std::max(dl, dr) <= best_sq) query(second, p, best, best_sq);
}

ClosestHit TriangleBVH::closest(const Vec3& p) const {
  ClosestHit best;
  best.face = mesh_->faces.size();
  double best_sq = std::numeric_limits<double>::infinity();
  query(0, p, best, best_sq);
  best.distance = std::sqrt(best_sq);
  return best;
}

double winding_number(const TriMesh& mesh, const Vec3& p) {
  double total = 0.0;
  for (const auto& f : mesh.faces) {
    const Vec3 a = mesh.vertices[static_cast<std::size_t>(f[0])] - p;
    const Vec3 b = mesh.vertices[static_cast<std::size_t>(f[1])] - p;
    const Vec3 c = mesh.vertices[static_cast<std::size_t>(f[2])] - p;
    const double la = a.norm(), lb = b.norm(), lc = c.norm();
    // Van Oosterom & Strackee solid angle.
    const double num = a.dot(b.cross(c));
    const double den = la * lb * lc + a.dot(b) * lc + a.dot(c) * lb + b.dot(c) * la;
    total += 2.0 * std::atan2(num, den);
  }
  return total / (4.0 * std::numbers::pi);
}

MeshSdf::MeshSdf(const TriMesh& mesh) : mesh_(mesh), bvh_(mesh_), closed_(mesh_.is_closed()) {
  mesh_.validate();
}

SignedDistance MeshSdf::operator()(const Vec3& x) const {
  const double d = bvh_.closest(x).distance;
  const bool inside = winding_number(mesh_, x) > 0.5;
  return {inside ? -d : d, closed_};
}

SignedDistance mesh_sdf(const TriMesh& mesh, const Vec3& x) { return MeshSdf(mesh)(x); }

}  // namespace sdfuq
