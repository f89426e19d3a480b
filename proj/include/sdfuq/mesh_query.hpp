#pragma once

#include "sdfuq/mesh.hpp"

#include <span>
#include <vector>

namespace sdfuq {

/// Closest point on triangle (a, b, c) to p.
Vec3 closest_point_on_triangle(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c);

struct ClosestHit {
  double distance = 0.0;
  Vec3 point = Vec3::Zero();
  std::size_t face = 0;
};

/// Axis-aligned bounding-volume hierarchy over the faces of a mesh. Queries are exact;
/// the tree only prunes. Holds a reference to the mesh, which must outlive it.
class TriangleBVH {
 public:
  explicit TriangleBVH(const TriMesh& mesh);

  ClosestHit closest(const Vec3& p) const;
  const TriMesh& mesh() const { return *mesh_; }

 private:
  struct Node {
    Vec3 lo, hi;
    int left = -1, right = -1;  // children, or -1 for leaves
    int begin = 0, end = 0;     // range in order_
  };
  int build(int begin, int end);
  void query(int node, const Vec3& p, ClosestHit& best, double& best_sq) const;

  const TriMesh* mesh_;
  std::vector<int> order_;
  std::vector<Vec3> centroid_;
  std::vector<Node> nodes_;
};

/// Generalized winding number of a triangle soup around p (1 inside a closed outward mesh).
double winding_number(const TriMesh& mesh, const Vec3& p);

struct SignedDistance {
  double value = 0.0;
  /// False when the mesh is not closed: the magnitude is exact, the sign is a guess.
  bool sign_reliable = true;
};

/// Signed distance to a triangle mesh: exact unsigned distance (BVH), negative where the
/// winding number exceeds 0.5.
class MeshSdf {
 public:
  explicit MeshSdf(const TriMesh& mesh);
  SignedDistance operator()(const Vec3& x) const;
  double unsigned_distance(const Vec3& x) const { return bvh_.closest(x).distance; }

 private:
  TriMesh mesh_;
  TriangleBVH bvh_;
  bool closed_;
};

SignedDistance mesh_sdf(const TriMesh& mesh, const Vec3& x);

}  // namespace sdfuq
