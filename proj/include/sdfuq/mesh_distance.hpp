#pragma once

#include "sdfuq/mesh.hpp"

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

namespace sdfuq {

/// Distance from every point to the nearest point of `mesh`. `serial::` scans all faces
/// (reference); `parallel::` uses a BVH and OpenMP. Both are exact.
namespace serial {
std::vector<double> nearest_distances(std::span<const Vec3> points, const TriMesh& mesh);
}
namespace parallel {
std::vector<double> nearest_distances(std::span<const Vec3> points, const TriMesh& mesh);
}

struct MeshDistances {
  double chamfer = 0.0;    // 0.5 (mean A->B + mean B->A)
  double hausdorff = 0.0;  // max(max A->B, max B->A)
};

/// Point-sampled symmetric distances; A and B are both sampled with `n_samples` points
/// and the same seed, so swapping the arguments gives the same result.
MeshDistances mesh_distances(const TriMesh& a, const TriMesh& b, std::size_t n_samples, std::uint64_t seed);
double chamfer(const TriMesh& a, const TriMesh& b, std::size_t n_samples, std::uint64_t seed);
double hausdorff(const TriMesh& a, const TriMesh& b, std::size_t n_samples, std::uint64_t seed);

/// Mean and max |sdf| over points sampled on `mesh`, against an analytic signed distance.
struct SurfaceError {
  double mean = 0.0;
  double max = 0.0;
};
SurfaceError distance_to_surface(const TriMesh& mesh, const std::function<double(const Vec3&)>& sdf,
                                 std::size_t n_samples, std::uint64_t seed);

}  // namespace sdfuq
