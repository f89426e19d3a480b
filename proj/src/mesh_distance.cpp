#include "sdfuq/mesh_distance.hpp"

#include "sdfuq/mesh_query.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace sdfuq {

namespace serial {

std::vector<double> nearest_distances(std::span<const Vec3> points, const TriMesh& mesh) {
  require(!mesh.empty(), "nearest_distances: empty mesh");
  std::vector<double> out;
  out.reserve(points.size());
  for (const auto& p : points) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& f : mesh.faces)
      best = std::min(best, (closest_point_on_triangle(p, mesh.vertices[static_cast<std::size_t>(f[0])],
                                                       mesh.vertices[static_cast<std::size_t>(f[1])],
                                                       mesh.vertices[static_cast<std::size_t>(f[2])]) -
                             p)
                                .squaredNorm());
    out.push_back(std::sqrt(best));
  }
  return out;
}

}  // namespace serial

namespace parallel {

std::vector<double> nearest_distances(std::span<const Vec3> points, const TriMesh& mesh) {
  require(!mesh.empty(), "nearest_distances: empty mesh");
  const TriangleBVH bvh(mesh);
  std::vector<double> out(points.size());
  const auto n = static_cast<std::int64_t>(points.size());
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < n; ++i)
    out[static_cast<std::size_t>(i)] = bvh.closest(points[static_cast<std::size_t>(i)]).distance;
  return out;
}

}  // namespace parallel

namespace {

std::vector<Vec3> sample_points(const TriMesh& m, std::size_t n, std::uint64_t seed) {
  std::vector<Vec3> out;
  out.reserve(n);
  for (const auto& s : sample_surface_points(m, n, seed)) out.push_back(s.point);
  return out;
}

double mean(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size()); }

}  // namespace

MeshDistances mesh_distances(const TriMesh& a, const TriMesh& b, std::size_t n_samples, std::uint64_t seed) {
  require(!a.empty() && !b.empty(), "mesh distances: empty mesh");
  require(n_samples >= 1, "mesh distances: n_samples must be >= 1");
  const auto pa = sample_points(a, n_samples, seed);
  const auto pb = sample_points(b, n_samples, seed);
  const auto ab = parallel::nearest_distances(pa, b);
  const auto ba = parallel::nearest_distances(pb, a);
  MeshDistances d;
  d.chamfer = 0.5 * (mean(ab) + mean(ba));
  d.hausdorff = std::max(*std::max_element(ab.begin(), ab.end()), *std::max_element(ba.begin(), ba.end()));
  return d;
}

double chamfer(const TriMesh& a, const TriMesh& b, std::size_t n_samples, std::uint64_t seed) {
  return mesh_distances(a, b, n_samples, seed).chamfer;
}

double hausdorff(const TriMesh& a, const TriMesh& b, std::size_t n_samples, std::uint64_t seed) {
  return mesh_distances(a, b, n_samples, seed).hausdorff;
}

SurfaceError distance_to_surface(const TriMesh& mesh, const std::function<double(const Vec3&)>& sdf,
                                 std::size_t n_samples, std::uint64_t seed) {
  require(!mesh.empty(), "distance_to_surface: empty mesh");
  const auto pts = sample_points(mesh, n_samples, seed);
  SurfaceError e;
  for (const auto& p : pts) {
    const double d = std::abs(sdf(p));
    e.mean += d;
    e.max = std::max(e.max, d);
  }
  e.mean /= static_cast<double>(pts.size());
  return e;
}

}  // namespace sdfuq
