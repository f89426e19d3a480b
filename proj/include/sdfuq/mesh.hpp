#pragma once

#include "sdfuq/observation.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <utility>
#include <vector>

namespace sdfuq {

using Face = std::array<int, 3>;

struct TriMesh {
  std::vector<Vec3> vertices;
  std::vector<Face> faces;

  bool empty() const { return faces.empty(); }
  double face_area(std::size_t f) const;
  /// Unit normal following the right-hand rule on the vertex order.
  Vec3 face_normal(std::size_t f) const;
  double area() const;
  /// Throws on out-of-range indices or non-finite coordinates.
  void validate() const;
  /// Drops faces with repeated indices or zero area.
  void remove_degenerate_faces();
  /// Every undirected edge is shared by exactly two faces.
  bool is_closed() const;
};

/// Subdivided icosahedron on the sphere of `radius` around `center`, faces oriented outward.
TriMesh make_icosphere(int subdivisions, double radius = 1.0, const Vec3& center = Vec3::Zero());

TriMesh read_obj(const std::filesystem::path& path);
void write_obj(const TriMesh& mesh, const std::filesystem::path& path);

struct SurfaceSample {
  Vec3 point;
  Vec3 normal;
};

/// Area-weighted uniform points on the faces (uniform barycentric), normal = face normal.
std::vector<SurfaceSample> sample_surface_points(const TriMesh& mesh, std::size_t count, std::uint64_t seed);

/// y_k = x_k + tau_k n_k with tau_k ~ N(0, zeta^2). Observations carry s = 0 and the
/// given surface index; `tau_out`, when non-null, receives the offsets.
PointCloud perturb_along_normals(std::span<const SurfaceSample> points, double zeta, int surface, std::uint64_t seed,
                                 std::vector<double>* tau_out = nullptr);

}  // namespace sdfuq
