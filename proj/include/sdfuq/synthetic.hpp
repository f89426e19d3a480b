#pragma once

// Analytic four-surface shape family: two nested ellipsoid shells (inner = "endo",
// outer = "epi") for each of two ventricles. Surface order: 0 LV endo, 1 LV epi,
// 2 RV endo, 3 RV epi. Used as exact SDF ground truth at desk scale.

#include "sdfuq/observation.hpp"

#include <array>
#include <cstdint>
#include <vector>

namespace sdfuq {

/// Axis-aligned ellipsoid.
struct Ellipsoid {
  Vec3 center = Vec3::Zero();
  Vec3 semi_axes = Vec3::Ones();

  /// Exact signed Euclidean distance, negative inside (Newton on the projection equation).
  double sdf(const Vec3& x) const;
  Vec3 closest_point(const Vec3& x) const;
  /// Implicit value sum((x_i - c_i)^2 / a_i^2) - 1; negative inside.
  double implicit(const Vec3& x) const;
  Vec3 outward_normal(const Vec3& on_surface) const;
};

inline constexpr int kSyntheticSurfaces = 4;

struct SyntheticShape {
  int id = 0;
  std::array<Ellipsoid, kSyntheticSurfaces> surfaces;

  /// Signed distance to surface `surface` (0-based).
  double sdf(const Vec3& x, int surface) const;
  Vector sdf_all(const Vec3& x) const;
};

struct Range {
  double lo = 0.0;
  double hi = 0.0;
  double mid() const { return 0.5 * (lo + hi); }
};

struct EllipsoidFamilyParams {
  // Epicardial ellipsoids; the endocardial shell shares the center and has semi-axes
  // shrunk by the wall thickness.
  std::array<Range, 3> lv_center{Range{-0.2, -0.2}, Range{0.0, 0.0}, Range{0.0, 0.0}};
  std::array<Range, 3> lv_axes{Range{0.28, 0.36}, Range{0.30, 0.38}, Range{0.50, 0.62}};
  Range lv_wall{0.08, 0.12};
  std::array<Range, 3> rv_center{Range{0.25, 0.25}, Range{0.0, 0.0}, Range{0.0, 0.0}};
  std::array<Range, 3> rv_axes{Range{0.25, 0.33}, Range{0.30, 0.38}, Range{0.42, 0.52}};
  Range rv_wall{0.05, 0.08};

  int samples_per_shape = 2000;
  double surface_fraction = 0.7;
  std::array<double, 2> surface_sigmas{0.025, 0.0025};
  std::uint64_t seed = 0;

  /// Nesting margin >= 0.05 per axis, positive inner axes, every shell inside [-0.9, 0.9]^3.
  void validate() const;
};

/// Draws the shape parameters of member `id` (independent of how many others are drawn).
SyntheticShape draw_shape(const EllipsoidFamilyParams& params, int id);

/// N shapes with ids first_id.. and their training samples.
struct SyntheticMember {
  SyntheticShape shape;
  TrainingShape samples;
};
std::vector<SyntheticMember> generate_family(const EllipsoidFamilyParams& params, int n, int first_id = 0);

/// Area-uniform points on one analytic surface with outward unit normals.
std::vector<std::pair<Vec3, Vec3>> sample_ellipsoid_surface(const Ellipsoid& e, std::size_t n, std::uint64_t seed);

}  // namespace sdfuq
