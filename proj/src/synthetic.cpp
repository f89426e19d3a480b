#include "sdfuq/synthetic.hpp"

#include "sdfuq/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace sdfuq {

namespace {

// Root of F(t) = sum_i (e_i y_i / (t + e_i^2))^2 - 1 for y_i > 0, sorted e_0 >= ... >= e_{n-1}.
// F is convex and decreasing on (-e_min^2, inf); Newton from a point with F >= 0
// increases monotonically to the root.
double projection_root(const double* e, const double* y, int n) {
  double t = -std::numeric_limits<double>::infinity();
  for (int i = 0; i < n; ++i) t = std::max(t, e[i] * y[i] - e[i] * e[i]);
  for (int it = 0; it < 100; ++it) {
    double f = -1.0, df = 0.0;
    for (int i = 0; i < n; ++i) {
      const double q = e[i] * y[i] / (t + e[i] * e[i]);
      f += q * q;
      df += -2.0 * q * q / (t + e[i] * e[i]);
    }
    if (f <= 0.0) return t;
    const double next = t - f / df;
    if (!(next > t) || next - t <= 1e-15 * std::max(1.0, std::abs(t))) return next;
    t = next;
  }
  throw NumericalError("ellipsoid projection: Newton iteration did not converge in 100 steps");
}

// Closest point on an ellipse (e0 >= e1) to y >= 0.
void closest_ellipse(double e0, double e1, double y0, double y1, double& x0, double& x1) {
  if (y1 > 0.0) {
    if (y0 > 0.0) {
      const double e[2] = {e0, e1}, y[2] = {y0, y1};
      const double t = projection_root(e, y, 2);
      x0 = e0 * e0 * y0 / (t + e0 * e0);
      x1 = e1 * e1 * y1 / (t + e1 * e1);
    } else {
      x0 = 0.0;
      x1 = e1;
    }
    return;
  }
  const double numer0 = e0 * y0, denom0 = e0 * e0 - e1 * e1;
  if (numer0 < denom0) {
    const double xde0 = numer0 / denom0;
    x0 = e0 * xde0;
    x1 = e1 * std::sqrt(std::max(0.0, 1.0 - xde0 * xde0));
  } else {
    x0 = e0;
    x1 = 0.0;
  }
}

// Closest point on an ellipsoid (e0 >= e1 >= e2) to y >= 0.
void closest_ellipsoid(const double e[3], const double y[3], double x[3]) {
  if (y[2] > 0.0) {
    if (y[1] > 0.0) {
      if (y[0] > 0.0) {
        const double t = projection_root(e, y, 3);
        for (int i = 0; i < 3; ++i) x[i] = e[i] * e[i] * y[i] / (t + e[i] * e[i]);
      } else {
        x[0] = 0.0;
        closest_ellipse(e[1], e[2], y[1], y[2], x[1], x[2]);
      }
    } else {
      x[1] = 0.0;
      if (y[0] > 0.0) {
        closest_ellipse(e[0], e[2], y[0], y[2], x[0], x[2]);
      } else {
        x[0] = 0.0;
        x[2] = e[2];
      }
    }
    return;
  }
  const double denom0 = e[0] * e[0] - e[2] * e[2], denom1 = e[1] * e[1] - e[2] * e[2];
  const double numer0 = e[0] * y[0], numer1 = e[1] * y[1];
  if (numer0 < denom0 && numer1 < denom1) {
    const double xde0 = numer0 / denom0, xde1 = numer1 / denom1;
    const double discr = 1.0 - xde0 * xde0 - xde1 * xde1;
    if (discr > 0.0) {
      x[0] = e[0] * xde0;
      x[1] = e[1] * xde1;
      x[2] = e[2] * std::sqrt(discr);
      return;
    }
  }
  x[2] = 0.0;
  closest_ellipse(e[0], e[1], y[0], y[1], x[0], x[1]);
}

}  // namespace

Vec3 Ellipsoid::closest_point(const Vec3& p) const {
  const Vec3 local = p - center;
  std::array<int, 3> perm{0, 1, 2};
  std::sort(perm.begin(), perm.end(), [&](int a, int b) { return semi_axes(a) > semi_axes(b); });
  double e[3], y[3], x[3];
  for (int i = 0; i < 3; ++i) {
    e[i] = semi_axes(perm[i]);
    y[i] = std::abs(local(perm[i]));
    // Components this small are treated as lying on the symmetry plane.
    if (y[i] < 1e-12 * e[0]) y[i] = 0.0;
  }
  closest_ellipsoid(e, y, x);
  Vec3 out;
  for (int i = 0; i < 3; ++i) out(perm[i]) = std::copysign(x[i], local(perm[i]));
  return out + center;
}

double Ellipsoid::implicit(const Vec3& x) const {
  return ((x - center).array() / semi_axes.array()).square().sum() - 1.0;
}

double Ellipsoid::sdf(const Vec3& x) const {
  const double dist = (closest_point(x) - x).norm();
  return implicit(x) < 0.0 ? -dist : dist;
}

Vec3 Ellipsoid::outward_normal(const Vec3& p) const {
  return ((p - center).array() / semi_axes.array().square()).matrix().normalized();
}

double SyntheticShape::sdf(const Vec3& x, int surface) const {
  require(surface >= 0 && surface < kSyntheticSurfaces, "synthetic surface index out of range");
  return surfaces[static_cast<std::size_t>(surface)].sdf(x);
}

Vector SyntheticShape::sdf_all(const Vec3& x) const {
  Vector s(kSyntheticSurfaces);
  for (int l = 0; l < kSyntheticSurfaces; ++l) s(l) = surfaces[static_cast<std::size_t>(l)].sdf(x);
  return s;
}

void EllipsoidFamilyParams::validate() const {
  auto check_range = [](const Range& r, const char* what) {
    require(std::isfinite(r.lo) && std::isfinite(r.hi) && r.lo <= r.hi, std::string(what) + ": invalid range");
  };
  auto check_ventricle = [&](const std::array<Range, 3>& c, const std::array<Range, 3>& a, const Range& wall,
                             const char* name) {
    check_range(wall, name);
    require(wall.lo >= 0.05, std::string(name) + ": wall thickness must be >= 0.05 (nesting margin)");
    for (int i = 0; i < 3; ++i) {
      check_range(c[i], name);
      check_range(a[i], name);
      require(a[i].lo - wall.hi > 0.0, std::string(name) + ": inner semi-axes must stay positive");
      const double reach = std::max(std::abs(c[i].lo), std::abs(c[i].hi)) + a[i].hi;
      require(reach <= 0.9, std::string(name) + ": shell leaves [-0.9, 0.9]^3");
    }
  };
  check_ventricle(lv_center, lv_axes, lv_wall, "lv");
  check_ventricle(rv_center, rv_axes, rv_wall, "rv");
  require(samples_per_shape >= 1, "samples_per_shape must be >= 1");
  require(surface_fraction >= 0.0 && surface_fraction <= 1.0, "surface_fraction must lie in [0, 1]");
  require(surface_sigmas[0] >= 0.0 && surface_sigmas[1] >= 0.0, "surface_sigmas must be >= 0");
}

namespace {

double draw(const Range& r, Rng& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  return r.lo + (r.hi - r.lo) * u(rng);
}

}  // namespace

SyntheticShape draw_shape(const EllipsoidFamilyParams& params, int id) {
  params.validate();
  Rng rng = make_rng(params.seed, "shape", static_cast<std::uint64_t>(id));
  SyntheticShape s;
  s.id = id;
  auto ventricle = [&](const std::array<Range, 3>& c, const std::array<Range, 3>& a, const Range& wall, int endo) {
    Ellipsoid epi;
    for (int i = 0; i < 3; ++i) epi.center(i) = draw(c[i], rng);
    for (int i = 0; i < 3; ++i) epi.semi_axes(i) = draw(a[i], rng);
    const double w = draw(wall, rng);
    Ellipsoid inner = epi;
    inner.semi_axes.array() -= w;
    s.surfaces[static_cast<std::size_t>(endo)] = inner;
    s.surfaces[static_cast<std::size_t>(endo + 1)] = epi;
  };
  ventricle(params.lv_center, params.lv_axes, params.lv_wall, 0);
  ventricle(params.rv_center, params.rv_axes, params.rv_wall, 2);
  return s;
}

std::vector<std::pair<Vec3, Vec3>> sample_ellipsoid_surface(const Ellipsoid& e, std::size_t n, std::uint64_t seed) {
  // Rejection on the area element of the map from the unit sphere.
  Rng rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double a = e.semi_axes(0), b = e.semi_axes(1), c = e.semi_axes(2);
  const double gmax = std::max({a * b, a * c, b * c});
  std::vector<std::pair<Vec3, Vec3>> out;
  out.reserve(n);
  while (out.size() < n) {
    Vec3 d(g(rng), g(rng), g(rng));
    const double len = d.norm();
    if (len == 0.0) continue;
    d /= len;
    const double area = std::sqrt(std::pow(d(0) * b * c, 2) + std::pow(d(1) * a * c, 2) + std::pow(d(2) * a * b, 2));
    if (u(rng) * gmax > area) continue;
    const Vec3 p = e.center + (d.array() * e.semi_axes.array()).matrix();
    out.emplace_back(p, e.outward_normal(p));
  }
  return out;
}

std::vector<SyntheticMember> generate_family(const EllipsoidFamilyParams& params, int n, int first_id) {
  params.validate();
  require(n >= 1, "generate_family: N must be >= 1");
  std::vector<SyntheticMember> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const int id = first_id + i;
    SyntheticMember m;
    m.shape = draw_shape(params, id);
    m.samples.id = id;
    Rng rng = make_rng(params.seed, "samples", static_cast<std::uint64_t>(id));
    std::uniform_real_distribution<double> box(-1.0, 1.0);
    const auto K = static_cast<std::size_t>(params.samples_per_shape);
    const auto n_surface = static_cast<std::size_t>(std::lround(params.surface_fraction * static_cast<double>(K)));
    m.samples.points.reserve(K);
    for (std::size_t k = 0; k < n_surface; ++k) {
      const int surf = static_cast<int>(k % kSyntheticSurfaces);
      const double sigma = params.surface_sigmas[(k / kSyntheticSurfaces) % 2];
      const auto on = sample_ellipsoid_surface(m.shape.surfaces[static_cast<std::size_t>(surf)], 1, rng());
      std::normal_distribution<double> off(0.0, sigma);
      Vec3 p = on.front().first;
      if (sigma > 0.0) p += Vec3(off(rng), off(rng), off(rng));
      m.samples.points.push_back(p);
    }
    while (m.samples.points.size() < K) m.samples.points.emplace_back(box(rng), box(rng), box(rng));
    m.samples.distances.resize(kSyntheticSurfaces, static_cast<Eigen::Index>(K));
    for (std::size_t k = 0; k < K; ++k)
      m.samples.distances.col(static_cast<Eigen::Index>(k)) = m.shape.sdf_all(m.samples.points[k]);
    out.push_back(std::move(m));
  }
  return out;
}

}  // namespace sdfuq
