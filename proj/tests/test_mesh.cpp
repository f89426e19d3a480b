#include "sdfuq/mesh.hpp"
#include "sdfuq/mesh_query.hpp"
#include "sdfuq/rng.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>

using namespace sdfuq;

namespace {

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

TriMesh single_triangle() {
  TriMesh m;
  m.vertices = {Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(0, 1, 0)};
  m.faces = {{0, 1, 2}};
  return m;
}

}  // namespace

TEST_CASE("icosphere is closed, outward and has the expected size") {
  const auto m = make_icosphere(3);
  CHECK(m.faces.size() == 1280);
  CHECK(m.vertices.size() == 642);
  CHECK(m.is_closed());
  for (const auto& v : m.vertices) CHECK(v.norm() == doctest::Approx(1.0));
  for (std::size_t f = 0; f < m.faces.size(); ++f) {
    const auto& t = m.faces[f];
    const Vec3 c = (m.vertices[t[0]] + m.vertices[t[1]] + m.vertices[t[2]]) / 3.0;
    CHECK(m.face_normal(f).dot(c) > 0.0);
  }
  CHECK(winding_number(m, Vec3::Zero()) == doctest::Approx(1.0));
  CHECK(winding_number(m, Vec3(3, 0, 0)) == doctest::Approx(0.0).scale(1));
}

TEST_CASE("closest point on triangle matches dense barycentric search") {
  Rng rng(2);
  std::uniform_real_distribution<double> u(-1.5, 1.5);
  const Vec3 a(0, 0, 0), b(1, 0.2, 0), c(0.3, 0.9, 0.1);
  for (int i = 0; i < 200; ++i) {
    const Vec3 p(u(rng), u(rng), u(rng));
    const double exact = (closest_point_on_triangle(p, a, b, c) - p).norm();
    double best = std::numeric_limits<double>::infinity();
    const int n = 200;
    for (int s = 0; s <= n; ++s)
      for (int t = 0; s + t <= n; ++t) {
        const Vec3 q = a + (b - a) * (double(s) / n) + (c - a) * (double(t) / n);
        best = std::min(best, (q - p).norm());
      }
    CHECK(exact <= best + 1e-12);
    CHECK(best - exact < 5e-3);
  }
}

TEST_CASE("BVH closest point equals brute force over all faces") {
  const auto m = make_icosphere(2, 0.7, Vec3(0.1, 0, -0.2));
  TriangleBVH bvh(m);
  Rng rng(3);
  std::uniform_real_distribution<double> u(-1.5, 1.5);
  for (int i = 0; i < 300; ++i) {
    const Vec3 p(u(rng), u(rng), u(rng));
    double best = std::numeric_limits<double>::infinity();
    for (const auto& f : m.faces)
      best = std::min(best, (closest_point_on_triangle(p, m.vertices[f[0]], m.vertices[f[1]], m.vertices[f[2]]) - p).norm());
    CHECK(bvh.closest(p).distance == best);
  }
}

TEST_CASE("mesh_sdf on a unit icosphere") {
  const auto m = make_icosphere(3);
  MeshSdf sdf(m);
  CHECK(sdf(Vec3::Zero()).value == doctest::Approx(-1.0).epsilon(0.01));
  CHECK(sdf(Vec3(10, 0, 0)).value == doctest::Approx(9.0).epsilon(0.01 / 9.0));
  CHECK(sdf(m.vertices[17]).value == 0.0);
  CHECK(sdf(Vec3::Zero()).sign_reliable);
  CHECK(mesh_sdf(m, Vec3(0, 0.5, 0)).value < 0.0);
}

TEST_CASE("mesh_sdf sign agrees with the winding number and the analytic sphere") {
  const auto m = make_icosphere(3);
  MeshSdf sdf(m);
  Rng rng(4);
  std::uniform_real_distribution<double> u(-1.5, 1.5);
  for (int i = 0; i < 1000; ++i) {
    const Vec3 p(u(rng), u(rng), u(rng));
    const double s = sdf(p).value;
    const double w = winding_number(m, p);
    CHECK((s < 0.0) == (w > 0.5));
    CHECK(std::abs(w - std::round(w)) < 1e-9);
    if (std::abs(p.norm() - 1.0) > 0.02) CHECK((s < 0.0) == (p.norm() < 1.0));
  }
}

TEST_CASE("open meshes flag the sign as unreliable") {
  auto m = make_icosphere(1);
  m.faces.pop_back();
  MeshSdf sdf(m);
  const auto r = sdf(Vec3(2, 0, 0));
  CHECK_FALSE(r.sign_reliable);
  CHECK(r.value > 0.0);
}

TEST_CASE("sample_surface_points") {
  const auto tri = single_triangle();
  const auto one = sample_surface_points(tri, 1, 5);
  REQUIRE(one.size() == 1);
  const Vec3 p = one[0].point;
  CHECK(p.z() == 0.0);
  CHECK(p.x() >= 0.0);
  CHECK(p.y() >= 0.0);
  CHECK(p.x() + p.y() <= 1.0 + 1e-15);
  CHECK(one[0].normal.isApprox(Vec3(0, 0, 1)));

  const auto sphere = make_icosphere(4);
  const auto pts = sample_surface_points(sphere, 10000, 6);
  double mean = 0.0;
  for (const auto& s : pts) mean += s.point.norm();
  mean /= static_cast<double>(pts.size());
  CHECK(std::abs(mean - 1.0) < 0.005);

  const auto again = sample_surface_points(sphere, 10000, 6);
  CHECK(std::equal(pts.begin(), pts.end(), again.begin(),
                   [](const auto& a, const auto& b) { return a.point == b.point && a.normal == b.normal; }));
  CHECK_THROWS_AS(sample_surface_points(TriMesh{}, 3, 1), InvalidArgument);
  CHECK_THROWS_AS(sample_surface_points(tri, 0, 1), InvalidArgument);
}

TEST_CASE("perturb_along_normals") {
  const auto sphere = make_icosphere(2);
  const auto pts = sample_surface_points(sphere, 100000, 8);

  const auto exact = perturb_along_normals(pts, 0.0, 2, 1);
  for (std::size_t k = 0; k < pts.size(); ++k) {
    CHECK(exact[k].x == pts[k].point);
    CHECK(exact[k].s == 0.0);
    CHECK(exact[k].surface == 2);
  }

  std::vector<double> tau;
  const auto noisy = perturb_along_normals(pts, 0.1, 0, 9, &tau);
  double var = 0.0;
  for (std::size_t k = 0; k < pts.size(); ++k) {
    const double along = (noisy[k].x - pts[k].point).dot(pts[k].normal);
    CHECK(along == doctest::Approx(tau[k]).epsilon(1e-9).scale(1e-9));
    var += along * along;
  }
  var /= static_cast<double>(pts.size());
  CHECK(std::abs(var - 0.01) < 0.05 * 0.01);

  // Kolmogorov-Smirnov against N(0, zeta^2) on 1e4 draws at the 1% level.
  std::vector<double> t(tau.begin(), tau.begin() + 10000);
  std::sort(t.begin(), t.end());
  double D = 0.0;
  const double n = static_cast<double>(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) {
    const double F = normal_cdf(t[i] / 0.1);
    D = std::max({D, F - double(i) / n, double(i + 1) / n - F});
  }
  CHECK(D < 1.628 / std::sqrt(n));

  const auto again = perturb_along_normals(pts, 0.1, 0, 9);
  CHECK(again[123].x == noisy[123].x);
  CHECK_THROWS_AS(perturb_along_normals(pts, -1.0, 0, 1), InvalidArgument);
}

TEST_CASE("OBJ round trip and degenerate-face cleanup") {
  auto m = make_icosphere(1, 0.5, Vec3(0.1, 0.2, 0.3));
  const auto path = std::filesystem::temp_directory_path() / "sdfuq_test_mesh.obj";
  write_obj(m, path);
  const auto r = read_obj(path);
  std::filesystem::remove(path);
  CHECK(r.faces == m.faces);
  for (std::size_t i = 0; i < m.vertices.size(); ++i) CHECK(r.vertices[i] == m.vertices[i]);

  m.faces.push_back({0, 0, 1});
  m.vertices.push_back(m.vertices[0]);
  m.faces.push_back({0, static_cast<int>(m.vertices.size()) - 1, 1});
  m.remove_degenerate_faces();
  CHECK(m.faces.size() == 80);

  TriMesh bad;
  bad.vertices = {Vec3::Zero()};
  bad.faces = {{0, 1, 2}};
  CHECK_THROWS_AS(bad.validate(), InvalidArgument);
}
