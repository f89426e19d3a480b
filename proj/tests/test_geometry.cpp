#include "sdfuq/marching_cubes.hpp"
#include "sdfuq/mesh_distance.hpp"
#include "sdfuq/mesh_query.hpp"
#include "sdfuq/rng.hpp"
#include "sdfuq/voxel.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>

using namespace sdfuq;

namespace {

double signed_volume(const TriMesh& m) {
  double v = 0.0;
  for (const auto& f : m.faces)
    v += m.vertices[static_cast<std::size_t>(f[0])].dot(
             m.vertices[static_cast<std::size_t>(f[1])].cross(m.vertices[static_cast<std::size_t>(f[2])])) /
         6.0;
  return v;
}

ScalarField sphere_field(double r, Vec3 c = Vec3::Zero()) {
  return [r, c](const Vec3& x) { return (x - c).norm() - r; };
}

}  // namespace

TEST_CASE("grid spec indexing and validation") {
  const auto g = GridSpec::cube(5);
  CHECK(g.node_count() == 125);
  CHECK(g.node(0, 0, 0) == Vec3::Constant(-1.0));
  CHECK(g.node(4, 4, 4) == Vec3::Constant(1.0));
  CHECK(g.node(2, 1, 3).isApprox(Vec3(0.0, -0.5, 0.5)));
  CHECK(g.index(1, 2, 3) == 1 + 5 * (2 + 5 * 3));
  CHECK(g.cell_size() == doctest::Approx(0.5));
  const auto nodes = g.nodes();
  CHECK(nodes[g.index(3, 0, 2)] == g.node(3, 0, 2));
  CHECK_THROWS_AS(GridSpec::cube(1).validate(), InvalidArgument);
  CHECK_THROWS_AS((GridSpec{{4, 4, 4}, Vec3::Zero(), Vec3(1, 0, 1)}).validate(), InvalidArgument);
}

TEST_CASE("marching cubes on a sphere field") {
  const auto spec = GridSpec::cube(64);
  const auto m = extract_zero_level(sphere_field(0.5), spec);
  REQUIRE_FALSE(m.empty());
  const double diag = std::sqrt(3.0) * spec.cell_size();
  for (const auto& v : m.vertices) CHECK(std::abs(v.norm() - 0.5) <= diag);
  CHECK(m.is_closed());
  // outward: along increasing field value
  for (std::size_t f = 0; f < m.faces.size(); ++f) {
    const auto& t = m.faces[f];
    const Vec3 c = (m.vertices[static_cast<std::size_t>(t[0])] + m.vertices[static_cast<std::size_t>(t[1])] +
                    m.vertices[static_cast<std::size_t>(t[2])]) /
                   3.0;
    CHECK(m.face_normal(f).dot(c) > 0.0);
  }
  const double vol = signed_volume(m);
  CHECK(vol == doctest::Approx(4.0 / 3.0 * M_PI * 0.125).epsilon(0.02));
  CHECK(winding_number(m, Vec3::Zero()) == doctest::Approx(1.0));
}

TEST_CASE("marching cubes is exact on linear fields and empty without crossings") {
  const auto spec = GridSpec::cube(17);
  const auto plane = extract_zero_level([](const Vec3& x) { return x(0) - 0.3; }, spec);
  REQUIRE_FALSE(plane.empty());
  for (const auto& v : plane.vertices) CHECK(std::abs(v(0) - 0.3) < 1e-9);
  for (std::size_t f = 0; f < plane.faces.size(); ++f) CHECK(plane.face_normal(f)(0) == doctest::Approx(1.0));

  CHECK(extract_zero_level([](const Vec3&) { return 1.0; }, spec).empty());
  CHECK(extract_zero_level([](const Vec3&) { return -1.0; }, spec).empty());
}

TEST_CASE("marching cubes: crossings exactly on nodes share one vertex") {
  const auto spec = GridSpec::cube(9);  // nodes at multiples of 0.25
  const auto m = extract_zero_level([](const Vec3& x) { return x(1) - 0.25; }, spec);
  REQUIRE_FALSE(m.empty());
  for (const auto& v : m.vertices) CHECK(v(1) == 0.25);
  CHECK(m.vertices.size() == 81);
}

TEST_CASE("marching cubes is watertight on offset ellipsoid-like fields") {
  const auto spec = GridSpec::cube(40);
  const ScalarField f = [](const Vec3& x) {
    return std::sqrt(std::pow(x(0) / 0.5, 2) + std::pow(x(1) / 0.35, 2) + std::pow((x(2) - 0.1) / 0.6, 2)) - 1.0;
  };
  const auto m = extract_zero_level(f, spec);
  CHECK(m.is_closed());
  CHECK(signed_volume(m) > 0.0);
}

TEST_CASE("extract_zero_level on a network matches the sampled-field path") {
  const auto net = ShapeNetwork::init(2, 3, 3, 16, 4);
  const Vector z = Vector::Constant(2, 0.1);
  const auto spec = GridSpec::cube(12);
  const auto g = sample_grid(spec, net, z, 1);
  const auto nodes = spec.nodes();
  for (std::size_t i = 0; i < nodes.size(); i += 37) CHECK(g.values[i] == doctest::Approx(net.forward(nodes[i], z)(1)));
  const auto a = extract_zero_level(net, z, 1, spec);
  const auto b = marching_cubes(g, 0.0);
  CHECK(a.faces == b.faces);
  CHECK_THROWS_AS(extract_zero_level(net, z, 3, spec), InvalidArgument);
}

TEST_CASE("nearest distances: serial reference equals BVH version") {
  const auto m = make_icosphere(2, 0.6);
  Rng rng(1);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<Vec3> pts;
  for (int i = 0; i < 500; ++i) pts.emplace_back(u(rng), u(rng), u(rng));
  CHECK(serial::nearest_distances(pts, m) == parallel::nearest_distances(pts, m));
}

TEST_CASE("chamfer and hausdorff") {
  const auto a = make_icosphere(3);
  const auto d0 = mesh_distances(a, a, 2000, 3);
  CHECK(d0.chamfer < 1e-12);
  CHECK(d0.hausdorff < 1e-12);

  const auto b = make_icosphere(3, 1.0, Vec3(0.2, 0, 0));
  const double hd = hausdorff(a, b, 20000, 5);
  CHECK(std::abs(hd - 0.2) < 0.01);
  CHECK(chamfer(a, b, 3000, 7) == chamfer(b, a, 3000, 7));
  CHECK(hausdorff(a, b, 3000, 7) == hausdorff(b, a, 3000, 7));
  CHECK(chamfer(a, b, 3000, 7) > 0.0);
  CHECK(chamfer(a, b, 3000, 7) < hd);
  CHECK_THROWS_AS(chamfer(a, TriMesh{}, 10, 1), InvalidArgument);
}

TEST_CASE("distance_to_surface against an analytic sphere") {
  const auto m = make_icosphere(4, 0.5);
  const auto e = distance_to_surface(m, sphere_field(0.5), 5000, 2);
  CHECK(e.mean < 2e-3);
  CHECK(e.max < 5e-3);
  CHECK(e.mean <= e.max);
}

TEST_CASE("certainty map: identical samples and thresholds") {
  const auto net = ShapeNetwork::init(2, 1, 3, 16, 8);
  const std::vector<LatentCode> same(5, Vector::Constant(2, 0.3));
  const auto spec = GridSpec::cube(10);
  const double tol = 0.05;
  const auto c = certainty_map(net, same, 0, spec, tol, 5);
  for (std::size_t i = 0; i < c.counts.values.size(); ++i) {
    const auto n = c.counts.values[i];
    CHECK((n == 0 || n == 5));
    CHECK(c.mask.values[i] == (n == 5 ? 1u : 0u));
  }
  const auto g = sample_grid(spec, net, same[0], 0);
  for (std::size_t i = 0; i < g.values.size(); ++i) CHECK((c.counts.values[i] == 5) == (std::abs(g.values[i]) < tol));

  const auto none = certainty_map(net, same, 0, spec, tol, 6);
  CHECK(std::all_of(none.mask.values.begin(), none.mask.values.end(), [](auto v) { return v == 0; }));
  CHECK_THROWS_AS(certainty_map(net, std::vector<LatentCode>{}, 0, spec, tol, 1), InvalidArgument);
  CHECK_THROWS_AS(certainty_map(net, same, 0, spec, 0.0, 1), InvalidArgument);
}

TEST_CASE("certainty map over a family of spheres matches brute force") {
  const auto spec = GridSpec::cube(41);
  const double tol = spec.cell_size();
  auto run = [&](const std::vector<double>& radii) {
    std::vector<ScalarField> fields;
    for (double r : radii) fields.push_back(sphere_field(r));
    const auto n = static_cast<std::uint32_t>(radii.size());
    const auto c = certainty_map(fields, spec, tol, n);
    const auto nodes = spec.nodes();
    bool oracle_any = false;
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      std::uint32_t count = 0;
      for (double r : radii) count += std::abs(nodes[i].norm() - r) < tol ? 1u : 0u;
      REQUIRE(c.counts.values[i] == count);
      oracle_any = oracle_any || count == n;
    }
    const bool mask_any = std::any_of(c.mask.values.begin(), c.mask.values.end(), [](auto v) { return v != 0; });
    CHECK(mask_any == oracle_any);
    return mask_any;
  };
  // spread wider than 2 tol: no voxel is near every sphere
  CHECK_FALSE(run({0.4, 0.45, 0.5, 0.55, 0.6}));
  // a tight band: the shell between the extreme radii survives
  CHECK(run({0.48, 0.49, 0.5, 0.51}));
}

TEST_CASE("voxel grid files round trip") {
  const auto spec = GridSpec{{3, 4, 5}, Vec3(-1, -0.5, 0), Vec3(1, 0.5, 2)};
  VoxelGrid<double> g{spec, {}};
  VoxelGrid<std::uint32_t> u{spec, {}};
  for (std::size_t i = 0; i < spec.node_count(); ++i) {
    g.values.push_back(0.25 * static_cast<double>(i) - 3.0);
    u.values.push_back(static_cast<std::uint32_t>(i * 977u));
  }
  const auto dir = std::filesystem::temp_directory_path();
  write_voxel_grid(g, dir / "sdfuq_g.vox");
  write_voxel_grid(u, dir / "sdfuq_u.vox");
  const auto g2 = read_voxel_grid_f32(dir / "sdfuq_g.vox");
  const auto u2 = read_voxel_grid_u32(dir / "sdfuq_u.vox");
  CHECK(g2.values == g.values);
  CHECK(u2.values == u.values);
  CHECK(g2.spec.resolution == spec.resolution);
  CHECK(g2.spec.hi == spec.hi);
  CHECK_THROWS(read_voxel_grid_u32(dir / "sdfuq_g.vox"));
  CHECK(std::filesystem::file_size(dir / "sdfuq_u.vox") > 4 * spec.node_count());
  std::filesystem::remove(dir / "sdfuq_g.vox");
  std::filesystem::remove(dir / "sdfuq_u.vox");
}
