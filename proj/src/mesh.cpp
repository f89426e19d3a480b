#include "sdfuq/mesh.hpp"

#include "sdfuq/rng.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <random>
#include <sstream>

namespace sdfuq {

double TriMesh::face_area(std::size_t f) const {
  const auto& t = faces[f];
  return 0.5 * (vertices[t[1]] - vertices[t[0]]).cross(vertices[t[2]] - vertices[t[0]]).norm();
}

Vec3 TriMesh::face_normal(std::size_t f) const {
  const auto& t = faces[f];
  return (vertices[t[1]] - vertices[t[0]]).cross(vertices[t[2]] - vertices[t[0]]).normalized();
}

double TriMesh::area() const {
  double a = 0.0;
  for (std::size_t f = 0; f < faces.size(); ++f) a += face_area(f);
  return a;
}

void TriMesh::validate() const {
  const int n = static_cast<int>(vertices.size());
  for (const auto& v : vertices) require(v.allFinite(), "mesh: non-finite vertex coordinate");
  for (const auto& f : faces)
    for (int i : f) require(i >= 0 && i < n, "mesh: face index " + std::to_string(i) + " out of range");
}

void TriMesh::remove_degenerate_faces() {
  std::vector<Face> kept;
  kept.reserve(faces.size());
  for (std::size_t f = 0; f < faces.size(); ++f) {
    const auto& t = faces[f];
    if (t[0] == t[1] || t[1] == t[2] || t[0] == t[2]) continue;
    if (!(face_area(f) > 0.0)) continue;
    kept.push_back(t);
  }
  faces = std::move(kept);
}

bool TriMesh::is_closed() const {
  if (faces.empty()) return false;
  std::map<std::pair<int, int>, int> edges;
  for (const auto& f : faces)
    for (int e = 0; e < 3; ++e) {
      int a = f[e], b = f[(e + 1) % 3];
      if (a > b) std::swap(a, b);
      ++edges[{a, b}];
    }
  return std::all_of(edges.begin(), edges.end(), [](const auto& kv) { return kv.second == 2; });
}

TriMesh make_icosphere(int subdivisions, double radius, const Vec3& center) {
  require(subdivisions >= 0 && radius > 0.0, "make_icosphere: invalid arguments");
  const double t = (1.0 + std::sqrt(5.0)) / 2.0;
  std::vector<Vec3> v = {{-1, t, 0}, {1, t, 0}, {-1, -t, 0}, {1, -t, 0}, {0, -1, t}, {0, 1, t},
                         {0, -1, -t}, {0, 1, -t}, {t, 0, -1}, {t, 0, 1}, {-t, 0, -1}, {-t, 0, 1}};
  for (auto& p : v) p.normalize();
  std::vector<Face> f = {{0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11}, {1, 5, 9}, {5, 11, 4},
                         {11, 10, 2}, {10, 7, 6}, {7, 1, 8},   {3, 9, 4},  {3, 4, 2},   {3, 2, 6}, {3, 6, 8},
                         {3, 8, 9},   {4, 9, 5},  {2, 4, 11},  {6, 2, 10}, {8, 6, 7},   {9, 8, 1}};
  for (int s = 0; s < subdivisions; ++s) {
    std::map<std::pair<int, int>, int> mid;
    auto midpoint = [&](int a, int b) {
      const auto key = std::minmax(a, b);
      auto it = mid.find(key);
      if (it != mid.end()) return it->second;
      v.push_back((v[a] + v[b]).normalized());
      const int idx = static_cast<int>(v.size()) - 1;
      mid.emplace(key, idx);
      return idx;
    };
    std::vector<Face> next;
    next.reserve(f.size() * 4);
    for (const auto& tri : f) {
      const int a = midpoint(tri[0], tri[1]), b = midpoint(tri[1], tri[2]), c = midpoint(tri[2], tri[0]);
      next.push_back({tri[0], a, c});
      next.push_back({tri[1], b, a});
      next.push_back({tri[2], c, b});
      next.push_back({a, b, c});
    }
    f = std::move(next);
  }
  TriMesh m;
  m.vertices.reserve(v.size());
  for (const auto& p : v) m.vertices.push_back(center + radius * p);
  m.faces = std::move(f);
  return m;
}

TriMesh read_obj(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open mesh file " + path.string());
  TriMesh m;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream ls(line);
    std::string tag;
    ls >> tag;
    if (tag == "v") {
      Vec3 p;
      ls >> p(0) >> p(1) >> p(2);
      if (!ls) throw IoError(path.string() + ":" + std::to_string(lineno) + ": malformed vertex");
      m.vertices.push_back(p);
    } else if (tag == "f") {
      std::vector<int> idx;
      std::string tok;
      while (ls >> tok) {
        int v = 0;
        const auto head = tok.substr(0, tok.find('/'));
        const auto r = std::from_chars(head.data(), head.data() + head.size(), v);
        if (r.ec != std::errc() || r.ptr != head.data() + head.size() || v < 1)
          throw IoError(path.string() + ":" + std::to_string(lineno) + ": malformed face index '" + tok + "'");
        idx.push_back(v - 1);
      }
      if (idx.size() < 3) throw IoError(path.string() + ":" + std::to_string(lineno) + ": malformed face");
      for (std::size_t k = 1; k + 1 < idx.size(); ++k) m.faces.push_back({idx[0], idx[k], idx[k + 1]});
    }
  }
  m.validate();
  return m;
}

void write_obj(const TriMesh& mesh, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write mesh file " + path.string());
  out << std::setprecision(17);
  for (const auto& v : mesh.vertices) out << "v " << v(0) << ' ' << v(1) << ' ' << v(2) << '\n';
  for (const auto& f : mesh.faces) out << "f " << f[0] + 1 << ' ' << f[1] + 1 << ' ' << f[2] + 1 << '\n';
}

std::vector<SurfaceSample> sample_surface_points(const TriMesh& mesh, std::size_t count, std::uint64_t seed) {
  require(!mesh.empty(), "sample_surface_points: empty mesh");
  require(count >= 1, "sample_surface_points: count must be >= 1");
  std::vector<double> cdf(mesh.faces.size());
  double acc = 0.0;
  for (std::size_t f = 0; f < mesh.faces.size(); ++f) cdf[f] = (acc += mesh.face_area(f));
  require(acc > 0.0, "sample_surface_points: mesh has zero area");
  Rng rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<SurfaceSample> out;
  out.reserve(count);
  for (std::size_t k = 0; k < count; ++k) {
    const double r = u(rng) * acc;
    auto f = static_cast<std::size_t>(std::upper_bound(cdf.begin(), cdf.end(), r) - cdf.begin());
    f = std::min(f, mesh.faces.size() - 1);
    double b1 = u(rng), b2 = u(rng);
    if (b1 + b2 > 1.0) {
      b1 = 1.0 - b1;
      b2 = 1.0 - b2;
    }
    const auto& t = mesh.faces[f];
    const Vec3 p = mesh.vertices[t[0]] + b1 * (mesh.vertices[t[1]] - mesh.vertices[t[0]]) +
                   b2 * (mesh.vertices[t[2]] - mesh.vertices[t[0]]);
    out.push_back({p, mesh.face_normal(f)});
  }
  return out;
}

PointCloud perturb_along_normals(std::span<const SurfaceSample> points, double zeta, int surface, std::uint64_t seed,
                                 std::vector<double>* tau_out) {
  require(zeta >= 0.0, "perturb_along_normals: zeta must be >= 0");
  Rng rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  PointCloud cloud;
  cloud.reserve(points.size());
  if (tau_out) tau_out->clear();
  for (const auto& p : points) {
    const double tau = zeta * g(rng);
    cloud.push_back({p.point + tau * p.normal, 0.0, surface});
    if (tau_out) tau_out->push_back(tau);
  }
  return cloud;
}

}  // namespace sdfuq
