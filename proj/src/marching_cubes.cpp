#include "sdfuq/marching_cubes.hpp"

#include "mc_tables.hpp"

#include <unordered_map>

namespace sdfuq {

TriMesh marching_cubes(const VoxelGrid<double>& grid, double iso) {
  const GridSpec& s = grid.spec;
  s.validate();
  require(grid.values.size() == s.node_count(), "marching_cubes: value count mismatch");
  const auto [nx, ny, nz] = s.resolution;
  const std::uint64_t n_nodes = s.node_count();

  TriMesh mesh;
  // Vertex keys: a node id when the crossing sits exactly on a node, else
  // n_nodes + 3 * (lower node) + axis for a strict edge crossing.
  std::unordered_map<std::uint64_t, int> vertex_of;
  auto vertex = [&](int ia, int ja, int ka, int ib, int jb, int kb) {
    const std::uint64_t a = s.index(ia, ja, ka), b = s.index(ib, jb, kb);
    const double va = grid.values[a], vb = grid.values[b];
    const double t = (iso - va) / (vb - va);
    std::uint64_t key;
    if (t <= 0.0) {
      key = a;
    } else if (t >= 1.0) {
      key = b;
    } else {
      const int axis = ia != ib ? 0 : (ja != jb ? 1 : 2);
      key = n_nodes + 3 * std::min(a, b) + static_cast<std::uint64_t>(axis);
    }
    auto [it, inserted] = vertex_of.try_emplace(key, static_cast<int>(mesh.vertices.size()));
    if (inserted) {
      const Vec3 pa = s.node(ia, ja, ka), pb = s.node(ib, jb, kb);
      if (key == a)
        mesh.vertices.push_back(pa);
      else if (key == b)
        mesh.vertices.push_back(pb);
      else
        mesh.vertices.push_back(pa + t * (pb - pa));
    }
    return it->second;
  };

  for (int k = 0; k + 1 < nz; ++k)
    for (int j = 0; j + 1 < ny; ++j)
      for (int i = 0; i + 1 < nx; ++i) {
        int cube = 0;
        int c[8][3];
        for (int v = 0; v < 8; ++v) {
          c[v][0] = i + detail::kMcCorner[v][0];
          c[v][1] = j + detail::kMcCorner[v][1];
          c[v][2] = k + detail::kMcCorner[v][2];
          if (grid.values[s.index(c[v][0], c[v][1], c[v][2])] < iso) cube |= 1 << v;
        }
        // With this corner layout the table already winds along increasing value.
        const int* tri = detail::kMcTriTable[cube];
        for (int t = 0; tri[t] != -1; t += 3) {
          Face f;
          for (int q = 0; q < 3; ++q) {
            const auto& e = detail::kMcEdge[tri[t + q]];
            const int* a = c[e[0]];
            const int* b = c[e[1]];
            f[static_cast<std::size_t>(q)] = vertex(a[0], a[1], a[2], b[0], b[1], b[2]);
          }
          mesh.faces.push_back(f);
        }
      }
  mesh.remove_degenerate_faces();
  return mesh;
}

TriMesh extract_zero_level(const ShapeNetwork& net, const LatentCode& z, int surface, const GridSpec& spec) {
  return marching_cubes(sample_grid(spec, net, z, surface), 0.0);
}

TriMesh extract_zero_level(const ScalarField& field, const GridSpec& spec) {
  return marching_cubes(sample_grid(spec, field), 0.0);
}

}  // namespace sdfuq
