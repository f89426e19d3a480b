#pragma once

#include "sdfuq/common.hpp"
#include "sdfuq/shapenet.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <vector>

namespace sdfuq {

/// Regular grid of nodes spanning [lo, hi] (both ends included). Node (i, j, k) has
/// flat index i + nx (j + ny k), x fastest.
struct GridSpec {
  std::array<int, 3> resolution{128, 128, 128};
  Vec3 lo = Vec3::Constant(-1.0);
  Vec3 hi = Vec3::Constant(1.0);

  static GridSpec cube(int n, double lo = -1.0, double hi = 1.0) {
    return {{n, n, n}, Vec3::Constant(lo), Vec3::Constant(hi)};
  }
  /// Throws unless every resolution is >= 2 and lo < hi componentwise.
  void validate() const;
  std::size_t node_count() const;
  Vec3 spacing() const;
  /// Smallest edge of one cell.
  double cell_size() const { return spacing().minCoeff(); }
  std::size_t index(int i, int j, int k) const;
  Vec3 node(int i, int j, int k) const;
  std::vector<Vec3> nodes() const;
};

template <class T>
struct VoxelGrid {
  GridSpec spec;
  std::vector<T> values;  // node_count(), x fastest
};

/// Samples `field` at every node (OpenMP-parallel, output order independent of threads).
using ScalarField = std::function<double(const Vec3&)>;
VoxelGrid<double> sample_grid(const GridSpec& spec, const ScalarField& field);

/// Component `surface` (0-based) of the network at every node.
VoxelGrid<double> sample_grid(const GridSpec& spec, const ShapeNetwork& net, const LatentCode& z, int surface);

/// Voxelized certainty: per node, the number of samples whose surface value is within
/// `tol` of zero, and the mask count >= threshold.
struct CertaintyMap {
  VoxelGrid<std::uint32_t> counts;
  VoxelGrid<std::uint32_t> mask;  // 0 / 1
  std::size_t samples = 0;
};

CertaintyMap certainty_map(const ShapeNetwork& net, std::span<const LatentCode> samples, int surface,
                           const GridSpec& spec, double tol, std::uint32_t threshold);
/// Same for explicit fields, one per sample.
CertaintyMap certainty_map(std::span<const ScalarField> fields, const GridSpec& spec, double tol,
                           std::uint32_t threshold);

/// JSON header line (resolution, bounds, dtype, ordering) followed by a little-endian payload.
void write_voxel_grid(const VoxelGrid<double>& grid, const std::filesystem::path& path);  // float32
void write_voxel_grid(const VoxelGrid<std::uint32_t>& grid, const std::filesystem::path& path);
VoxelGrid<double> read_voxel_grid_f32(const std::filesystem::path& path);
VoxelGrid<std::uint32_t> read_voxel_grid_u32(const std::filesystem::path& path);

}  // namespace sdfuq
