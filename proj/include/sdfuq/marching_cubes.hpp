#pragma once

#include "sdfuq/mesh.hpp"
#include "sdfuq/voxel.hpp"

namespace sdfuq {

/// Marching cubes at `iso` with linear edge interpolation. A node counts as inside when
/// its value is below `iso`. Vertices are shared between neighbouring cells, faces are
/// oriented along increasing value (outward for signed distances). No crossing gives an
/// empty mesh.
TriMesh marching_cubes(const VoxelGrid<double>& grid, double iso = 0.0);

/// Zero level set of one network surface (0-based) on `spec`.
TriMesh extract_zero_level(const ShapeNetwork& net, const LatentCode& z, int surface, const GridSpec& spec);

/// Zero level set of an explicit field.
TriMesh extract_zero_level(const ScalarField& field, const GridSpec& spec);

}  // namespace sdfuq
