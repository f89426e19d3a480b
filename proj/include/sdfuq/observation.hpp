#pragma once

#include "sdfuq/common.hpp"

#include <vector>

namespace sdfuq {

/// One inference datum: a point, its claimed signed distance, and the surface it belongs to.
/// `surface` is 0-based here; files and the CLI use 1-based surface numbers.
struct PointObservation {
  Vec3 x = Vec3::Zero();
  double s = 0.0;
  int surface = 0;
};

using PointCloud = std::vector<PointObservation>;

/// Training samples of one shape: points and their L signed distances (one column per point).
struct TrainingShape {
  int id = 0;
  std::vector<Vec3> points;
  Matrix distances;  // L x K

  std::size_t size() const { return points.size(); }
};

}  // namespace sdfuq
