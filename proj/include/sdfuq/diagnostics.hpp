#pragma once

#include "sdfuq/common.hpp"

#include <span>
#include <vector>

namespace sdfuq {

/// Linear interpolation between order statistics at positions (i - 1)/(N - 1):
/// t = 0 gives the minimum, t = 1 the maximum.
double empirical_quantile(std::span<const double> values, double t);

/// Sampled SDF values at one evaluation node and the true value there.
struct NodeDistribution {
  Vec3 x = Vec3::Zero();
  std::vector<double> values;
  double f_star = 0.0;
};

/// Fraction of nodes whose f* lies in the closed central interval [Q_{(1-q)/2}, Q_{(1+q)/2}].
double achieved_coverage(std::span<const NodeDistribution> nodes, double q);

struct CalibrationReport {
  std::vector<double> levels;
  std::vector<double> coverage;
  double ece = 0.0;
  std::size_t node_count = 0;
  std::size_t samples_per_node = 0;
};

/// Levels m/M for m = 1..M.
std::vector<double> default_quantile_levels(int count = 20);

/// Achieved coverage at each level and ECE = mean |AC(q_m) - q_m|.
CalibrationReport calibrate(std::span<const NodeDistribution> nodes, std::span<const double> levels);

struct EssResult {
  double value = 0.0;
  bool degenerate = false;  // zero variance: value is N by convention
  bool capped = false;      // estimate exceeded N (1 + 2/(N - 1)) and was capped there
};

/// Effective sample size of one coordinate: N / (1 + 2 sum_t rho_t) over Geyer's initial
/// positive sequence of biased sample autocorrelations, with the monotone pair correction.
EssResult ess(std::span<const double> chain);

/// Mean over coordinates of the per-coordinate ESS of one chain of state vectors.
double mean_ess(std::span<const Vector> samples);

/// Per-coordinate ESS of each chain summed over chains ("pooled"), and averaged over chains.
struct MultiChainEss {
  Vector pooled;      // per coordinate
  Vector per_chain_mean;
};
MultiChainEss multi_chain_ess(std::span<const std::vector<Vector>> chains);

struct NodeStats {
  Vec3 x = Vec3::Zero();
  double mean = 0.0;
  double std = 0.0;  // divisor N - 1
  double abs_dist = 0.0;  // |f*|
};
std::vector<NodeStats> node_stats(std::span<const NodeDistribution> nodes);

double median(std::vector<double> values);

}  // namespace sdfuq
