#include "sdfuq/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace sdfuq {

namespace {

double quantile_sorted(std::span<const double> v, double t) {
  const double pos = t * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  if (lo + 1 >= v.size()) return v.back();
  const double frac = pos - static_cast<double>(lo);
  return v[lo] + frac * (v[lo + 1] - v[lo]);
}

void check_level(double t) {
  require(t >= 0.0 && t <= 1.0, "quantile level must lie in [0, 1]");
}

}  // namespace

double empirical_quantile(std::span<const double> values, double t) {
  require(!values.empty(), "empirical_quantile: no values");
  check_level(t);
  std::vector<double> v(values.begin(), values.end());
  std::sort(v.begin(), v.end());
  return quantile_sorted(v, t);
}

double achieved_coverage(std::span<const NodeDistribution> nodes, double q) {
  require(!nodes.empty(), "achieved_coverage: no nodes");
  const std::vector<double> level{q};
  return calibrate(nodes, level).coverage.front();
}

std::vector<double> default_quantile_levels(int count) {
  require(count >= 1, "quantile level count must be >= 1");
  std::vector<double> out;
  for (int m = 1; m <= count; ++m) out.push_back(static_cast<double>(m) / count);
  return out;
}

CalibrationReport calibrate(std::span<const NodeDistribution> nodes, std::span<const double> levels) {
  require(!nodes.empty(), "calibration: no nodes");
  require(!levels.empty(), "calibration: no quantile levels");
  for (std::size_t m = 0; m < levels.size(); ++m) {
    check_level(levels[m]);
    if (m > 0) require(levels[m] > levels[m - 1], "quantile levels must be strictly increasing");
  }
  CalibrationReport rep;
  rep.levels.assign(levels.begin(), levels.end());
  rep.node_count = nodes.size();
  rep.samples_per_node = nodes.front().values.size();
  std::vector<std::size_t> hits(levels.size(), 0);
  std::vector<double> v;
  for (const auto& n : nodes) {
    require(!n.values.empty(), "calibration: node without samples");
    v.assign(n.values.begin(), n.values.end());
    std::sort(v.begin(), v.end());
    for (std::size_t m = 0; m < levels.size(); ++m) {
      const double q = levels[m];
      const double lo = quantile_sorted(v, 0.5 - 0.5 * q);
      const double hi = quantile_sorted(v, 0.5 + 0.5 * q);
      if (lo <= n.f_star && n.f_star <= hi) ++hits[m];
    }
  }
  double err = 0.0;
  for (std::size_t m = 0; m < levels.size(); ++m) {
    rep.coverage.push_back(static_cast<double>(hits[m]) / static_cast<double>(nodes.size()));
    err += std::abs(rep.coverage[m] - levels[m]);
  }
  rep.ece = err / static_cast<double>(levels.size());
  return rep;
}

EssResult ess(std::span<const double> x) {
  const std::size_t n = x.size();
  require(n >= 4, "ess: chain must have at least 4 values");
  const double N = static_cast<double>(n);
  const double mean = std::accumulate(x.begin(), x.end(), 0.0) / N;
  auto autocov = [&](std::size_t lag) {
    double s = 0.0;
    for (std::size_t i = 0; i + lag < n; ++i) s += (x[i] - mean) * (x[i + lag] - mean);
    return s / N;
  };
  const double c0 = autocov(0);
  EssResult r;
  if (!(c0 > 0.0)) {
    r.value = N;
    r.degenerate = true;
    return r;
  }
  // Initial positive sequence of pair sums G_k = rho_2k + rho_2k+1, made monotone
  // (each G_k capped by its predecessor) to damp spurious positive pairs in the tail.
  double sum_pairs = 0.0, prev = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; 2 * k + 1 < n; ++k) {
    const double a = k == 0 ? 1.0 : autocov(2 * k) / c0;
    double pair = a + autocov(2 * k + 1) / c0;
    if (!(pair > 0.0)) break;
    pair = std::min(pair, prev);
    prev = pair;
    sum_pairs += pair;
  }
  const double cap = N * (1.0 + 2.0 / (N - 1.0));
  const double denom = 2.0 * sum_pairs - 1.0;
  r.value = denom > N / cap ? N / denom : cap;
  r.capped = !(denom > N / cap);
  return r;
}

double mean_ess(std::span<const Vector> samples) {
  require(!samples.empty(), "mean_ess: empty chain");
  const Eigen::Index d = samples.front().size();
  std::vector<double> col(samples.size());
  double total = 0.0;
  for (Eigen::Index j = 0; j < d; ++j) {
    for (std::size_t i = 0; i < samples.size(); ++i) col[i] = samples[i](j);
    total += ess(col).value;
  }
  return total / static_cast<double>(d);
}

MultiChainEss multi_chain_ess(std::span<const std::vector<Vector>> chains) {
  require(!chains.empty() && !chains.front().empty(), "multi_chain_ess: no samples");
  const Eigen::Index d = chains.front().front().size();
  MultiChainEss out{Vector::Zero(d), Vector::Zero(d)};
  std::vector<double> col;
  for (const auto& c : chains) {
    col.resize(c.size());
    for (Eigen::Index j = 0; j < d; ++j) {
      for (std::size_t i = 0; i < c.size(); ++i) col[i] = c[i](j);
      out.pooled(j) += ess(col).value;
    }
  }
  out.per_chain_mean = out.pooled / static_cast<double>(chains.size());
  return out;
}

std::vector<NodeStats> node_stats(std::span<const NodeDistribution> nodes) {
  require(!nodes.empty(), "node_stats: no nodes");
  std::vector<NodeStats> out;
  out.reserve(nodes.size());
  for (const auto& n : nodes) {
    require(n.values.size() >= 2, "node_stats: need at least two values per node");
    const double N = static_cast<double>(n.values.size());
    const double mean = std::accumulate(n.values.begin(), n.values.end(), 0.0) / N;
    double ss = 0.0;
    for (double v : n.values) ss += (v - mean) * (v - mean);
    out.push_back({n.x, mean, std::sqrt(ss / (N - 1.0)), std::abs(n.f_star)});
  }
  return out;
}

double median(std::vector<double> values) {
  require(!values.empty(), "median: no values");
  std::sort(values.begin(), values.end());
  return quantile_sorted(values, 0.5);
}

}  // namespace sdfuq
