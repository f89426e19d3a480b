#pragma once

#include "sdfuq/density.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace sdfuq {

/// Position, momentum and the potential with its gradient at the position.
struct PhaseState {
  Vector z;
  Vector p;
  Vector grad;
  double phi = 0.0;
};

/// Fills phi and grad of `s` from its position.
void refresh(const Density& target, PhaseState& s);

/// One leapfrog step with diagonal inverse mass. Returns false when the new potential or
/// gradient is not finite (a divergence).
bool leapfrog(const Density& target, PhaseState& s, double eps, const Vector& inv_mass);

/// 1/2 p^T M^{-1} p.
double kinetic_energy(const Vector& p, const Vector& inv_mass);

enum class SamplerKind { Hmc, Nuts };

struct HMCConfig {
  double step_size = 1.0;
  int leapfrog_steps = 10;  // HMC only
  // HMC: draw the step count per transition uniformly from [L - L/2, L + L/2]. A fixed
  // trajectory length resonates on near-Gaussian targets once the mass matrix is adapted.
  bool jitter_steps = true;
  int n_warmup = 100;
  int n_samples = 500;
  double target_accept = 0.8;
  int max_tree_depth = 10;  // NUTS only
  Vector mass;              // diagonal; empty -> identity
  bool adapt_mass = true;
  std::uint64_t seed = 0;

  void validate(SamplerKind kind, int dim) const;
};

/// Transitions whose energy error exceeds this are divergent.
inline constexpr double kDivergenceThreshold = 1000.0;

struct Chain {
  std::vector<Vector> samples;      // natural coordinates
  std::vector<double> accept_stats;  // per retained transition
  std::vector<double> potentials;    // Phi at each retained sample
  std::vector<int> tree_depths;      // NUTS; HMC records 0
  std::vector<std::size_t> divergences;  // retained-sample indices
  std::size_t warmup_divergences = 0;
  std::size_t depth_saturations = 0;
  std::size_t gradient_evaluations = 0;
  double step_size = 0.0;  // after adaptation
  Vector inv_mass;         // after adaptation
  double wall_time_s = 0.0;

  std::size_t size() const { return samples.size(); }
  double mean_accept() const;
};

/// Dual averaging of log step size toward a target acceptance statistic.
class StepSizeAdapter {
 public:
  StepSizeAdapter(double target_accept, double gamma = 0.05, double t0 = 10.0, double kappa = 0.75);
  void restart(double eps);
  /// Feeds one acceptance statistic; returns the step size for the next transition.
  double update(double accept_stat);
  /// Averaged step size used after warm-up.
  double final_step_size() const;

 private:
  double delta_, gamma_, t0_, kappa_;
  double mu_ = 0.0, h_bar_ = 0.0, log_eps_bar_ = 0.0;
  int t_ = 0;
};

/// Running mean and variance (Welford).
class Welford {
 public:
  explicit Welford(int dim);
  void add(const Vector& x);
  std::size_t count() const { return n_; }
  Vector variance() const;  // divisor n - 1
  /// Variance shrunk toward 1e-3 as in common NUTS implementations: n/(n+5) var + 1e-3 * 5/(n+5).
  Vector regularized_variance() const;

 private:
  std::size_t n_ = 0;
  Vector mean_, m2_;
};

/// Heuristic initial step size: doubles or halves until the one-step acceptance ratio
/// crosses 1/2.
double find_reasonable_step_size(const Density& target, const Vector& z, double eps0, const Vector& inv_mass,
                                 std::uint64_t seed);

Chain hmc_sample(const Density& target, const HMCConfig& cfg, const Vector& init);
Chain nuts_sample(const Density& target, const HMCConfig& cfg, const Vector& init);
Chain run_sampler(SamplerKind kind, const Density& target, const HMCConfig& cfg, const Vector& init);

/// Independent chains, chain i seeded with derive_seed(cfg.seed, "chain", i) and started
/// from inits[i % inits.size()]. Runs concurrently; results in chain order.
std::vector<Chain> run_chains(SamplerKind kind, const Density& target, const HMCConfig& cfg,
                              std::span<const Vector> inits, int n_chains);

/// Posterior mean of the retained samples.
Vector mmse(const Chain& chain);
Vector mmse(std::span<const Chain> chains);

/// All retained samples of all chains, in chain order.
std::vector<Vector> pooled_samples(std::span<const Chain> chains);

SamplerKind parse_sampler_kind(const std::string& name);
std::string to_string(SamplerKind kind);

}  // namespace sdfuq
