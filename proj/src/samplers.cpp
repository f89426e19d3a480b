#include "sdfuq/samplers.hpp"

#include "sdfuq/rng.hpp"

#include <chrono>
#include <cmath>
#include <limits>
#include <random>

namespace sdfuq {

GaussianDensity::GaussianDensity(Vector mean, Matrix precision) : mean_(std::move(mean)), precision_(std::move(precision)) {
  require(precision_.rows() == mean_.size() && precision_.cols() == mean_.size(), "GaussianDensity: shape mismatch");
}

double GaussianDensity::potential(const Vector& q, Vector& grad) const {
  const Vector r = q - mean_;
  grad = precision_ * r;
  return 0.5 * r.dot(grad);
}

void refresh(const Density& target, PhaseState& s) { s.phi = target.potential(s.z, s.grad); }

bool leapfrog(const Density& target, PhaseState& s, double eps, const Vector& inv_mass) {
  s.p.noalias() -= 0.5 * eps * s.grad;
  s.z.array() += eps * inv_mass.array() * s.p.array();
  s.phi = target.potential(s.z, s.grad);
  s.p.noalias() -= 0.5 * eps * s.grad;
  return std::isfinite(s.phi) && s.grad.allFinite();
}

double kinetic_energy(const Vector& p, const Vector& inv_mass) {
  return 0.5 * (p.array().square() * inv_mass.array()).sum();
}

void HMCConfig::validate(SamplerKind kind, int dim) const {
  require(step_size > 0.0 && std::isfinite(step_size), "step_size must be > 0");
  require(n_warmup >= 0, "n_warmup must be >= 0");
  require(n_samples >= 1, "n_samples must be ≥ 1");
  require(target_accept > 0.0 && target_accept < 1.0, "target_accept must lie in (0, 1)");
  if (kind == SamplerKind::Hmc) require(leapfrog_steps >= 1, "leapfrog_steps must be >= 1");
  if (kind == SamplerKind::Nuts) require(max_tree_depth >= 1, "max_tree_depth must be >= 1");
  if (mass.size() > 0) {
    require(mass.size() == dim, "mass must have one entry per state coordinate");
    require((mass.array() > 0.0).all() && mass.allFinite(), "mass entries must be > 0");
  }
}

double Chain::mean_accept() const {
  if (accept_stats.empty()) return 0.0;
  double s = 0.0;
  for (double a : accept_stats) s += a;
  return s / static_cast<double>(accept_stats.size());
}

StepSizeAdapter::StepSizeAdapter(double target_accept, double gamma, double t0, double kappa)
    : delta_(target_accept), gamma_(gamma), t0_(t0), kappa_(kappa) {}

void StepSizeAdapter::restart(double eps) {
  mu_ = std::log(10.0 * eps);
  h_bar_ = 0.0;
  log_eps_bar_ = 0.0;
  t_ = 0;
}

double StepSizeAdapter::update(double accept_stat) {
  ++t_;
  const double t = t_;
  const double w = 1.0 / (t + t0_);
  h_bar_ = (1.0 - w) * h_bar_ + w * (delta_ - accept_stat);
  const double log_eps = mu_ - std::sqrt(t) / gamma_ * h_bar_;
  const double eta = std::pow(t, -kappa_);
  log_eps_bar_ = eta * log_eps + (1.0 - eta) * log_eps_bar_;
  return std::exp(log_eps);
}

double StepSizeAdapter::final_step_size() const { return std::exp(log_eps_bar_); }

Welford::Welford(int dim) : mean_(Vector::Zero(dim)), m2_(Vector::Zero(dim)) {}

void Welford::add(const Vector& x) {
  ++n_;
  const Vector delta = x - mean_;
  mean_ += delta / static_cast<double>(n_);
  m2_.array() += delta.array() * (x - mean_).array();
}

Vector Welford::variance() const {
  require(n_ >= 2, "Welford: need at least two samples");
  return m2_ / static_cast<double>(n_ - 1);
}

Vector Welford::regularized_variance() const {
  const double n = static_cast<double>(n_);
  return (n / (n + 5.0)) * variance().array() + 1e-3 * (5.0 / (n + 5.0));
}

namespace {

// Counts potential evaluations of a shared target without touching it.
class Counted final : public Density {
 public:
  explicit Counted(const Density& t) : t_(t) {}
  int dim() const override { return t_.dim(); }
  double potential(const Vector& q, Vector& grad) const override {
    ++calls;
    return t_.potential(q, grad);
  }
  Vector to_natural(const Vector& q) const override { return t_.to_natural(q); }
  mutable std::size_t calls = 0;

 private:
  const Density& t_;
};

Vector draw_momentum(const Vector& inv_mass, Rng& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  Vector p(inv_mass.size());
  for (Eigen::Index i = 0; i < p.size(); ++i) p(i) = g(rng) / std::sqrt(inv_mass(i));
  return p;
}

double uniform01(Rng& rng) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng); }

double log_add_exp(double a, double b) {
  if (a == -std::numeric_limits<double>::infinity()) return b;
  if (b == -std::numeric_limits<double>::infinity()) return a;
  const double m = std::max(a, b);
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

double reasonable_step(const Density& target, const PhaseState& at, double eps, const Vector& inv_mass, Rng& rng) {
  const Vector p = draw_momentum(inv_mass, rng);
  const double h0 = at.phi + kinetic_energy(p, inv_mass);
  auto log_ratio = [&](double e) {
    PhaseState s = at;
    s.p = p;
    if (!leapfrog(target, s, e, inv_mass)) return -std::numeric_limits<double>::infinity();
    const double r = h0 - (s.phi + kinetic_energy(s.p, inv_mass));
    return std::isfinite(r) ? r : -std::numeric_limits<double>::infinity();
  };
  const double half = std::log(0.5);
  double r = log_ratio(eps);
  const int dir = r > half ? 1 : -1;
  for (int it = 0; it < 100; ++it) {
    if (dir == 1 ? !(r > half) : !(r < half)) break;
    const double next = dir == 1 ? 2.0 * eps : 0.5 * eps;
    if (next > 1e7 || next < 1e-12) break;
    eps = next;
    r = log_ratio(eps);
  }
  return eps;
}

struct TransitionInfo {
  double accept_stat = 0.0;
  bool divergent = false;
  int depth = 0;
  bool saturated = false;
};

TransitionInfo hmc_transition(const Density& target, PhaseState& cur, double eps, const Vector& inv_mass, int steps,
                              Rng& rng) {
  TransitionInfo info;
  PhaseState s = cur;
  s.p = draw_momentum(inv_mass, rng);
  const double h0 = s.phi + kinetic_energy(s.p, inv_mass);
  bool ok = true;
  for (int l = 0; l < steps && ok; ++l) ok = leapfrog(target, s, eps, inv_mass);
  const double dh = s.phi + kinetic_energy(s.p, inv_mass) - h0;
  if (!ok || !std::isfinite(dh) || dh > kDivergenceThreshold) {
    info.divergent = true;
    return info;
  }
  info.accept_stat = std::min(1.0, std::exp(-dh));
  if (uniform01(rng) < info.accept_stat) cur = s;
  return info;
}

struct Subtree {
  PhaseState minus, plus;  // earliest and latest state in time
  PhaseState proposal;
  double log_w = -std::numeric_limits<double>::infinity();
  bool valid = true;
  bool divergent = false;
  double sum_accept = 0.0;
  int n_leapfrog = 0;
};

bool u_turn(const PhaseState& minus, const PhaseState& plus, const Vector& inv_mass) {
  const Vector dz = plus.z - minus.z;
  return dz.dot(inv_mass.cwiseProduct(minus.p)) < 0.0 || dz.dot(inv_mass.cwiseProduct(plus.p)) < 0.0;
}

Subtree build_tree(const Density& target, const PhaseState& start, int dir, int depth, double h0, double eps,
                   const Vector& inv_mass, Rng& rng) {
  if (depth == 0) {
    Subtree t;
    PhaseState s = start;
    const bool ok = leapfrog(target, s, dir * eps, inv_mass);
    const double h = s.phi + kinetic_energy(s.p, inv_mass);
    t.n_leapfrog = 1;
    if (!ok || !std::isfinite(h) || h - h0 > kDivergenceThreshold) {
      t.valid = false;
      t.divergent = true;
      return t;
    }
    t.log_w = h0 - h;
    t.sum_accept = std::min(1.0, std::exp(h0 - h));
    t.minus = s;
    t.plus = s;
    t.proposal = std::move(s);
    return t;
  }
  Subtree a = build_tree(target, start, dir, depth - 1, h0, eps, inv_mass, rng);
  if (!a.valid) return a;
  Subtree b = build_tree(target, dir > 0 ? a.plus : a.minus, dir, depth - 1, h0, eps, inv_mass, rng);
  a.n_leapfrog += b.n_leapfrog;
  a.sum_accept += b.sum_accept;
  if (!b.valid) {
    a.valid = false;
    a.divergent = b.divergent;
    return a;
  }
  const double log_w = log_add_exp(a.log_w, b.log_w);
  if (std::log(uniform01(rng)) < b.log_w - log_w) a.proposal = std::move(b.proposal);
  a.log_w = log_w;
  if (dir > 0)
    a.plus = std::move(b.plus);
  else
    a.minus = std::move(b.minus);
  if (u_turn(a.minus, a.plus, inv_mass)) a.valid = false;
  return a;
}

TransitionInfo nuts_transition(const Density& target, PhaseState& cur, double eps, const Vector& inv_mass,
                               int max_depth, Rng& rng) {
  TransitionInfo info;
  PhaseState s0 = cur;
  s0.p = draw_momentum(inv_mass, rng);
  const double h0 = s0.phi + kinetic_energy(s0.p, inv_mass);
  PhaseState minus = s0, plus = s0;
  PhaseState proposal = s0;
  double log_w = 0.0;
  double sum_accept = 0.0;
  int n_leapfrog = 0;
  bool stopped = false;
  int depth = 0;
  while (depth < max_depth) {
    const int dir = uniform01(rng) < 0.5 ? -1 : 1;
    Subtree t = build_tree(target, dir > 0 ? plus : minus, dir, depth, h0, eps, inv_mass, rng);
    ++depth;
    sum_accept += t.sum_accept;
    n_leapfrog += t.n_leapfrog;
    if (t.divergent) info.divergent = true;
    if (!t.valid) {
      stopped = true;
      break;
    }
    // biased progressive sampling between the old tree and the new half
    if (std::log(uniform01(rng)) < t.log_w - log_w) proposal = std::move(t.proposal);
    log_w = log_add_exp(log_w, t.log_w);
    if (dir > 0)
      plus = std::move(t.plus);
    else
      minus = std::move(t.minus);
    if (u_turn(minus, plus, inv_mass)) {
      stopped = true;
      break;
    }
  }
  info.depth = depth;
  info.saturated = !stopped;
  info.accept_stat = n_leapfrog > 0 ? sum_accept / n_leapfrog : 0.0;
  cur.z = std::move(proposal.z);
  cur.grad = std::move(proposal.grad);
  cur.phi = proposal.phi;
  return info;
}

}  // namespace

double find_reasonable_step_size(const Density& target, const Vector& z, double eps0, const Vector& inv_mass,
                                 std::uint64_t seed) {
  Rng rng(seed);
  PhaseState s;
  s.z = z;
  refresh(target, s);
  require(std::isfinite(s.phi), "find_reasonable_step_size: non-finite potential at the start");
  return reasonable_step(target, s, eps0, inv_mass, rng);
}

namespace {

int hmc_steps(const HMCConfig& cfg, Rng& rng) {
  const int L = cfg.leapfrog_steps;
  if (!cfg.jitter_steps || L < 2) return L;
  return std::uniform_int_distribution<int>(L - L / 2, L + L / 2)(rng);
}

}  // namespace

Chain run_sampler(SamplerKind kind, const Density& target, const HMCConfig& cfg, const Vector& init) {
  const int dim = target.dim();
  cfg.validate(kind, dim);
  require(init.size() == dim, "sampler: initial state has wrong dimension");
  const auto t_start = std::chrono::steady_clock::now();
  Counted counted(target);
  Rng rng(cfg.seed);

  PhaseState cur;
  cur.z = init;
  refresh(counted, cur);
  if (!std::isfinite(cur.phi) || !cur.grad.allFinite())
    throw NumericalError("sampler: potential or gradient not finite at the initial state");

  Vector inv_mass = cfg.mass.size() > 0 ? Vector(cfg.mass.cwiseInverse()) : Vector::Ones(dim);
  double eps = cfg.step_size;
  StepSizeAdapter adapter(cfg.target_accept);

  // Warm-up: [0, w1) step size only; [w1, w2) also collects variance; at w2 the mass
  // matrix is set and step-size adaptation restarts; [w2, n_warmup) step size only.
  const int nw = cfg.n_warmup;
  const bool windows = cfg.adapt_mass && nw >= 20;
  const int w1 = windows ? nw / 4 : nw;
  const int w2 = windows ? nw - nw / 4 : nw;
  Welford welford(dim);
  if (nw > 0) {
    eps = reasonable_step(counted, cur, eps, inv_mass, rng);
    adapter.restart(eps);
  }

  Chain chain;
  chain.samples.reserve(static_cast<std::size_t>(cfg.n_samples));
  for (int it = 0; it < nw + cfg.n_samples; ++it) {
    const TransitionInfo info = kind == SamplerKind::Hmc
                                    ? hmc_transition(counted, cur, eps, inv_mass, hmc_steps(cfg, rng), rng)
                                    : nuts_transition(counted, cur, eps, inv_mass, cfg.max_tree_depth, rng);
    if (it < nw) {
      if (info.divergent) ++chain.warmup_divergences;
      eps = adapter.update(info.accept_stat);
      if (it >= w1 && it < w2) welford.add(cur.z);
      if (it + 1 == w2 && windows) {
        inv_mass = welford.regularized_variance();
        eps = reasonable_step(counted, cur, eps, inv_mass, rng);
        adapter.restart(eps);
      }
      if (it + 1 == nw) eps = adapter.final_step_size();
      continue;
    }
    if (info.divergent) chain.divergences.push_back(chain.samples.size());
    if (info.saturated) ++chain.depth_saturations;
    chain.samples.push_back(counted.to_natural(cur.z));
    chain.accept_stats.push_back(info.accept_stat);
    chain.potentials.push_back(cur.phi);
    chain.tree_depths.push_back(info.depth);
  }
  chain.step_size = eps;
  chain.inv_mass = inv_mass;
  chain.gradient_evaluations = counted.calls;
  chain.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  return chain;
}

Chain hmc_sample(const Density& target, const HMCConfig& cfg, const Vector& init) {
  return run_sampler(SamplerKind::Hmc, target, cfg, init);
}

Chain nuts_sample(const Density& target, const HMCConfig& cfg, const Vector& init) {
  return run_sampler(SamplerKind::Nuts, target, cfg, init);
}

std::vector<Chain> run_chains(SamplerKind kind, const Density& target, const HMCConfig& cfg,
                              std::span<const Vector> inits, int n_chains) {
  require(n_chains >= 1, "number of chains must be >= 1");
  require(!inits.empty(), "run_chains: no initial states");
  cfg.validate(kind, target.dim());
  std::vector<Chain> chains(static_cast<std::size_t>(n_chains));
  std::vector<std::string> errors(static_cast<std::size_t>(n_chains));
#pragma omp parallel for schedule(dynamic, 1)
  for (int i = 0; i < n_chains; ++i) {
    HMCConfig c = cfg;
    c.seed = derive_seed(cfg.seed, "chain", static_cast<std::uint64_t>(i));
    try {
      chains[static_cast<std::size_t>(i)] = run_sampler(kind, target, c, inits[static_cast<std::size_t>(i) % inits.size()]);
    } catch (const std::exception& e) {
      errors[static_cast<std::size_t>(i)] = e.what();
    }
  }
  for (int i = 0; i < n_chains; ++i)
    if (!errors[static_cast<std::size_t>(i)].empty())
      throw NumericalError("chain " + std::to_string(i) + ": " + errors[static_cast<std::size_t>(i)]);
  return chains;
}

Vector mmse(const Chain& chain) {
  require(chain.size() >= 1, "mmse: empty chain");
  Vector m = Vector::Zero(chain.samples.front().size());
  for (const auto& s : chain.samples) m += s;
  return m / static_cast<double>(chain.size());
}

Vector mmse(std::span<const Chain> chains) {
  const auto all = pooled_samples(chains);
  require(!all.empty(), "mmse: no samples");
  Vector m = Vector::Zero(all.front().size());
  for (const auto& s : all) m += s;
  return m / static_cast<double>(all.size());
}

std::vector<Vector> pooled_samples(std::span<const Chain> chains) {
  std::vector<Vector> out;
  for (const auto& c : chains) out.insert(out.end(), c.samples.begin(), c.samples.end());
  return out;
}

SamplerKind parse_sampler_kind(const std::string& name) {
  if (name == "hmc") return SamplerKind::Hmc;
  if (name == "nuts") return SamplerKind::Nuts;
  throw InvalidArgument("unknown sampler '" + name + "' (expected hmc or nuts)");
}

std::string to_string(SamplerKind kind) { return kind == SamplerKind::Hmc ? "hmc" : "nuts"; }

}  // namespace sdfuq
