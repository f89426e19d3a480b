#pragma once

#include "sdfuq/density.hpp"
#include "sdfuq/model.hpp"
#include "sdfuq/optim.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace sdfuq {

/// Smallest admissible lower bound for an inferred noise variance.
inline constexpr double kZeta2Min = 1e-4;

/// Everything that defines the latent posterior of one point cloud.
struct PosteriorSpec {
  const ShapeModel* model = nullptr;
  PointCloud cloud;
  double zeta2 = 1.0;        // used when !infer_zeta2
  bool infer_zeta2 = false;  // sample zeta^2 jointly under U(zeta2_lo, zeta2_hi)
  Vector mu;                 // prior mean; empty -> 0
  double sigma_tilde2 = 1.0;
  double zeta2_lo = kZeta2Min;
  double zeta2_hi = 10.0;

  int latent_dim() const { return model->latent_dim(); }
  Vector prior_mean() const;
  /// Throws on a missing model, bad variances, bounds or surface indices.
  void validate() const;
};

struct NegLogPosterior {
  double value = 0.0;
  Vector grad_z;
  double grad_zeta2 = 0.0;
};

/// Phi(z, zeta2) = 1/(2 K zeta2) sum_k r_k^2 + 1/(2 sigma~^2) ||z - mu||^2, plus K/2 ln zeta2
/// when zeta2 is inferred. An empty cloud leaves the prior term only.
NegLogPosterior neg_log_posterior(const PosteriorSpec& spec, const LatentCode& z, double zeta2);

/// The plain reconstruction objective (1/K) sum_k r_k^2 + inv_sigma2 ||z||^2, evaluated point by
/// point on the network (independent of the kernels used by the posterior).
double inference_objective(const ShapeNetwork& net, const PointCloud& cloud, const LatentCode& z, double inv_sigma2);

/// zeta2 = lo + (hi - lo) sigmoid(u), kept strictly inside (lo, hi).
double zeta2_from_u(double u, double lo, double hi);
double u_from_zeta2(double zeta2, double lo, double hi);

/// Sampler target for a posterior spec. State z (d) or (z, u) (d + 1) when zeta2 is
/// inferred; natural coordinates report zeta2 in place of u. The potential then includes
/// -ln |d zeta2 / d u|.
class PosteriorDensity final : public Density {
 public:
  explicit PosteriorDensity(PosteriorSpec spec);
  int dim() const override;
  double potential(const Vector& q, Vector& grad) const override;
  Vector to_natural(const Vector& q) const override;
  /// Inverse of to_natural.
  Vector from_natural(const Vector& x) const;
  const PosteriorSpec& spec() const { return spec_; }

 private:
  PosteriorSpec spec_;
};

struct MapConfig {
  int iters = 1000;
  double learning_rate = 0.01;
  AdamParams adam;
};

struct MapResult {
  LatentCode z;
  double initial_value = 0.0;
  double value = 0.0;
};

/// Adam on Phi(., zeta2) with zeta2 fixed at spec.zeta2. Deterministic.
MapResult map_estimate(const PosteriorSpec& spec, const LatentCode& init, const MapConfig& cfg);

struct LaplaceApprox {
  Vector mean;
  Matrix covariance;
  Matrix hessian;  // symmetrized finite-difference Hessian
  double gradient_norm = 0.0;  // at the mode
  int floored_eigenvalues = 0;

  /// n draws from N(mean, covariance).
  std::vector<Vector> draw(std::size_t n, std::uint64_t seed) const;
};

inline constexpr double kLaplaceEigenFloor = 1e-8;

/// Gaussian at `mode` with covariance H^{-1}; H by central differences of the exact gradient
/// with steps 1e-3 (1 + |z_j|). Eigenvalues below 1e-8 are floored; clearly negative ones
/// throw NumericalError.
LaplaceApprox laplace_approx(const Density& target, const Vector& mode);

/// One MAP run and Laplace approximation per starting point (multiple local optima).
std::vector<LaplaceApprox> multi_laplace(const PosteriorSpec& spec, std::span<const LatentCode> inits,
                                         const MapConfig& cfg, std::vector<MapResult>* maps = nullptr);

}  // namespace sdfuq
