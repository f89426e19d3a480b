#include "sdfuq/posterior.hpp"

#include "sdfuq/rng.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include <cmath>
#include <random>
#include <sstream>

namespace sdfuq {

Vector PosteriorSpec::prior_mean() const { return mu.size() > 0 ? mu : Vector::Zero(latent_dim()); }

void PosteriorSpec::validate() const {
  require(model != nullptr, "posterior: no forward model");
  require(sigma_tilde2 > 0.0 && std::isfinite(sigma_tilde2), "sigma_tilde2 must be > 0");
  require(mu.size() == 0 || mu.size() == latent_dim(), "prior mean has wrong dimension");
  if (infer_zeta2) {
    require(zeta2_lo >= kZeta2Min, "zeta2 lower bound must be >= 1e-4");
    require(zeta2_hi > zeta2_lo && std::isfinite(zeta2_hi), "zeta2 bounds must satisfy lo < hi");
    require(!cloud.empty(), "zeta2 inference needs a nonempty point cloud");
  } else {
    require(zeta2 > 0.0 && std::isfinite(zeta2), "zeta2 must be > 0");
  }
  for (const auto& o : cloud) {
    require(o.surface >= 0 && o.surface < model->surface_count(),
            "surface index " + std::to_string(o.surface + 1) + " out of range 1.." +
                std::to_string(model->surface_count()));
    require(std::isfinite(o.s) && o.x.allFinite(), "point cloud contains non-finite values");
  }
}

NegLogPosterior neg_log_posterior(const PosteriorSpec& spec, const LatentCode& z, double zeta2) {
  require(zeta2 > 0.0, "zeta2 must be > 0");
  require(z.size() == spec.latent_dim(), "latent code has wrong dimension");
  NegLogPosterior out;
  const Vector dz = z - spec.prior_mean();
  out.value = dz.squaredNorm() / (2.0 * spec.sigma_tilde2);
  out.grad_z = dz / spec.sigma_tilde2;
  if (spec.cloud.empty()) return out;
  const auto t = spec.model->data_term(spec.cloud, z);
  const double K = static_cast<double>(spec.cloud.size());
  out.value += t.sum_sq / (2.0 * K * zeta2);
  out.grad_z += t.grad_z / (2.0 * K * zeta2);
  out.grad_zeta2 = -t.sum_sq / (2.0 * K * zeta2 * zeta2);
  if (spec.infer_zeta2) {
    out.value += 0.5 * K * std::log(zeta2);
    out.grad_zeta2 += 0.5 * K / zeta2;
  }
  return out;
}

double inference_objective(const ShapeNetwork& net, const PointCloud& cloud, const LatentCode& z, double inv_sigma2) {
  double s = 0.0;
  for (const auto& o : cloud) {
    const double r = net.forward(o.x, z)(o.surface) - o.s;
    s += r * r;
  }
  const double data = cloud.empty() ? 0.0 : s / static_cast<double>(cloud.size());
  return data + inv_sigma2 * z.squaredNorm();
}

double zeta2_from_u(double u, double lo, double hi) {
  const double v = lo + (hi - lo) * sigmoid(u);
  if (v <= lo) return std::nextafter(lo, hi);
  if (v >= hi) return std::nextafter(hi, lo);
  return v;
}

double u_from_zeta2(double zeta2, double lo, double hi) {
  require(zeta2 > lo && zeta2 < hi, "zeta2 outside its prior bounds");
  const double f = (zeta2 - lo) / (hi - lo);
  return std::log(f) - std::log1p(-f);
}

PosteriorDensity::PosteriorDensity(PosteriorSpec spec) : spec_(std::move(spec)) { spec_.validate(); }

int PosteriorDensity::dim() const { return spec_.latent_dim() + (spec_.infer_zeta2 ? 1 : 0); }

double PosteriorDensity::potential(const Vector& q, Vector& grad) const {
  const int d = spec_.latent_dim();
  if (!spec_.infer_zeta2) {
    auto r = neg_log_posterior(spec_, q, spec_.zeta2);
    grad = std::move(r.grad_z);
    return r.value;
  }
  const double u = q(d);
  const double zeta2 = zeta2_from_u(u, spec_.zeta2_lo, spec_.zeta2_hi);
  const auto r = neg_log_posterior(spec_, q.head(d), zeta2);
  const double s = sigmoid(u);
  // log |d zeta2/du| = log(hi - lo) + log s + log(1 - s) = const - softplus(-u) - softplus(u)
  const double log_jac = -softplus(-u) - softplus(u);
  grad.resize(d + 1);
  grad.head(d) = r.grad_z;
  grad(d) = r.grad_zeta2 * (spec_.zeta2_hi - spec_.zeta2_lo) * s * (1.0 - s) - (1.0 - 2.0 * s);
  return r.value - log_jac;
}

Vector PosteriorDensity::to_natural(const Vector& q) const {
  if (!spec_.infer_zeta2) return q;
  Vector x = q;
  x(x.size() - 1) = zeta2_from_u(q(q.size() - 1), spec_.zeta2_lo, spec_.zeta2_hi);
  return x;
}

Vector PosteriorDensity::from_natural(const Vector& x) const {
  if (!spec_.infer_zeta2) return x;
  Vector q = x;
  q(q.size() - 1) = u_from_zeta2(x(x.size() - 1), spec_.zeta2_lo, spec_.zeta2_hi);
  return q;
}

MapResult map_estimate(const PosteriorSpec& spec, const LatentCode& init, const MapConfig& cfg) {
  require(cfg.iters >= 0, "map iterations must be >= 0");
  require(cfg.learning_rate > 0.0, "map learning rate must be > 0");
  PosteriorSpec fixed = spec;
  fixed.infer_zeta2 = false;
  fixed.validate();
  MapResult res;
  res.z = init;
  auto r = neg_log_posterior(fixed, res.z, fixed.zeta2);
  res.initial_value = r.value;
  Adam opt(init.size(), cfg.adam);
  for (int it = 0; it < cfg.iters; ++it) {
    if (!std::isfinite(r.value) || !r.grad_z.allFinite())
      throw NumericalError("map_estimate: non-finite objective at iteration " + std::to_string(it));
    opt.step(res.z, r.grad_z, cfg.learning_rate);
    r = neg_log_posterior(fixed, res.z, fixed.zeta2);
  }
  if (!std::isfinite(r.value)) throw NumericalError("map_estimate: non-finite objective at iteration " + std::to_string(cfg.iters));
  res.value = r.value;
  return res;
}

LaplaceApprox laplace_approx(const Density& target, const Vector& mode) {
  const int d = target.dim();
  require(mode.size() == d, "laplace_approx: mode has wrong dimension");
  LaplaceApprox out;
  out.mean = mode;
  Vector g0;
  target.potential(mode, g0);
  out.gradient_norm = g0.norm();

  Matrix H(d, d);
  Vector gp, gm;
  for (int j = 0; j < d; ++j) {
    const double h = 1e-3 * (1.0 + std::abs(mode(j)));
    Vector zp = mode, zm = mode;
    zp(j) += h;
    zm(j) -= h;
    target.potential(zp, gp);
    target.potential(zm, gm);
    H.col(j) = (gp - gm) / (2.0 * h);
  }
  out.hessian = 0.5 * (H + H.transpose());
  if (!out.hessian.allFinite()) throw NumericalError("laplace_approx: non-finite Hessian");

  Eigen::SelfAdjointEigenSolver<Matrix> eig(out.hessian);
  Vector lambda = eig.eigenvalues();
  const double scale = std::max(1.0, lambda.cwiseAbs().maxCoeff());
  std::vector<double> negative;
  for (int i = 0; i < d; ++i) {
    if (lambda(i) < -1e-6 * scale) negative.push_back(lambda(i));
    if (lambda(i) < kLaplaceEigenFloor) {
      lambda(i) = kLaplaceEigenFloor;
      ++out.floored_eigenvalues;
    }
  }
  if (!negative.empty()) {
    std::ostringstream msg;
    msg << "laplace_approx: Hessian is indefinite; negative eigenvalues:";
    for (double v : negative) msg << ' ' << v;
    throw NumericalError(msg.str());
  }
  const Matrix& V = eig.eigenvectors();
  out.covariance = V * lambda.cwiseInverse().asDiagonal() * V.transpose();
  out.covariance = 0.5 * (out.covariance + out.covariance.transpose());
  return out;
}

std::vector<Vector> LaplaceApprox::draw(std::size_t n, std::uint64_t seed) const {
  Eigen::LLT<Matrix> llt(covariance);
  if (llt.info() != Eigen::Success) throw NumericalError("laplace draw: covariance is not positive definite");
  const Matrix L = llt.matrixL();
  Rng rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<Vector> out;
  out.reserve(n);
  Vector xi(mean.size());
  for (std::size_t i = 0; i < n; ++i) {
    for (Eigen::Index k = 0; k < xi.size(); ++k) xi(k) = g(rng);
    out.push_back(mean + L * xi);
  }
  return out;
}

std::vector<LaplaceApprox> multi_laplace(const PosteriorSpec& spec, std::span<const LatentCode> inits,
                                         const MapConfig& cfg, std::vector<MapResult>* maps) {
  require(!inits.empty(), "multi_laplace: no starting points");
  PosteriorSpec fixed = spec;
  fixed.infer_zeta2 = false;
  const PosteriorDensity density(fixed);
  std::vector<LaplaceApprox> out;
  if (maps) maps->clear();
  for (const auto& init : inits) {
    auto m = map_estimate(fixed, init, cfg);
    out.push_back(laplace_approx(density, m.z));
    if (maps) maps->push_back(std::move(m));
  }
  return out;
}

}  // namespace sdfuq
