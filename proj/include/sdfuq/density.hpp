#pragma once

#include "sdfuq/common.hpp"

namespace sdfuq {

/// Target of the samplers: potential Phi(q) = -log density (up to a constant) on an
/// unconstrained state q.
class Density {
 public:
  virtual ~Density() = default;
  virtual int dim() const = 0;
  /// Returns Phi(q) and writes its gradient into `grad`.
  virtual double potential(const Vector& q, Vector& grad) const = 0;
  /// Reported coordinates of a state (identity unless the density is reparameterized).
  virtual Vector to_natural(const Vector& q) const { return q; }
};

/// Phi(q) = 1/2 (q - mean)^T precision (q - mean).
class GaussianDensity final : public Density {
 public:
  GaussianDensity(Vector mean, Matrix precision);
  int dim() const override { return static_cast<int>(mean_.size()); }
  double potential(const Vector& q, Vector& grad) const override;
  const Vector& mean() const { return mean_; }
  const Matrix& precision() const { return precision_; }

 private:
  Vector mean_;
  Matrix precision_;
};

/// Phi constant (zero gradient): free motion under leapfrog.
class FlatDensity final : public Density {
 public:
  explicit FlatDensity(int dim) : dim_(dim) {}
  int dim() const override { return dim_; }
  double potential(const Vector& q, Vector& grad) const override {
    grad = Vector::Zero(q.size());
    return 0.0;
  }

 private:
  int dim_;
};

}  // namespace sdfuq
