#pragma once

#include "sdfuq/common.hpp"

#include <cmath>

namespace sdfuq {

struct AdamParams {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam state for one parameter block. Blocks that skip a step keep their moments and
/// step count, so sparsely-updated blocks (latent codes outside a batch) stay unbiased.
class Adam {
 public:
  Adam() = default;
  Adam(Eigen::Index n, AdamParams p = {}) : p_(p), m_(Vector::Zero(n)), v_(Vector::Zero(n)) {}

  void step(Eigen::Ref<Vector> params, const Vector& grad, double lr) {
    ++t_;
    m_ = p_.beta1 * m_ + (1.0 - p_.beta1) * grad;
    v_ = p_.beta2 * v_ + (1.0 - p_.beta2) * grad.cwiseAbs2();
    const double c1 = 1.0 - std::pow(p_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(p_.beta2, static_cast<double>(t_));
    params.array() -= lr * (m_.array() / c1) / ((v_.array() / c2).sqrt() + p_.eps);
  }

  long steps() const { return t_; }

 private:
  AdamParams p_;
  Vector m_, v_;
  long t_ = 0;
};

}  // namespace sdfuq
