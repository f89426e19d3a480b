#pragma once

#include "sdfuq/common.hpp"

#include <cstdint>
#include <vector>

namespace sdfuq {

/// Latent code of one shape (length d, network-internal units).
using LatentCode = Vector;

/// One affine layer with its Lipschitz logit c: softplus(c) bounds the row-sum norm of `weight`.
struct DenseLayer {
  Matrix weight;  // out x in
  Vector bias;    // out
  double lipschitz_logit = 0.0;
};

double softplus(double c);
double inverse_softplus(double s);
double sigmoid(double c);

/// Max absolute row sum, i.e. the operator norm induced by the infinity norm.
double inf_norm(const Matrix& w);

/// Per-row rescale of `w` so that every absolute row sum is at most `bound`.
Matrix normalize_rows(const Matrix& w, double bound);

/// Activations kept by a batched forward pass for the matching backward pass.
struct ForwardCache {
  std::vector<Matrix> activations;  // [0] = inputs, [i] = tanh output of hidden layer i
};

/// Latent-conditioned multi-surface signed distance network.
///
/// Maps (x, z) in R^{3+d} to L signed distances through depth-1 tanh layers and a
/// final affine layer. Every pass uses row-normalized weights (see normalize_rows), so
/// each layer is softplus(c_i)-Lipschitz in the infinity norm and the whole network is
/// prod_i softplus(c_i)-Lipschitz. Gradients are taken with respect to the raw weights,
/// through the normalization.
///
/// Flattened parameter layout: for each layer its weight (row-major) then its bias,
/// followed by all Lipschitz logits in layer order.
class ShapeNetwork {
 public:
  ShapeNetwork() = default;
  ShapeNetwork(std::vector<DenseLayer> layers, int latent_dim);

  /// Uniform(+-1/sqrt(fan_in)) weights and biases; logits set so softplus(c_i) equals
  /// the initial row-sum norm of layer i.
  static ShapeNetwork init(int latent_dim, int surface_count, int depth, int width, std::uint64_t seed);

  int latent_dim() const { return latent_dim_; }
  int input_dim() const { return 3 + latent_dim_; }
  int surface_count() const { return static_cast<int>(layers_.back().bias.size()); }
  int depth() const { return static_cast<int>(layers_.size()); }
  int hidden_width() const { return static_cast<int>(layers_.front().bias.size()); }

  const std::vector<DenseLayer>& layers() const { return layers_; }
  /// Weight actually applied by layer i (row-normalized).
  const Matrix& effective_weight(int i) const { return effective_[i]; }

  std::size_t parameter_count() const;
  Vector parameters() const;
  void set_parameters(const Vector& flat);

  Vector forward(const Vec3& x, const LatentCode& z) const;

  struct Gradient {
    Vector latent;  // d
    Vector params;  // parameter_count(), flattened layout
  };
  /// Reverse-mode gradient of <cotangent, forward(x, z)>.
  Gradient backprop(const Vec3& x, const LatentCode& z, const Vector& cotangent) const;

  /// Batched pass over the columns of `inputs` ((3+d) x B). Returns L x B.
  Matrix forward_batch(const Matrix& inputs, ForwardCache* cache = nullptr) const;

  /// Batched reverse pass. Returns the input cotangent ((3+d) x B). When
  /// `effective_grad` is non-null, accumulates the gradient with respect to the
  /// effective (normalized) weights and biases into it, using the flattened layout
  /// with zero logit entries; map it with raw_gradient().
  Matrix backward_batch(const ForwardCache& cache, const Matrix& out_cotangent,
                        Vector* effective_grad = nullptr) const;

  /// Chains an effective-parameter gradient through the row normalization, producing
  /// the gradient with respect to raw weights, biases and Lipschitz logits.
  Vector raw_gradient(const Vector& effective_grad) const;

  /// prod_i softplus(c_i).
  double lipschitz_penalty() const;
  /// d/dc of lipschitz_penalty(), one entry per layer.
  Vector lipschitz_penalty_gradient() const;
  /// Product of per-layer bounds, the Lipschitz constant of the whole map.
  double lipschitz_bound() const { return lipschitz_penalty(); }

  /// Copy whose raw weights are the normalized ones (what gets exported).
  ShapeNetwork normalized() const;

 private:
  void refresh();
  void check_inputs(const LatentCode& z) const;

  std::vector<DenseLayer> layers_;
  std::vector<Matrix> effective_;
  int latent_dim_ = 0;
};

}  // namespace sdfuq
