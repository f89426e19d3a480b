#include "sdfuq/shapenet.hpp"

#include "sdfuq/rng.hpp"

#include <cmath>
#include <random>

namespace sdfuq {

double softplus(double c) {
  if (c > 30.0) return c + std::log1p(std::exp(-c));
  return std::log1p(std::exp(c));
}

double inverse_softplus(double s) {
  require(s > 0.0, "inverse_softplus: argument must be positive");
  if (s > 30.0) return s + std::log(-std::expm1(-s));
  return std::log(std::expm1(s));
}

double sigmoid(double c) {
  if (c >= 0.0) return 1.0 / (1.0 + std::exp(-c));
  const double e = std::exp(c);
  return e / (1.0 + e);
}

double inf_norm(const Matrix& w) {
  if (w.size() == 0) return 0.0;
  return w.cwiseAbs().rowwise().sum().maxCoeff();
}

Matrix normalize_rows(const Matrix& w, double bound) {
  Matrix out = w;
  for (Eigen::Index r = 0; r < w.rows(); ++r) {
    const double a = w.row(r).cwiseAbs().sum();
    if (a > bound) out.row(r) *= bound / a;
  }
  return out;
}

ShapeNetwork::ShapeNetwork(std::vector<DenseLayer> layers, int latent_dim)
    : layers_(std::move(layers)), latent_dim_(latent_dim) {
  require(latent_dim >= 1, "ShapeNetwork: latent_dim must be >= 1");
  require(layers_.size() >= 2, "ShapeNetwork: depth must be >= 2");
  Eigen::Index in = 3 + latent_dim;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto& l = layers_[i];
    require(l.weight.cols() == in, "ShapeNetwork: layer " + std::to_string(i) + " input width mismatch");
    require(l.weight.rows() == l.bias.size() && l.bias.size() >= 1,
            "ShapeNetwork: layer " + std::to_string(i) + " bias size mismatch");
    require(l.weight.allFinite() && l.bias.allFinite() && std::isfinite(l.lipschitz_logit),
            "ShapeNetwork: non-finite parameters in layer " + std::to_string(i));
    in = l.weight.rows();
  }
  refresh();
}

ShapeNetwork ShapeNetwork::init(int latent_dim, int surface_count, int depth, int width, std::uint64_t seed) {
  require(latent_dim >= 1 && surface_count >= 1 && depth >= 2 && width >= 1,
          "init_network: dimensions must be positive and depth >= 2");
  Rng rng(derive_seed(seed, "init"));
  std::vector<DenseLayer> layers;
  int in = 3 + latent_dim;
  for (int i = 0; i < depth; ++i) {
    const int out = (i == depth - 1) ? surface_count : width;
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    std::uniform_real_distribution<double> u(-bound, bound);
    DenseLayer l;
    l.weight.resize(out, in);
    for (int r = 0; r < out; ++r)
      for (int c = 0; c < in; ++c) l.weight(r, c) = u(rng);
    l.bias.resize(out);
    for (int r = 0; r < out; ++r) l.bias(r) = u(rng);
    l.lipschitz_logit = inverse_softplus(inf_norm(l.weight));
    layers.push_back(std::move(l));
    in = out;
  }
  return ShapeNetwork(std::move(layers), latent_dim);
}

void ShapeNetwork::refresh() {
  effective_.resize(layers_.size());
  for (std::size_t i = 0; i < layers_.size(); ++i)
    effective_[i] = normalize_rows(layers_[i].weight, softplus(layers_[i].lipschitz_logit));
}

std::size_t ShapeNetwork::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers_) n += l.weight.size() + l.bias.size() + 1;
  return n;
}

Vector ShapeNetwork::parameters() const {
  Vector flat(parameter_count());
  Eigen::Index k = 0;
  for (const auto& l : layers_) {
    for (Eigen::Index r = 0; r < l.weight.rows(); ++r)
      for (Eigen::Index c = 0; c < l.weight.cols(); ++c) flat(k++) = l.weight(r, c);
    for (Eigen::Index r = 0; r < l.bias.size(); ++r) flat(k++) = l.bias(r);
  }
  for (const auto& l : layers_) flat(k++) = l.lipschitz_logit;
  return flat;
}

void ShapeNetwork::set_parameters(const Vector& flat) {
  require(static_cast<std::size_t>(flat.size()) == parameter_count(), "set_parameters: size mismatch");
  Eigen::Index k = 0;
  for (auto& l : layers_) {
    for (Eigen::Index r = 0; r < l.weight.rows(); ++r)
      for (Eigen::Index c = 0; c < l.weight.cols(); ++c) l.weight(r, c) = flat(k++);
    for (Eigen::Index r = 0; r < l.bias.size(); ++r) l.bias(r) = flat(k++);
  }
  for (auto& l : layers_) l.lipschitz_logit = flat(k++);
  refresh();
}

void ShapeNetwork::check_inputs(const LatentCode& z) const {
  if (z.size() != latent_dim_)
    throw InvalidArgument("latent code has length " + std::to_string(z.size()) + ", network expects " +
                          std::to_string(latent_dim_));
}

// Single-point passes use plain loops; they double as the reference for the batched path.
Vector ShapeNetwork::forward(const Vec3& x, const LatentCode& z) const {
  check_inputs(z);
  std::vector<double> a(3 + latent_dim_);
  for (int i = 0; i < 3; ++i) a[i] = x(i);
  for (int i = 0; i < latent_dim_; ++i) a[3 + i] = z(i);
  const std::size_t n = layers_.size();
  for (std::size_t li = 0; li < n; ++li) {
    const Matrix& w = effective_[li];
    const Vector& b = layers_[li].bias;
    std::vector<double> next(w.rows());
    for (Eigen::Index r = 0; r < w.rows(); ++r) {
      double acc = b(r);
      for (Eigen::Index c = 0; c < w.cols(); ++c) acc += w(r, c) * a[c];
      next[r] = (li + 1 < n) ? std::tanh(acc) : acc;
    }
    a = std::move(next);
  }
  return Eigen::Map<Vector>(a.data(), static_cast<Eigen::Index>(a.size()));
}

ShapeNetwork::Gradient ShapeNetwork::backprop(const Vec3& x, const LatentCode& z, const Vector& cotangent) const {
  check_inputs(z);
  require(cotangent.size() == surface_count(), "backprop: cotangent length must equal surface count");
  const std::size_t n = layers_.size();
  std::vector<std::vector<double>> acts(n + 1);
  acts[0].resize(3 + latent_dim_);
  for (int i = 0; i < 3; ++i) acts[0][i] = x(i);
  for (int i = 0; i < latent_dim_; ++i) acts[0][3 + i] = z(i);
  for (std::size_t li = 0; li < n; ++li) {
    const Matrix& w = effective_[li];
    acts[li + 1].resize(w.rows());
    for (Eigen::Index r = 0; r < w.rows(); ++r) {
      double acc = layers_[li].bias(r);
      for (Eigen::Index c = 0; c < w.cols(); ++c) acc += w(r, c) * acts[li][c];
      acts[li + 1][r] = (li + 1 < n) ? std::tanh(acc) : acc;
    }
  }

  Vector eff_grad = Vector::Zero(static_cast<Eigen::Index>(parameter_count()));
  std::vector<Eigen::Index> offset(n);
  Eigen::Index k = 0;
  for (std::size_t li = 0; li < n; ++li) {
    offset[li] = k;
    k += layers_[li].weight.size() + layers_[li].bias.size();
  }

  std::vector<double> delta(cotangent.data(), cotangent.data() + cotangent.size());
  for (std::size_t li = n; li-- > 0;) {
    const Matrix& w = effective_[li];
    if (li + 1 < n) {
      for (Eigen::Index r = 0; r < w.rows(); ++r) {
        const double t = acts[li + 1][r];
        delta[r] *= 1.0 - t * t;
      }
    }
    const Eigen::Index base = offset[li];
    for (Eigen::Index r = 0; r < w.rows(); ++r) {
      for (Eigen::Index c = 0; c < w.cols(); ++c) eff_grad(base + r * w.cols() + c) = delta[r] * acts[li][c];
      eff_grad(base + w.size() + r) = delta[r];
    }
    std::vector<double> prev(w.cols(), 0.0);
    for (Eigen::Index c = 0; c < w.cols(); ++c) {
      double acc = 0.0;
      for (Eigen::Index r = 0; r < w.rows(); ++r) acc += w(r, c) * delta[r];
      prev[c] = acc;
    }
    delta = std::move(prev);
  }

  Gradient g;
  g.latent = Eigen::Map<Vector>(delta.data() + 3, latent_dim_);
  g.params = raw_gradient(eff_grad);
  return g;
}

// tanh through expm1, which Eigen vectorizes; within a few ulp of std::tanh. Beyond |x| = 20 the
// result is already 1 to double precision, and clamping keeps expm1 finite.
static Matrix batch_tanh(const Matrix& x) {
  const Eigen::ArrayXXd e = (2.0 * x.array().max(-20.0).min(20.0)).expm1();
  return (e / (e + 2.0)).matrix();
}

Matrix ShapeNetwork::forward_batch(const Matrix& inputs, ForwardCache* cache) const {
  require(inputs.rows() == input_dim(), "forward_batch: input rows must equal 3 + latent_dim");
  const std::size_t n = layers_.size();
  if (cache) {
    cache->activations.resize(n);
    cache->activations[0] = inputs;
  }
  Matrix a = inputs;
  for (std::size_t li = 0; li < n; ++li) {
    Matrix pre = effective_[li] * a;
    pre.colwise() += layers_[li].bias;
    if (li + 1 < n) {
      a = batch_tanh(pre);
      if (cache) cache->activations[li + 1] = a;
    } else {
      a = std::move(pre);
    }
  }
  return a;
}

Matrix ShapeNetwork::backward_batch(const ForwardCache& cache, const Matrix& out_cotangent,
                                    Vector* effective_grad) const {
  const std::size_t n = layers_.size();
  require(cache.activations.size() == n, "backward_batch: cache does not match network depth");
  require(out_cotangent.rows() == surface_count() && out_cotangent.cols() == cache.activations[0].cols(),
          "backward_batch: cotangent shape mismatch");
  if (effective_grad && static_cast<std::size_t>(effective_grad->size()) != parameter_count())
    *effective_grad = Vector::Zero(static_cast<Eigen::Index>(parameter_count()));

  std::vector<Eigen::Index> offset(n);
  Eigen::Index k = 0;
  for (std::size_t li = 0; li < n; ++li) {
    offset[li] = k;
    k += layers_[li].weight.size() + layers_[li].bias.size();
  }

  Matrix delta = out_cotangent;
  for (std::size_t li = n; li-- > 0;) {
    if (li + 1 < n) {
      const auto& t = cache.activations[li + 1].array();
      delta.array() *= 1.0 - t.square();
    }
    if (effective_grad) {
      const Matrix& w = effective_[li];
      // Row-major flattening of delta * a^T.
      Matrix gw = delta * cache.activations[li].transpose();
      Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> dst(
          effective_grad->data() + offset[li], w.rows(), w.cols());
      dst += gw;
      effective_grad->segment(offset[li] + w.size(), w.rows()) += delta.rowwise().sum();
    }
    delta = effective_[li].transpose() * delta;
  }
  return delta;
}

Vector ShapeNetwork::raw_gradient(const Vector& effective_grad) const {
  require(static_cast<std::size_t>(effective_grad.size()) == parameter_count(), "raw_gradient: size mismatch");
  Vector raw = effective_grad;
  const std::size_t n = layers_.size();
  const Eigen::Index logit_base = raw.size() - static_cast<Eigen::Index>(n);
  Eigen::Index k = 0;
  for (std::size_t li = 0; li < n; ++li) {
    const Matrix& w = layers_[li].weight;
    const double c = layers_[li].lipschitz_logit;
    const double s = softplus(c);
    double dc = 0.0;
    for (Eigen::Index r = 0; r < w.rows(); ++r) {
      const double a = w.row(r).cwiseAbs().sum();
      if (!(a > s)) continue;  // unclamped row: identity map
      auto g = effective_grad.segment(k + r * w.cols(), w.cols());
      const double gw = g.dot(w.row(r).transpose());
      for (Eigen::Index col = 0; col < w.cols(); ++col) {
        const double sgn = (w(r, col) > 0.0) - (w(r, col) < 0.0);
        raw(k + r * w.cols() + col) = s / a * g(col) - s / (a * a) * sgn * gw;
      }
      dc += sigmoid(c) / a * gw;
    }
    raw(logit_base + static_cast<Eigen::Index>(li)) = effective_grad(logit_base + static_cast<Eigen::Index>(li)) + dc;
    k += w.size() + layers_[li].bias.size();
  }
  return raw;
}

double ShapeNetwork::lipschitz_penalty() const {
  double p = 1.0;
  for (const auto& l : layers_) p *= softplus(l.lipschitz_logit);
  return p;
}

Vector ShapeNetwork::lipschitz_penalty_gradient() const {
  const auto n = static_cast<Eigen::Index>(layers_.size());
  Vector g(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    double p = sigmoid(layers_[i].lipschitz_logit);
    for (Eigen::Index j = 0; j < n; ++j)
      if (j != i) p *= softplus(layers_[j].lipschitz_logit);
    g(i) = p;
  }
  return g;
}

ShapeNetwork ShapeNetwork::normalized() const {
  std::vector<DenseLayer> frozen = layers_;
  for (std::size_t i = 0; i < frozen.size(); ++i) frozen[i].weight = effective_[i];
  return ShapeNetwork(std::move(frozen), latent_dim_);
}

}  // namespace sdfuq
