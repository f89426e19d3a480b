#pragma once

// Forward models used by inference: anything that maps (point, latent code) to L signed
// distances and can return the squared-residual sum of a point cloud with its z-gradient.

#include "sdfuq/kernels.hpp"
#include "sdfuq/observation.hpp"
#include "sdfuq/shapenet.hpp"

#include <functional>
#include <span>

namespace sdfuq {

class ShapeModel {
 public:
  virtual ~ShapeModel() = default;
  virtual int latent_dim() const = 0;
  virtual int surface_count() const = 0;
  /// Sum over the cloud of (f(x_k, z)_{j_k} - s_k)^2 and its gradient in z.
  virtual kernels::DataTerm data_term(std::span<const PointObservation> cloud, const LatentCode& z) const = 0;
  /// Component `surface` at every point for every sample: samples x points.
  virtual Matrix evaluate_samples(std::span<const Vec3> points, std::span<const LatentCode> samples,
                                  int surface) const = 0;
};

/// The trained network (held by reference).
class NetworkModel final : public ShapeModel {
 public:
  explicit NetworkModel(const ShapeNetwork& net) : net_(net) {}
  int latent_dim() const override { return net_.latent_dim(); }
  int surface_count() const override { return net_.surface_count(); }
  kernels::DataTerm data_term(std::span<const PointObservation> cloud, const LatentCode& z) const override;
  Matrix evaluate_samples(std::span<const Vec3> points, std::span<const LatentCode> samples,
                          int surface) const override;
  const ShapeNetwork& network() const { return net_; }

 private:
  const ShapeNetwork& net_;
};

/// f(x, z)_j = a_j(x)^T z + b_j(x). With a Gaussian prior the posterior is Gaussian in
/// closed form, which makes this the conjugate test model.
class LinearModel final : public ShapeModel {
 public:
  struct Row {
    Vector a;
    double b = 0.0;
  };
  using Features = std::function<Row(const Vec3& x, int surface)>;

  LinearModel(int latent_dim, int surface_count, Features features);
  int latent_dim() const override { return d_; }
  int surface_count() const override { return L_; }
  kernels::DataTerm data_term(std::span<const PointObservation> cloud, const LatentCode& z) const override;
  Matrix evaluate_samples(std::span<const Vec3> points, std::span<const LatentCode> samples,
                          int surface) const override;
  Row row(const Vec3& x, int surface) const;

 private:
  int d_;
  int L_;
  Features features_;
};

}  // namespace sdfuq
