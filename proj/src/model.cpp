#include "sdfuq/model.hpp"

namespace sdfuq {

kernels::DataTerm NetworkModel::data_term(std::span<const PointObservation> cloud, const LatentCode& z) const {
  return kernels::parallel::data_term(net_, cloud, z);
}

Matrix NetworkModel::evaluate_samples(std::span<const Vec3> points, std::span<const LatentCode> samples,
                                      int surface) const {
  return kernels::evaluate_samples(net_, points, samples, surface);
}

LinearModel::LinearModel(int latent_dim, int surface_count, Features features)
    : d_(latent_dim), L_(surface_count), features_(std::move(features)) {
  require(d_ >= 1 && L_ >= 1, "LinearModel: dimensions must be >= 1");
  require(static_cast<bool>(features_), "LinearModel: missing feature map");
}

LinearModel::Row LinearModel::row(const Vec3& x, int surface) const {
  require(surface >= 0 && surface < L_, "surface index " + std::to_string(surface + 1) + " out of range");
  Row r = features_(x, surface);
  require(r.a.size() == d_, "LinearModel: feature length mismatch");
  return r;
}

kernels::DataTerm LinearModel::data_term(std::span<const PointObservation> cloud, const LatentCode& z) const {
  kernels::DataTerm t;
  t.grad_z = Vector::Zero(d_);
  for (const auto& o : cloud) {
    const Row r = row(o.x, o.surface);
    const double res = r.a.dot(z) + r.b - o.s;
    t.sum_sq += res * res;
    t.grad_z += 2.0 * res * r.a;
  }
  return t;
}

Matrix LinearModel::evaluate_samples(std::span<const Vec3> points, std::span<const LatentCode> samples,
                                     int surface) const {
  Matrix out(static_cast<Eigen::Index>(samples.size()), static_cast<Eigen::Index>(points.size()));
  for (std::size_t k = 0; k < points.size(); ++k) {
    const Row r = row(points[k], surface);
    for (std::size_t i = 0; i < samples.size(); ++i)
      out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = r.a.dot(samples[i]) + r.b;
  }
  return out;
}

}  // namespace sdfuq
