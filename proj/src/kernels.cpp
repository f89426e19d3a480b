#include "sdfuq/kernels.hpp"

#include <cmath>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace sdfuq::kernels {

int thread_count() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

void set_thread_count(int n) {
#ifdef _OPENMP
  if (n > 0) omp_set_num_threads(n);
#else
  (void)n;
#endif
}

namespace {

void check_surface(const ShapeNetwork& net, int surface) {
  if (surface < 0 || surface >= net.surface_count())
    throw InvalidArgument("surface index " + std::to_string(surface + 1) + " outside 1.." +
                          std::to_string(net.surface_count()));
}

Eigen::Index chunk_count(std::size_t n) {
  return static_cast<Eigen::Index>((n + kChunk - 1) / kChunk);
}

// Columns [x; z] for points[begin, end).
Matrix pack_inputs(std::span<const Vec3> points, std::size_t begin, std::size_t end, const LatentCode& z) {
  const auto b = static_cast<Eigen::Index>(end - begin);
  Matrix in(3 + z.size(), b);
  for (Eigen::Index c = 0; c < b; ++c) {
    in.block<3, 1>(0, c) = points[begin + c];
    in.col(c).tail(z.size()) = z;
  }
  return in;
}

}  // namespace

// ---------------------------------------------------------------------------
// Serial reference

namespace serial {

Matrix evaluate(const ShapeNetwork& net, std::span<const Vec3> points, const LatentCode& z) {
  Matrix out(net.surface_count(), static_cast<Eigen::Index>(points.size()));
  for (std::size_t k = 0; k < points.size(); ++k) out.col(static_cast<Eigen::Index>(k)) = net.forward(points[k], z);
  return out;
}

DataTerm data_term(const ShapeNetwork& net, std::span<const PointObservation> cloud, const LatentCode& z) {
  DataTerm t;
  t.grad_z = Vector::Zero(net.latent_dim());
  for (const auto& o : cloud) {
    check_surface(net, o.surface);
    const Vector f = net.forward(o.x, z);
    const double r = f(o.surface) - o.s;
    t.sum_sq += r * r;
    Vector cot = Vector::Zero(net.surface_count());
    cot(o.surface) = 2.0 * r;
    t.grad_z += net.backprop(o.x, z, cot).latent;
  }
  return t;
}

TrainingTerm training_term(const ShapeNetwork& net, std::span<const TrainingSlot> slots) {
  TrainingTerm t;
  t.param_grad = Vector::Zero(static_cast<Eigen::Index>(net.parameter_count()));
  t.latent_grad = Matrix::Zero(net.latent_dim(), static_cast<Eigen::Index>(slots.size()));
  for (std::size_t si = 0; si < slots.size(); ++si) {
    const auto& slot = slots[si];
    for (std::size_t k = 0; k < slot.shape->size(); ++k) {
      const Vector r = net.forward(slot.shape->points[k], *slot.z) - slot.shape->distances.col(static_cast<Eigen::Index>(k));
      t.loss += slot.weight * r.squaredNorm();
      const auto g = net.backprop(slot.shape->points[k], *slot.z, 2.0 * slot.weight * r);
      t.param_grad += g.params;
      t.latent_grad.col(static_cast<Eigen::Index>(si)) += g.latent;
    }
  }
  return t;
}

std::vector<std::uint32_t> surface_counts(const ShapeNetwork& net, std::span<const Vec3> points,
                                          std::span<const LatentCode> samples, int surface, double tol) {
  check_surface(net, surface);
  std::vector<std::uint32_t> counts(points.size(), 0);
  for (std::size_t k = 0; k < points.size(); ++k)
    for (const auto& z : samples)
      if (std::abs(net.forward(points[k], z)(surface)) < tol) ++counts[k];
  return counts;
}

}  // namespace serial

// ---------------------------------------------------------------------------
// OpenMP

namespace parallel {

Matrix evaluate(const ShapeNetwork& net, std::span<const Vec3> points, const LatentCode& z) {
  require(z.size() == net.latent_dim(), "evaluate: latent length mismatch");
  const Eigen::Index n = static_cast<Eigen::Index>(points.size());
  Matrix out(net.surface_count(), n);
  const Eigen::Index chunks = chunk_count(points.size());
#pragma omp parallel for schedule(static)
  for (Eigen::Index c = 0; c < chunks; ++c) {
    const std::size_t b = static_cast<std::size_t>(c * kChunk);
    const std::size_t e = std::min(points.size(), b + static_cast<std::size_t>(kChunk));
    out.middleCols(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(e - b)) =
        net.forward_batch(pack_inputs(points, b, e, z));
  }
  return out;
}

DataTerm data_term(const ShapeNetwork& net, std::span<const PointObservation> cloud, const LatentCode& z) {
  require(z.size() == net.latent_dim(), "data_term: latent length mismatch");
  for (const auto& o : cloud) check_surface(net, o.surface);
  const Eigen::Index d = net.latent_dim();
  const Eigen::Index chunks = chunk_count(cloud.size());
  std::vector<double> partial_sq(static_cast<std::size_t>(chunks), 0.0);
  Matrix partial_grad = Matrix::Zero(d, chunks);

#pragma omp parallel for schedule(static)
  for (Eigen::Index c = 0; c < chunks; ++c) {
    const std::size_t b = static_cast<std::size_t>(c * kChunk);
    const std::size_t e = std::min(cloud.size(), b + static_cast<std::size_t>(kChunk));
    const auto m = static_cast<Eigen::Index>(e - b);
    Matrix in(3 + d, m);
    for (Eigen::Index k = 0; k < m; ++k) {
      in.block<3, 1>(0, k) = cloud[b + k].x;
      in.col(k).tail(d) = z;
    }
    ForwardCache cache;
    const Matrix out = net.forward_batch(in, &cache);
    Matrix cot = Matrix::Zero(out.rows(), m);
    double sq = 0.0;
    for (Eigen::Index k = 0; k < m; ++k) {
      const auto& o = cloud[b + k];
      const double r = out(o.surface, k) - o.s;
      sq += r * r;
      cot(o.surface, k) = 2.0 * r;
    }
    const Matrix in_cot = net.backward_batch(cache, cot);
    partial_sq[static_cast<std::size_t>(c)] = sq;
    partial_grad.col(c) = in_cot.bottomRows(d).rowwise().sum();
  }

  DataTerm t;
  t.grad_z = Vector::Zero(d);
  for (Eigen::Index c = 0; c < chunks; ++c) {
    t.sum_sq += partial_sq[static_cast<std::size_t>(c)];
    t.grad_z += partial_grad.col(c);
  }
  return t;
}

TrainingTerm training_term(const ShapeNetwork& net, std::span<const TrainingSlot> slots) {
  struct Chunk {
    std::size_t slot, begin, end;
  };
  std::vector<Chunk> chunks;
  for (std::size_t si = 0; si < slots.size(); ++si) {
    require(slots[si].z->size() == net.latent_dim(), "training_term: latent length mismatch");
    const std::size_t n = slots[si].shape->size();
    for (std::size_t b = 0; b < n; b += static_cast<std::size_t>(kChunk))
      chunks.push_back({si, b, std::min(n, b + static_cast<std::size_t>(kChunk))});
  }
  const auto nparam = static_cast<Eigen::Index>(net.parameter_count());
  const Eigen::Index d = net.latent_dim();
  const auto nchunks = static_cast<Eigen::Index>(chunks.size());
  std::vector<double> partial_loss(chunks.size(), 0.0);
  Matrix partial_eff = Matrix::Zero(nparam, nchunks);
  Matrix partial_latent = Matrix::Zero(d, nchunks);

#pragma omp parallel for schedule(static)
  for (Eigen::Index c = 0; c < nchunks; ++c) {
    const Chunk& ch = chunks[static_cast<std::size_t>(c)];
    const TrainingSlot& slot = slots[ch.slot];
    const auto m = static_cast<Eigen::Index>(ch.end - ch.begin);
    ForwardCache cache;
    const Matrix out = net.forward_batch(pack_inputs(slot.shape->points, ch.begin, ch.end, *slot.z), &cache);
    const Matrix r = out - slot.shape->distances.middleCols(static_cast<Eigen::Index>(ch.begin), m);
    partial_loss[static_cast<std::size_t>(c)] = slot.weight * r.squaredNorm();
    Vector eff = Vector::Zero(nparam);
    const Matrix in_cot = net.backward_batch(cache, 2.0 * slot.weight * r, &eff);
    partial_eff.col(c) = eff;
    partial_latent.col(c) = in_cot.bottomRows(d).rowwise().sum();
  }

  TrainingTerm t;
  Vector eff = Vector::Zero(nparam);
  t.latent_grad = Matrix::Zero(d, static_cast<Eigen::Index>(slots.size()));
  for (Eigen::Index c = 0; c < nchunks; ++c) {
    t.loss += partial_loss[static_cast<std::size_t>(c)];
    eff += partial_eff.col(c);
    t.latent_grad.col(static_cast<Eigen::Index>(chunks[static_cast<std::size_t>(c)].slot)) += partial_latent.col(c);
  }
  t.param_grad = net.raw_gradient(eff);
  return t;
}

std::vector<std::uint32_t> surface_counts(const ShapeNetwork& net, std::span<const Vec3> points,
                                          std::span<const LatentCode> samples, int surface, double tol) {
  check_surface(net, surface);
  std::vector<std::uint32_t> counts(points.size(), 0);
  const Eigen::Index chunks = chunk_count(points.size());
#pragma omp parallel for schedule(static)
  for (Eigen::Index c = 0; c < chunks; ++c) {
    const std::size_t b = static_cast<std::size_t>(c * kChunk);
    const std::size_t e = std::min(points.size(), b + static_cast<std::size_t>(kChunk));
    for (const auto& z : samples) {
      const Matrix out = net.forward_batch(pack_inputs(points, b, e, z));
      for (std::size_t k = b; k < e; ++k)
        if (std::abs(out(surface, static_cast<Eigen::Index>(k - b))) < tol) ++counts[k];
    }
  }
  return counts;
}

}  // namespace parallel

Matrix evaluate_samples(const ShapeNetwork& net, std::span<const Vec3> points,
                        std::span<const LatentCode> samples, int surface) {
  check_surface(net, surface);
  const auto n = static_cast<Eigen::Index>(points.size());
  Matrix out(static_cast<Eigen::Index>(samples.size()), n);
  const Eigen::Index chunks = chunk_count(points.size());
#pragma omp parallel for schedule(static)
  for (Eigen::Index c = 0; c < chunks; ++c) {
    const std::size_t b = static_cast<std::size_t>(c * kChunk);
    const std::size_t e = std::min(points.size(), b + static_cast<std::size_t>(kChunk));
    for (std::size_t i = 0; i < samples.size(); ++i) {
      const Matrix f = net.forward_batch(pack_inputs(points, b, e, samples[i]));
      out.block(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(b), 1, static_cast<Eigen::Index>(e - b)) =
          f.row(surface);
    }
  }
  return out;
}

}  // namespace sdfuq::kernels
