#pragma once

// Data-parallel inner loops over points.
//
// Each kernel exists twice: `serial::` is a plain per-point loop over the single-point
// network API, kept as the reference for tests and benchmarks; `parallel::` batches
// points into fixed-size column chunks (GEMM per layer) and distributes chunks with
// OpenMP. Reductions always run over chunks in index order, so parallel results do not
// depend on the thread count.

#include "sdfuq/observation.hpp"
#include "sdfuq/shapenet.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace sdfuq::kernels {

inline constexpr Eigen::Index kChunk = 128;

/// Sum of squared residuals f(x_k, z)_{j_k} - s_k and its gradient in z.
struct DataTerm {
  double sum_sq = 0.0;
  Vector grad_z;
};

/// One shape inside a training batch: its samples, its latent code and the weight of
/// its squared-residual sum in the loss.
struct TrainingSlot {
  const TrainingShape* shape = nullptr;
  const LatentCode* z = nullptr;
  double weight = 1.0;
};

/// Weighted squared-residual sum over a training batch with gradients for the raw
/// network parameters and for every slot's latent code.
struct TrainingTerm {
  double loss = 0.0;
  Vector param_grad;
  Matrix latent_grad;  // d x slots
};

namespace serial {
Matrix evaluate(const ShapeNetwork& net, std::span<const Vec3> points, const LatentCode& z);
DataTerm data_term(const ShapeNetwork& net, std::span<const PointObservation> cloud, const LatentCode& z);
TrainingTerm training_term(const ShapeNetwork& net, std::span<const TrainingSlot> slots);
std::vector<std::uint32_t> surface_counts(const ShapeNetwork& net, std::span<const Vec3> points,
                                          std::span<const LatentCode> samples, int surface, double tol);
}  // namespace serial

namespace parallel {
Matrix evaluate(const ShapeNetwork& net, std::span<const Vec3> points, const LatentCode& z);
DataTerm data_term(const ShapeNetwork& net, std::span<const PointObservation> cloud, const LatentCode& z);
TrainingTerm training_term(const ShapeNetwork& net, std::span<const TrainingSlot> slots);
std::vector<std::uint32_t> surface_counts(const ShapeNetwork& net, std::span<const Vec3> points,
                                          std::span<const LatentCode> samples, int surface, double tol);
}  // namespace parallel

/// Evaluates one surface component for every sample code at every point: returns
/// samples x points (row i = sample i). Parallel over point chunks.
Matrix evaluate_samples(const ShapeNetwork& net, std::span<const Vec3> points,
                        std::span<const LatentCode> samples, int surface);

/// Number of OpenMP threads kernels will use (1 without OpenMP).
int thread_count();
void set_thread_count(int n);

}  // namespace sdfuq::kernels
