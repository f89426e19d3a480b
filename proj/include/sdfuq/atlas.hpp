#pragma once

#include "sdfuq/observation.hpp"
#include "sdfuq/optim.hpp"
#include "sdfuq/shapenet.hpp"

#include <cstdint>
#include <functional>
#include <span>
#include <utility>
#include <vector>

namespace sdfuq {

/// One latent code per training shape, addressed by shape id.
struct LatentTable {
  std::vector<int> ids;
  std::vector<LatentCode> codes;

  std::size_t size() const { return codes.size(); }
  /// Slot of `id`; throws InvalidArgument for unknown ids.
  std::size_t index_of(int id) const;
  const LatentCode& at(int id) const { return codes[index_of(id)]; }
};

struct TrainConfig {
  // architecture
  int latent_dim = 64;
  int depth = 5;
  int width = 256;
  // optimization
  int epochs = 2000;
  double learning_rate = 0.005;
  std::vector<std::pair<int, double>> lr_schedule;  // (epoch, factor); empty -> default_schedule()
  double inv_sigma2 = 1.8e-8;
  double alpha = 1.9e-6;
  int batch_shapes = 8;
  int batch_points = 2048;  // per-shape subsample, used only above kMaxFullBatchPoints
  double latent_init_std = 0.01;
  AdamParams adam;
  std::uint64_t seed = 0;

  /// Factors 0.2 at 90% and 97.5% of the epochs (1800 and 1950 of 2000).
  static std::vector<std::pair<int, double>> default_schedule(int epochs);
  void validate() const;
};

inline constexpr std::size_t kMaxFullBatchPoints = 100000;

/// One entry of a training batch.
struct TrainingSample {
  int shape_id = 0;
  Vec3 x = Vec3::Zero();
  Vector s;
};

/// Joint loss over a batch: (1/N_b) sum_i [ (1/(L K_i)) sum_k ||f(x_k, z_i) - s_k||^2
///   + inv_sigma2 ||z_i||^2 ] + alpha prod softplus(c), with N_b the shapes present in
/// the batch and K_i their sample counts within it.
double training_loss(const ShapeNetwork& net, const LatentTable& codes, std::span<const TrainingSample> batch,
                     const TrainConfig& cfg);

struct TrainResult {
  ShapeNetwork net;
  LatentTable codes;
  std::vector<double> loss_history;  // mean step loss per epoch
};

using EpochCallback = std::function<void(int epoch, double loss)>;

/// Adam on network parameters, Lipschitz logits and latent codes jointly.
TrainResult train_atlas(std::span<const TrainingShape> shapes, const TrainConfig& cfg,
                        const EpochCallback& on_epoch = {});

/// Same loss as training_loss() restricted to whole shapes, with gradients; used by the
/// trainer and exposed for gradient checks.
struct LossGradient {
  double loss = 0.0;
  Vector param_grad;
  Matrix latent_grad;  // d x shapes
};
LossGradient training_loss_gradient(const ShapeNetwork& net, std::span<const TrainingShape* const> shapes,
                                    std::span<const LatentCode* const> codes, const TrainConfig& cfg);

struct LatentPrior {
  Vector mu;
  double sigma_tilde2 = 0.0;
};

/// Isotropic Gaussian maximum-likelihood fit to the codes (divisor N).
LatentPrior fit_prior(const LatentTable& codes);

}  // namespace sdfuq
