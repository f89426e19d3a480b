#include "sdfuq/atlas.hpp"

#include "sdfuq/kernels.hpp"
#include "sdfuq/rng.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>
#include <set>

namespace sdfuq {

std::size_t LatentTable::index_of(int id) const {
  for (std::size_t i = 0; i < ids.size(); ++i)
    if (ids[i] == id) return i;
  throw InvalidArgument("unknown shape id " + std::to_string(id));
}

std::vector<std::pair<int, double>> TrainConfig::default_schedule(int epochs) {
  return {{static_cast<int>(std::lround(0.9 * epochs)), 0.2}, {static_cast<int>(std::lround(0.975 * epochs)), 0.2}};
}

void TrainConfig::validate() const {
  require(epochs >= 0, "epochs must be >= 0");
  require(learning_rate > 0.0, "learning_rate must be > 0");
  require(latent_dim >= 1 && depth >= 2 && width >= 1, "architecture: latent_dim >= 1, depth >= 2, width >= 1");
  require(batch_shapes >= 1 && batch_points >= 1, "batch sizes must be >= 1");
  require(inv_sigma2 >= 0.0 && alpha >= 0.0, "inv_sigma2 and alpha must be >= 0");
  for (const auto& [e, f] : lr_schedule) require(f > 0.0 && f <= 1.0 && e >= 0, "lr_schedule factors must lie in (0, 1]");
}

double training_loss(const ShapeNetwork& net, const LatentTable& codes, std::span<const TrainingSample> batch,
                     const TrainConfig& cfg) {
  require(!batch.empty(), "training_loss: empty batch");
  std::map<int, std::pair<double, std::size_t>> per_shape;  // id -> (sum ||r||^2, K_i)
  for (const auto& s : batch) {
    const LatentCode& z = codes.at(s.shape_id);
    const Vector r = net.forward(s.x, z) - s.s;
    auto& acc = per_shape[s.shape_id];
    acc.first += r.squaredNorm();
    acc.second += 1;
  }
  const double L = net.surface_count();
  double total = 0.0;
  for (const auto& [id, acc] : per_shape)
    total += acc.first / (L * static_cast<double>(acc.second)) + cfg.inv_sigma2 * codes.at(id).squaredNorm();
  return total / static_cast<double>(per_shape.size()) + cfg.alpha * net.lipschitz_penalty();
}

LossGradient training_loss_gradient(const ShapeNetwork& net, std::span<const TrainingShape* const> shapes,
                                    std::span<const LatentCode* const> codes, const TrainConfig& cfg) {
  require(!shapes.empty() && shapes.size() == codes.size(), "training_loss_gradient: shapes/codes mismatch");
  const double nb = static_cast<double>(shapes.size());
  const double L = net.surface_count();
  std::vector<kernels::TrainingSlot> slots;
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    require(shapes[i]->size() >= 1, "training shape without samples");
    slots.push_back({shapes[i], codes[i], 1.0 / (nb * L * static_cast<double>(shapes[i]->size()))});
  }
  auto term = kernels::parallel::training_term(net, slots);

  LossGradient g;
  g.loss = term.loss;
  g.param_grad = std::move(term.param_grad);
  g.latent_grad = std::move(term.latent_grad);
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    g.loss += cfg.inv_sigma2 * codes[i]->squaredNorm() / nb;
    g.latent_grad.col(static_cast<Eigen::Index>(i)) += 2.0 * cfg.inv_sigma2 / nb * *codes[i];
  }
  if (cfg.alpha > 0.0) {
    g.loss += cfg.alpha * net.lipschitz_penalty();
    g.param_grad.tail(net.depth()) += cfg.alpha * net.lipschitz_penalty_gradient();
  }
  return g;
}

namespace {

TrainingShape subsample(const TrainingShape& s, std::size_t k, Rng& rng) {
  if (s.size() <= k) return s;
  std::vector<std::size_t> idx(s.size());
  std::iota(idx.begin(), idx.end(), 0);
  for (std::size_t i = 0; i < k; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, idx.size() - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  TrainingShape out;
  out.id = s.id;
  out.distances.resize(s.distances.rows(), static_cast<Eigen::Index>(k));
  for (std::size_t i = 0; i < k; ++i) {
    out.points.push_back(s.points[idx[i]]);
    out.distances.col(static_cast<Eigen::Index>(i)) = s.distances.col(static_cast<Eigen::Index>(idx[i]));
  }
  return out;
}

}  // namespace

TrainResult train_atlas(std::span<const TrainingShape> shapes, const TrainConfig& cfg, const EpochCallback& on_epoch) {
  cfg.validate();
  require(!shapes.empty(), "train_atlas: no training shapes");
  const Eigen::Index L = shapes.front().distances.rows();
  std::set<int> seen;
  std::size_t total_points = 0;
  for (const auto& s : shapes) {
    require(s.size() >= 1, "train_atlas: shape " + std::to_string(s.id) + " has no samples");
    require(s.distances.rows() == L && s.distances.cols() == static_cast<Eigen::Index>(s.size()),
            "train_atlas: shape " + std::to_string(s.id) + " has inconsistent distance columns");
    require(s.distances.allFinite(), "train_atlas: non-finite distances in shape " + std::to_string(s.id));
    require(seen.insert(s.id).second, "train_atlas: duplicate shape id " + std::to_string(s.id));
    total_points += s.size();
  }

  TrainResult res;
  res.net = ShapeNetwork::init(cfg.latent_dim, static_cast<int>(L), cfg.depth, cfg.width, cfg.seed);
  Rng latent_rng = make_rng(cfg.seed, "latent");
  std::normal_distribution<double> init(0.0, cfg.latent_init_std);
  for (const auto& s : shapes) {
    res.codes.ids.push_back(s.id);
    res.codes.codes.push_back(Vector::NullaryExpr(cfg.latent_dim, [&] { return init(latent_rng); }));
  }
  if (cfg.epochs == 0) return res;

  auto schedule = cfg.lr_schedule.empty() ? TrainConfig::default_schedule(cfg.epochs) : cfg.lr_schedule;
  const bool subsampled = total_points > kMaxFullBatchPoints;
  Rng rng = make_rng(cfg.seed, "train");

  Vector theta = res.net.parameters();
  Adam theta_opt(theta.size(), cfg.adam);
  std::vector<Adam> code_opt(shapes.size(), Adam(cfg.latent_dim, cfg.adam));
  std::vector<std::size_t> order(shapes.size());
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    double lr = cfg.learning_rate;
    for (const auto& [e, f] : schedule)
      if (epoch >= e) lr *= f;
    std::shuffle(order.begin(), order.end(), rng);

    double epoch_loss = 0.0;
    int steps = 0;
    for (std::size_t b = 0; b < order.size(); b += static_cast<std::size_t>(cfg.batch_shapes)) {
      const std::size_t e = std::min(order.size(), b + static_cast<std::size_t>(cfg.batch_shapes));
      std::vector<TrainingShape> sub;
      std::vector<const TrainingShape*> batch;
      std::vector<const LatentCode*> codes;
      if (subsampled) sub.reserve(e - b);
      for (std::size_t i = b; i < e; ++i) {
        const auto& s = shapes[order[i]];
        if (subsampled) {
          sub.push_back(subsample(s, static_cast<std::size_t>(cfg.batch_points), rng));
          batch.push_back(&sub.back());
        } else {
          batch.push_back(&s);
        }
        codes.push_back(&res.codes.codes[order[i]]);
      }
      const auto g = training_loss_gradient(res.net, batch, codes, cfg);
      if (!std::isfinite(g.loss) || !g.param_grad.allFinite() || !g.latent_grad.allFinite())
        throw NumericalError("train_atlas: non-finite loss or gradient at epoch " + std::to_string(epoch));
      epoch_loss += g.loss;
      ++steps;

      theta_opt.step(theta, g.param_grad, lr);
      res.net.set_parameters(theta);
      for (std::size_t i = b; i < e; ++i)
        code_opt[order[i]].step(res.codes.codes[order[i]], g.latent_grad.col(static_cast<Eigen::Index>(i - b)), lr);
    }
    res.loss_history.push_back(epoch_loss / steps);
    if (on_epoch) on_epoch(epoch, res.loss_history.back());
  }
  return res;
}

LatentPrior fit_prior(const LatentTable& codes) {
  require(codes.size() >= 2, "fit_prior: need at least two latent codes");
  const Eigen::Index d = codes.codes.front().size();
  LatentPrior p;
  p.mu = Vector::Zero(d);
  for (const auto& z : codes.codes) p.mu += z;
  p.mu /= static_cast<double>(codes.size());
  double ss = 0.0;
  for (const auto& z : codes.codes) ss += (z - p.mu).squaredNorm();
  p.sigma_tilde2 = ss / (static_cast<double>(codes.size()) * static_cast<double>(d));
  return p;
}

}  // namespace sdfuq
