#include "sdfuq/pipeline.hpp"

#include "sdfuq/io.hpp"
#include "sdfuq/kernels.hpp"
#include "sdfuq/marching_cubes.hpp"
#include "sdfuq/mesh_distance.hpp"
#include "sdfuq/model.hpp"
#include "sdfuq/posterior.hpp"
#include "sdfuq/rng.hpp"
#include "sdfuq/voxel.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>
#include <numeric>
#include <optional>

#ifndef SDFUQ_VERSION
#define SDFUQ_VERSION "0.0.0"
#endif

namespace sdfuq::pipeline {

namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

// ------------------------------------------------------------------ defaults

json grid_defaults() { return {{"resolution", 64}, {"lo", -1.0}, {"hi", 1.0}}; }

json truth_defaults() { return {{"shapes", nullptr}, {"id", nullptr}}; }

json posterior_defaults() {
  return {{"zeta2", 1.0},          {"zeta2_bounds", {kZeta2Min, 10.0}},
          {"mu", "zero"},          {"sigma_tilde2", "sigma"},
          {"init", "prior_mean"},  {"map_iters", 1000},
          {"map_lr", 0.01}};
}

json sampler_defaults() {
  return {{"method", "nuts"},      {"chains", 20},         {"n_warmup", 100},       {"n_samples", 500},
          {"step_size", 1.0},      {"leapfrog_steps", 10}, {"jitter_steps", true},  {"target_accept", 0.8},
          {"max_tree_depth", 10},  {"adapt_mass", true},   {"laplace_restarts", 1}, {"laplace_draws", 500}};
}

json command_defaults(const std::string& command) {
  if (command == "synth")
    return {{"n_train", 40},         {"n_test", 4},         {"samples_per_shape", 2000},
            {"surface_fraction", 0.7}, {"surface_sigmas", {0.025, 0.0025}},
            {"cloud_points", 400},   {"cloud_noise", 0.0},  {"cloud_surfaces", {1, 2, 3, 4}}};
  if (command == "train")
    return {{"train", nullptr},      {"latent_dim", 8},     {"depth", 3},           {"width", 64},
            {"epochs", 500},         {"learning_rate", 0.005}, {"lr_schedule", nullptr},
            {"inv_sigma2", 1.8e-8},  {"alpha", 1.9e-6},     {"batch_shapes", 8},    {"batch_points", 2048},
            {"latent_init_std", 0.01}};
  if (command == "fit")
    return {{"model", nullptr}, {"cloud", nullptr}, {"posterior", posterior_defaults()}, {"grid", grid_defaults()},
            {"surfaces", json::array()}, {"truth", truth_defaults()}, {"metric_samples", 20000}};
  if (command == "sample")
    return {{"model", nullptr}, {"cloud", nullptr}, {"posterior", posterior_defaults()},
            {"sampler", sampler_defaults()}};
  if (command == "reconstruct")
    return {{"model", nullptr}, {"samples", nullptr}, {"grid", grid_defaults()}, {"surfaces", json::array()},
            {"truth", truth_defaults()}, {"metric_samples", 20000}};
  if (command == "calibrate")
    return {{"model", nullptr}, {"samples", nullptr}, {"truth", truth_defaults()}, {"surfaces", json::array()},
            {"nodes", "map"},   {"grid", grid_defaults()}, {"thin", 1}, {"max_nodes", 0}, {"levels", 20}};
  if (command == "certainty")
    return {{"model", nullptr}, {"samples", nullptr}, {"surface", 1}, {"grid", grid_defaults()},
            {"tol", "cell"},    {"threshold", nullptr}, {"threshold_fraction", 1.0}, {"thin", 1}};
  if (command == "partial")
    return {{"model", nullptr},      {"truth", truth_defaults()}, {"surface", 1},      {"levels", 5},
            {"points_per_level", 20}, {"dense_points", 2000},     {"noise", 0.0},      {"axis", 1},
            {"posterior", posterior_defaults()}, {"sampler", sampler_defaults()},
            {"grid", grid_defaults()}, {"thin", 1},               {"max_nodes", 0}};
  throw ConfigError("command", "unknown command '" + command + "'");
}

// ------------------------------------------------------------------ typed config access

class Section {
 public:
  Section(const json& j, std::string prefix) : j_(j), prefix_(std::move(prefix)) {}

  std::string name(const std::string& k) const { return prefix_.empty() ? k : prefix_ + "." + k; }
  const json& raw(const std::string& k) const {
    if (!j_.contains(k)) throw ConfigError(name(k), "missing");
    return j_.at(k);
  }
  bool is_null(const std::string& k) const { return raw(k).is_null(); }
  Section sub(const std::string& k) const {
    if (!raw(k).is_object()) throw ConfigError(name(k), "expected an object");
    return Section(raw(k), name(k));
  }

  double number(const std::string& k) const {
    const auto& v = raw(k);
    if (!v.is_number()) throw ConfigError(name(k), "expected a number");
    const double x = v.get<double>();
    if (!std::isfinite(x)) throw ConfigError(name(k), "must be finite");
    return x;
  }
  double positive(const std::string& k) const {
    const double x = number(k);
    if (!(x > 0.0)) throw ConfigError(name(k), "must be > 0");
    return x;
  }
  double non_negative(const std::string& k) const {
    const double x = number(k);
    if (x < 0.0) throw ConfigError(name(k), "must be >= 0");
    return x;
  }
  long integer(const std::string& k, long min) const {
    const auto& v = raw(k);
    if (!v.is_number_integer()) throw ConfigError(name(k), "expected an integer");
    const long x = v.get<long>();
    if (x < min) throw ConfigError(name(k), "must be >= " + std::to_string(min));
    return x;
  }
  std::uint64_t seed(const std::string& k) const {
    const auto& v = raw(k);
    if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<long long>() >= 0))
      throw ConfigError(name(k), "expected a non-negative integer");
    return v.get<std::uint64_t>();
  }
  bool boolean(const std::string& k) const {
    if (!raw(k).is_boolean()) throw ConfigError(name(k), "expected true or false");
    return raw(k).get<bool>();
  }
  std::string string(const std::string& k) const {
    if (!raw(k).is_string()) throw ConfigError(name(k), "expected a string");
    return raw(k).get<std::string>();
  }
  fs::path path(const std::string& k) const {
    if (raw(k).is_null()) throw ConfigError(name(k), "required");
    return string(k);
  }
  std::vector<double> numbers(const std::string& k, std::size_t n = 0) const {
    const auto& v = raw(k);
    if (!v.is_array()) throw ConfigError(name(k), "expected an array of numbers");
    std::vector<double> out;
    for (const auto& e : v) {
      if (!e.is_number()) throw ConfigError(name(k), "expected an array of numbers");
      out.push_back(e.get<double>());
    }
    if (n && out.size() != n) throw ConfigError(name(k), "expected " + std::to_string(n) + " entries");
    return out;
  }
  // 1-based surface list; empty -> all surfaces. Returned 0-based.
  std::vector<int> surfaces(const std::string& k, int surface_count) const {
    const auto& v = raw(k);
    if (!v.is_array()) throw ConfigError(name(k), "expected an array of 1-based surface indices");
    std::vector<int> out;
    for (const auto& e : v) {
      if (!e.is_number_integer()) throw ConfigError(name(k), "expected integers");
      const int j = e.get<int>();
      if (j < 1 || j > surface_count)
        throw ConfigError(name(k), "surface " + std::to_string(j) + " outside 1.." + std::to_string(surface_count));
      out.push_back(j - 1);
    }
    if (out.empty()) {
      out.resize(static_cast<std::size_t>(surface_count));
      std::iota(out.begin(), out.end(), 0);
    }
    return out;
  }
  int surface(const std::string& k, int surface_count) const {
    const long j = integer(k, 1);
    if (j > surface_count)
      throw ConfigError(name(k), "surface " + std::to_string(j) + " outside 1.." + std::to_string(surface_count));
    return static_cast<int>(j) - 1;
  }

 private:
  const json& j_;
  std::string prefix_;
};

GridSpec grid_from(const Section& s) {
  const long n = s.integer("resolution", 2);
  const double lo = s.number("lo");
  const double hi = s.number("hi");
  if (!(hi > lo)) throw ConfigError(s.name("hi"), "must exceed lo");
  return GridSpec::cube(static_cast<int>(n), lo, hi);
}

// ------------------------------------------------------------------ run bookkeeping

class Run {
 public:
  Run(std::string command, const json& cfg) : command_(std::move(command)), cfg_(cfg), root_(cfg_, "") {
    out_ = root_.string("out_dir");
    seed_ = root_.seed("seed");
    const long threads = root_.integer("threads", 0);
    if (threads > 0) kernels::set_thread_count(static_cast<int>(threads));
    fs::create_directories(out_);
  }

  const Section& cfg() const { return root_; }
  std::uint64_t seed() const { return seed_; }

  fs::path input(const fs::path& p) {
    if (!fs::is_regular_file(p)) throw IoError("input not found: " + p.string());
    inputs_[p.generic_string()] = io::git_blob_sha1(p);
    return p;
  }
  fs::path output(const std::string& rel) {
    const fs::path p = out_ / rel;
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    outputs_.push_back(rel);
    return p;
  }
  void time(const std::string& what, const json& s) { timing_[what] = s; }

  json finish() {
    std::sort(outputs_.begin(), outputs_.end());
    outputs_.erase(std::unique(outputs_.begin(), outputs_.end()), outputs_.end());
    json outs = json::object();
    for (const auto& rel : outputs_) outs[rel] = io::git_blob_sha1(out_ / rel);
    json record = {{"command", command_},
                   {"version", version()},
                   {"versions",
                    {{"sdfuq", version()},
                     {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                                   std::to_string(EIGEN_MINOR_VERSION)},
                     {"compiler", __VERSION__}}},
                   {"config", cfg_},
                   {"inputs", inputs_},
                   {"outputs", outs}};
    io::write_json(out_ / "run.json", record);
    timing_["total_s"] = seconds_since(start_);
    io::write_json(out_ / "timing.json", timing_);
    return record;
  }

 private:
  std::string command_;
  json cfg_;
  Section root_;
  fs::path out_;
  std::uint64_t seed_ = 0;
  json inputs_ = json::object();
  std::vector<std::string> outputs_;
  json timing_ = json::object();
  Clock::time_point start_ = Clock::now();
};

// ------------------------------------------------------------------ shared loaders

io::ModelFile load_model(Run& run, const Section& s) { return io::read_model(run.input(s.path("model"))); }

PointCloud load_cloud(Run& run, const Section& s, int surface_count) {
  auto cloud = io::read_point_cloud(run.input(s.path("cloud")), surface_count);
  if (cloud.empty()) throw IoError("point cloud " + s.string("cloud") + " has no points");
  return cloud;
}

std::optional<SyntheticShape> load_truth(Run& run, const Section& s, bool required) {
  const Section t = s.sub("truth");
  if (t.is_null("shapes")) {
    if (required) throw ConfigError(t.name("shapes"), "required");
    return std::nullopt;
  }
  if (t.is_null("id")) throw ConfigError(t.name("id"), "required when truth.shapes is set");
  const long id = t.integer("id", 0);
  const auto doc = io::read_json(run.input(t.path("shapes")));
  for (const char* part : {"train", "test"}) {
    if (!doc.contains(part)) continue;
    for (const auto& j : doc.at(part))
      if (j.at("id").get<long>() == id) return io::synthetic_shape_from_json(j);
  }
  throw ConfigError(t.name("id"), "shape " + std::to_string(id) + " not found in " + t.string("shapes"));
}

struct SampleSet {
  std::vector<LatentCode> z;  // pooled latent part, thinned, chain order
  std::vector<std::vector<Vector>> per_chain;
  json meta;
};

SampleSet load_samples(Run& run, const Section& s, int latent_dim, int thin) {
  const fs::path sidecar = run.input(s.path("samples"));
  SampleSet set;
  set.meta = io::read_json(sidecar);
  if (set.meta.at("latent_dim").get<int>() != latent_dim)
    throw IoError(sidecar.string() + ": latent dimension does not match the model");
  for (const auto& f : set.meta.at("files")) {
    const auto rows = io::read_chain(run.input(sidecar.parent_path() / f.get<std::string>()));
    std::vector<Vector> chain;
    for (std::size_t i = 0; i < rows.size(); i += static_cast<std::size_t>(thin)) {
      if (rows[i].size() < latent_dim) throw IoError(f.get<std::string>() + ": short row");
      chain.push_back(rows[i].head(latent_dim));
      set.z.push_back(chain.back());
    }
    set.per_chain.push_back(std::move(chain));
  }
  if (set.z.empty()) throw IoError(sidecar.string() + ": no samples");
  return set;
}

Vector to_vector(const json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}
std::vector<double> to_std(const Vector& v) { return {v.data(), v.data() + v.size()}; }

Vector mean_of(std::span<const LatentCode> zs) {
  Vector m = Vector::Zero(zs.front().size());
  for (const auto& z : zs) m += z;
  return m / static_cast<double>(zs.size());
}

// ------------------------------------------------------------------ posterior setup

struct Inference {
  PosteriorSpec spec;  // zeta2 fixed here; inference mode below
  std::string zeta2_mode;  // "fixed", "plugin", "residual", "inferred"
  LatentPrior fitted;
  MapConfig map;
  LatentCode init;
};

LatentPrior fitted_prior(const io::ModelFile& m) {
  if (m.meta.contains("prior"))
    return {to_vector(m.meta.at("prior").at("mu")), m.meta.at("prior").at("sigma_tilde2").get<double>()};
  if (m.codes && m.codes->size() >= 2) return fit_prior(*m.codes);
  throw IoError("model carries neither a fitted prior nor latent codes");
}

Inference setup_inference(const Section& post, const io::ModelFile& m, const NetworkModel& model, PointCloud cloud) {
  Inference inf;
  const int d = model.latent_dim();
  inf.fitted = fitted_prior(m);
  if (inf.fitted.mu.size() != d) throw IoError("fitted prior has wrong dimension");
  auto& spec = inf.spec;
  spec.model = &model;
  spec.cloud = std::move(cloud);

  const auto& mu = post.raw("mu");
  if (mu.is_string() && mu == "zero") {
    spec.mu = Vector::Zero(d);
  } else if (mu.is_string() && mu == "prior") {
    spec.mu = inf.fitted.mu;
  } else if (mu.is_array()) {
    const auto v = post.numbers("mu");
    if (v.size() != static_cast<std::size_t>(d)) throw ConfigError(post.name("mu"), "expected " + std::to_string(d) + " entries");
    spec.mu = Eigen::Map<const Vector>(v.data(), d);
  } else {
    throw ConfigError(post.name("mu"), "expected \"zero\", \"prior\" or an array");
  }

  const auto& st = post.raw("sigma_tilde2");
  if (st.is_string() && st == "sigma") {
    if (!m.meta.contains("inv_sigma2")) throw ConfigError(post.name("sigma_tilde2"), "model does not record inv_sigma2");
    spec.sigma_tilde2 = 1.0 / m.meta.at("inv_sigma2").get<double>();
  } else if (st.is_string() && st == "prior") {
    spec.sigma_tilde2 = inf.fitted.sigma_tilde2;
  } else if (st.is_number()) {
    spec.sigma_tilde2 = post.positive("sigma_tilde2");
  } else {
    throw ConfigError(post.name("sigma_tilde2"), "expected \"sigma\", \"prior\" or a number");
  }

  const auto bounds = post.numbers("zeta2_bounds", 2);
  if (!(bounds[0] > 0.0 && bounds[1] > bounds[0]))
    throw ConfigError(post.name("zeta2_bounds"), "need 0 < lo < hi");
  spec.zeta2_lo = bounds[0];
  spec.zeta2_hi = bounds[1];

  const auto& z2 = post.raw("zeta2");
  if (z2.is_number()) {
    inf.zeta2_mode = "fixed";
    spec.zeta2 = post.positive("zeta2");
  } else if (z2.is_string() && (z2 == "plugin" || z2 == "residual" || z2 == "inferred")) {
    inf.zeta2_mode = z2.get<std::string>();
    spec.zeta2 = 1.0;  // MAP objective; replaced after the MAP step
  } else {
    throw ConfigError(post.name("zeta2"), "expected a number, \"plugin\", \"residual\" or \"inferred\"");
  }

  const std::string init = post.string("init");
  if (init == "prior_mean") inf.init = inf.fitted.mu;
  else if (init == "zero") inf.init = Vector::Zero(d);
  else throw ConfigError(post.name("init"), "expected \"prior_mean\" or \"zero\"");

  inf.map.iters = static_cast<int>(post.integer("map_iters", 0));
  inf.map.learning_rate = post.positive("map_lr");
  spec.validate();
  return inf;
}

// Residual sum of squares of the data term at z.
double residual_ss(const Inference& inf, const LatentCode& z) {
  return inf.spec.model->data_term(inf.spec.cloud, z).sum_sq;
}

// Resolve the noise level from the MAP residual. "plugin" is the Gaussian estimate of the
// per-point variance divided by K (the likelihood's effective variance is K zeta2);
// "residual" is the mean squared residual itself.
void resolve_zeta2(Inference& inf, const LatentCode& z_map) {
  const double K = static_cast<double>(inf.spec.cloud.size());
  const double S = residual_ss(inf, z_map);
  double v = inf.spec.zeta2;
  if (inf.zeta2_mode == "plugin") v = S / (K * K);
  else if (inf.zeta2_mode == "residual") v = S / K;
  else if (inf.zeta2_mode == "inferred") v = S / (K * K);
  else return;
  const double lo = inf.spec.zeta2_lo, hi = inf.spec.zeta2_hi;
  if (inf.zeta2_mode == "inferred") {
    inf.spec.zeta2 = std::clamp(v, lo * (1.0 + 1e-6), hi * (1.0 - 1e-6));
    inf.spec.infer_zeta2 = true;
  } else {
    // The bounds belong to the inferred-noise prior; a plug-in value is used as is.
    if (!(v > 0.0)) throw NumericalError("zeta2 " + inf.zeta2_mode + " estimate is zero (exact fit)");
    inf.spec.zeta2 = v;
  }
}

HMCConfig sampler_config(const Section& s, std::uint64_t seed) {
  HMCConfig c;
  c.step_size = s.number("step_size");
  c.leapfrog_steps = static_cast<int>(s.integer("leapfrog_steps", std::numeric_limits<int>::min()));
  c.jitter_steps = s.boolean("jitter_steps");
  c.n_warmup = static_cast<int>(s.integer("n_warmup", std::numeric_limits<int>::min()));
  c.n_samples = static_cast<int>(s.integer("n_samples", std::numeric_limits<int>::min()));
  c.target_accept = s.number("target_accept");
  c.max_tree_depth = static_cast<int>(s.integer("max_tree_depth", std::numeric_limits<int>::min()));
  c.adapt_mass = s.boolean("adapt_mass");
  c.seed = seed;
  return c;
}

struct SamplingOutcome {
  std::vector<Chain> chains;
  MapResult map;
  json info;  // summaries for chains.json
};

// MAP, noise resolution and multi-chain sampling; shared by `sample` and `partial`.
SamplingOutcome infer(Inference& inf, const Section& samp, std::uint64_t seed, Run& run, const std::string& tag) {
  SamplingOutcome out;
  const std::string method = samp.string("method");
  if (method != "hmc" && method != "nuts") throw ConfigError(samp.name("method"), "expected hmc, nuts or laplace");
  const SamplerKind kind = parse_sampler_kind(method);
  const long n_chains = samp.integer("chains", 1);
  HMCConfig hc = sampler_config(samp, seed);

  auto t0 = Clock::now();
  out.map = map_estimate(inf.spec, inf.init, inf.map);
  run.time(tag + "map_s", seconds_since(t0));
  resolve_zeta2(inf, out.map.z);
  const int d = inf.spec.latent_dim();
  const PosteriorDensity target(inf.spec);
  hc.validate(kind, target.dim());

  Vector x0(target.dim());
  x0.head(d) = out.map.z;
  if (inf.spec.infer_zeta2) x0(d) = inf.spec.zeta2;
  const std::vector<Vector> inits{target.from_natural(x0)};
  t0 = Clock::now();
  out.chains = run_chains(kind, target, hc, inits, static_cast<int>(n_chains));
  run.time(tag + "sampling_s", seconds_since(t0));

  json summaries = json::array();
  json walls = json::array();
  std::vector<std::vector<Vector>> values;
  for (const auto& c : out.chains) {
    auto s = io::chain_summary(c);
    walls.push_back(s.at("wall_time_s"));
    s.erase("wall_time_s");
    summaries.push_back(std::move(s));
    values.push_back(c.samples);
  }
  run.time(tag + "chain_wall_s", walls);
  const auto ess = multi_chain_ess(values);
  out.info = {{"method", method},
              {"latent_dim", d},
              {"has_zeta2", inf.spec.infer_zeta2},
              {"cloud_points", inf.spec.cloud.size()},
              {"map", {{"z", to_std(out.map.z)}, {"initial_value", out.map.initial_value}, {"value", out.map.value}}},
              {"zeta2", {{"mode", inf.zeta2_mode}, {"value", inf.spec.zeta2}}},
              {"prior", {{"mu", to_std(inf.spec.prior_mean())}, {"sigma_tilde2", inf.spec.sigma_tilde2}}},
              {"chains", summaries},
              {"ess", {{"pooled", ess.pooled}, {"per_chain_mean", ess.per_chain_mean}}},
              {"mmse", to_std(mmse(out.chains))}};
  if (inf.spec.infer_zeta2) {
    double sum = 0.0, lo = inf.spec.zeta2_hi, hi = inf.spec.zeta2_lo;
    std::size_t n = 0;
    for (const auto& c : out.chains)
      for (const auto& s : c.samples) {
        sum += s(d);
        lo = std::min(lo, s(d));
        hi = std::max(hi, s(d));
        ++n;
      }
    out.info["zeta2"]["posterior"] = {{"mean", sum / static_cast<double>(n)}, {"min", lo}, {"max", hi}};
  }
  return out;
}

// Two-sided distances between a reconstructed mesh and an analytic ellipsoid.
json analytic_metrics(const TriMesh& mesh, const Ellipsoid& e, std::size_t n, std::uint64_t seed) {
  if (mesh.empty()) return {{"empty", true}};
  const auto a = distance_to_surface(mesh, [&](const Vec3& x) { return e.sdf(x); }, n, derive_seed(seed, "recon"));
  const auto truth = sample_ellipsoid_surface(e, n, derive_seed(seed, "truth"));
  std::vector<Vec3> pts;
  pts.reserve(truth.size());
  for (const auto& [p, nrm] : truth) pts.push_back(p);
  const auto db = parallel::nearest_distances(pts, mesh);
  const double mean_b = std::accumulate(db.begin(), db.end(), 0.0) / static_cast<double>(db.size());
  const double max_b = *std::max_element(db.begin(), db.end());
  return {{"chamfer", 0.5 * (a.mean + mean_b)},
          {"hausdorff", std::max(a.max, max_b)},
          {"recon_to_truth_mean", a.mean},
          {"truth_to_recon_mean", mean_b}};
}

json write_meshes(Run& run, const ShapeNetwork& net, const LatentCode& z, const std::vector<int>& surfaces,
                  const GridSpec& grid, const std::optional<SyntheticShape>& truth, std::size_t metric_samples) {
  json metrics = json::object();
  for (int j : surfaces) {
    const auto mesh = extract_zero_level(net, z, j, grid);
    const std::string name = "surface_" + std::to_string(j + 1);
    write_obj(mesh, run.output(name + ".obj"));
    if (truth)
      metrics[name] = analytic_metrics(mesh, truth->surfaces[static_cast<std::size_t>(j)], metric_samples,
                                       derive_seed(run.seed(), "metrics", static_cast<std::uint64_t>(j)));
  }
  return metrics;
}

std::vector<Vec3> subsample(std::vector<Vec3> nodes, long max_nodes, std::uint64_t seed) {
  if (max_nodes <= 0 || nodes.size() <= static_cast<std::size_t>(max_nodes)) return nodes;
  Rng rng(seed);
  std::vector<std::size_t> idx(nodes.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(static_cast<std::size_t>(max_nodes));
  std::sort(idx.begin(), idx.end());
  std::vector<Vec3> out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(nodes[i]);
  return out;
}

// Per-node sample distributions evaluated block-wise so memory stays bounded.
template <class Fn>
void for_node_blocks(const ShapeNetwork& net, const std::vector<Vec3>& nodes, std::span<const LatentCode> samples,
                     int surface, const SyntheticShape& truth, Fn&& fn) {
  constexpr std::size_t kBlock = 256;
  for (std::size_t b = 0; b < nodes.size(); b += kBlock) {
    const std::size_t e = std::min(nodes.size(), b + kBlock);
    const std::span<const Vec3> block(nodes.data() + b, e - b);
    const Matrix vals = kernels::evaluate_samples(net, block, samples, surface);
    std::vector<NodeDistribution> dist(block.size());
    for (std::size_t k = 0; k < block.size(); ++k) {
      dist[k].x = block[k];
      const auto col = vals.col(static_cast<Eigen::Index>(k));
      dist[k].values.assign(col.data(), col.data() + col.size());
      dist[k].f_star = truth.sdf(block[k], surface);
    }
    fn(dist);
  }
}

// ------------------------------------------------------------------ commands

void cmd_synth(Run& run) {
  const auto& c = run.cfg();
  EllipsoidFamilyParams fp;
  fp.seed = derive_seed(run.seed(), "synth");
  fp.samples_per_shape = static_cast<int>(c.integer("samples_per_shape", 1));
  fp.surface_fraction = c.number("surface_fraction");
  const auto sig = c.numbers("surface_sigmas", 2);
  fp.surface_sigmas = {sig[0], sig[1]};
  fp.validate();
  const int n_train = static_cast<int>(c.integer("n_train", 1));
  const int n_test = static_cast<int>(c.integer("n_test", 0));
  const long cloud_points = c.integer("cloud_points", 1);
  const double noise = c.non_negative("cloud_noise");
  const auto surfaces = c.surfaces("cloud_surfaces", kSyntheticSurfaces);

  const auto train = generate_family(fp, n_train, 0);
  const auto test = generate_family(fp, n_test, n_train);
  std::vector<TrainingShape> shapes;
  json doc = {{"params", io::to_json(fp)}, {"train", json::array()}, {"test", json::array()}};
  for (const auto& m : train) {
    shapes.push_back(m.samples);
    doc["train"].push_back(io::to_json(m.shape));
  }
  io::write_training_set(run.output("train/manifest.json").parent_path(), shapes);
  for (const auto& s : shapes) run.output("train/shape_" + std::to_string(s.id) + ".csv");

  const std::size_t per_surface = static_cast<std::size_t>(cloud_points) / surfaces.size();
  for (const auto& m : test) {
    doc["test"].push_back(io::to_json(m.shape));
    PointCloud cloud;
    for (int j : surfaces) {
      const auto idx = static_cast<std::uint64_t>(m.shape.id) * kSyntheticSurfaces + static_cast<std::uint64_t>(j);
      std::vector<SurfaceSample> pts;
      for (const auto& [p, n] :
           sample_ellipsoid_surface(m.shape.surfaces[static_cast<std::size_t>(j)], per_surface, derive_seed(run.seed(), "cloud", idx)))
        pts.push_back({p, n});
      const auto part = perturb_along_normals(pts, noise, j, derive_seed(run.seed(), "noise", idx));
      cloud.insert(cloud.end(), part.begin(), part.end());
    }
    io::write_point_cloud(run.output("test/cloud_" + std::to_string(m.shape.id) + ".csv"), cloud);
  }
  io::write_json(run.output("shapes.json"), doc);
}

void cmd_train(Run& run) {
  const auto& c = run.cfg();
  const fs::path manifest = run.input(c.path("train"));
  const auto mj = io::read_json(manifest);
  for (const auto& s : mj.at("shapes")) run.input(manifest.parent_path() / s.at("file").get<std::string>());
  const auto shapes = io::read_training_set(manifest);

  TrainConfig tc;
  tc.latent_dim = static_cast<int>(c.integer("latent_dim", 1));
  tc.depth = static_cast<int>(c.integer("depth", 2));
  tc.width = static_cast<int>(c.integer("width", 1));
  tc.epochs = static_cast<int>(c.integer("epochs", 1));
  tc.learning_rate = c.positive("learning_rate");
  if (!c.is_null("lr_schedule")) {
    const auto& s = c.raw("lr_schedule");
    if (!s.is_array()) throw ConfigError("lr_schedule", "expected an array of [epoch, factor] pairs");
    for (const auto& e : s) {
      if (!e.is_array() || e.size() != 2 || !e[0].is_number_integer() || !e[1].is_number())
        throw ConfigError("lr_schedule", "expected an array of [epoch, factor] pairs");
      tc.lr_schedule.emplace_back(e[0].get<int>(), e[1].get<double>());
    }
  }
  tc.inv_sigma2 = c.positive("inv_sigma2");
  tc.alpha = c.non_negative("alpha");
  tc.batch_shapes = static_cast<int>(c.integer("batch_shapes", 1));
  tc.batch_points = static_cast<int>(c.integer("batch_points", 1));
  tc.latent_init_std = c.positive("latent_init_std");
  tc.seed = derive_seed(run.seed(), "train");
  try {
    tc.validate();
  } catch (const InvalidArgument& e) {
    throw ConfigError("", e.what());
  }

  const auto t0 = Clock::now();
  const auto res = train_atlas(shapes, tc);
  run.time("train_s", seconds_since(t0));

  json meta = {{"inv_sigma2", tc.inv_sigma2}, {"alpha", tc.alpha}, {"epochs", tc.epochs}};
  if (res.codes.size() >= 2) {
    const auto p = fit_prior(res.codes);
    meta["prior"] = {{"mu", to_std(p.mu)}, {"sigma_tilde2", p.sigma_tilde2}};
  }
  io::write_model(run.output("model.bin"), res.net, &res.codes, meta);
  io::CsvTable loss;
  loss.header = {"epoch", "loss"};
  for (std::size_t e = 0; e < res.loss_history.size(); ++e)
    loss.rows.push_back({static_cast<double>(e), res.loss_history[e]});
  io::write_csv(run.output("loss.csv"), loss);
}

void cmd_fit(Run& run) {
  const auto& c = run.cfg();
  const auto m = load_model(run, c);
  const NetworkModel model(m.net);
  auto inf = setup_inference(c.sub("posterior"), m, model, load_cloud(run, c, m.net.surface_count()));
  const auto surfaces = c.surfaces("surfaces", m.net.surface_count());
  const auto grid = grid_from(c.sub("grid"));
  const auto truth = load_truth(run, c, false);
  const auto n_metric = static_cast<std::size_t>(c.integer("metric_samples", 1));

  const auto t0 = Clock::now();
  const auto map = map_estimate(inf.spec, inf.init, inf.map);
  run.time("map_s", seconds_since(t0));
  resolve_zeta2(inf, map.z);
  const json metrics = write_meshes(run, m.net, map.z, surfaces, grid, truth, n_metric);
  io::write_json(run.output("latent.json"), {{"z", to_std(map.z)},
                                               {"initial_value", map.initial_value},
                                               {"value", map.value},
                                               {"residual_ss", residual_ss(inf, map.z)},
                                               {"zeta2", {{"mode", inf.zeta2_mode}, {"value", inf.spec.zeta2}}}});
  if (truth) io::write_json(run.output("metrics.json"), metrics);
}

void cmd_sample(Run& run) {
  const auto& c = run.cfg();
  const auto m = load_model(run, c);
  const NetworkModel model(m.net);
  auto inf = setup_inference(c.sub("posterior"), m, model, load_cloud(run, c, m.net.surface_count()));
  const Section samp = c.sub("sampler");
  const std::string method = samp.string("method");

  if (method == "laplace") {
    if (inf.zeta2_mode == "inferred")
      throw ConfigError("posterior.zeta2", "laplace needs a fixed or plug-in zeta2");
    const long restarts = samp.integer("laplace_restarts", 1);
    const long draws = samp.integer("laplace_draws", 1);
    const auto t0 = Clock::now();
    const auto first = map_estimate(inf.spec, inf.init, inf.map);
    resolve_zeta2(inf, first.z);
    std::vector<LatentCode> inits{inf.init};
    Rng rng = make_rng(run.seed(), "restart");
    std::normal_distribution<double> g(0.0, 1.0);
    const double sd = std::sqrt(inf.fitted.sigma_tilde2);
    for (long r = 1; r < restarts; ++r) {
      LatentCode z = inf.fitted.mu;
      for (Eigen::Index i = 0; i < z.size(); ++i) z(i) += sd * g(rng);
      inits.push_back(z);
    }
    std::vector<MapResult> maps;
    const auto approx = multi_laplace(inf.spec, inits, inf.map, &maps);
    run.time("laplace_s", seconds_since(t0));
    json modes = json::array(), files = json::array();
    std::vector<LatentCode> all;
    for (std::size_t r = 0; r < approx.size(); ++r) {
      Chain ch;
      ch.samples = approx[r].draw(static_cast<std::size_t>(draws), derive_seed(run.seed(), "laplace", r));
      all.insert(all.end(), ch.samples.begin(), ch.samples.end());
      const std::string name = "laplace_" + std::to_string(r) + ".csv";
      io::write_chain(run.output(name), ch, false);
      files.push_back(name);
      json cov = json::array();
      for (Eigen::Index i = 0; i < approx[r].covariance.rows(); ++i) cov.push_back(to_std(approx[r].covariance.row(i)));
      modes.push_back({{"mean", to_std(approx[r].mean)},
                       {"covariance", cov},
                       {"map_value", maps[r].value},
                       {"gradient_norm", approx[r].gradient_norm},
                       {"floored_eigenvalues", approx[r].floored_eigenvalues}});
    }
    io::write_json(run.output("chains.json"),
                   {{"method", "laplace"},
                    {"latent_dim", model.latent_dim()},
                    {"has_zeta2", false},
                    {"cloud_points", inf.spec.cloud.size()},
                    {"files", files},
                    {"map", {{"z", to_std(maps.front().z)}, {"value", maps.front().value}}},
                    {"zeta2", {{"mode", inf.zeta2_mode}, {"value", inf.spec.zeta2}}},
                    {"modes", modes},
                    {"mmse", to_std(mean_of(all))}});
    return;
  }

  auto outcome = infer(inf, samp, run.seed(), run, "");
  json files = json::array();
  for (std::size_t i = 0; i < outcome.chains.size(); ++i) {
    const std::string name = "chain_" + std::to_string(i) + ".csv";
    io::write_chain(run.output(name), outcome.chains[i], inf.spec.infer_zeta2);
    files.push_back(name);
  }
  outcome.info["files"] = files;
  io::write_json(run.output("chains.json"), outcome.info);
}

void cmd_reconstruct(Run& run) {
  const auto& c = run.cfg();
  const auto m = load_model(run, c);
  const auto set = load_samples(run, c, m.net.latent_dim(), 1);
  const auto z = mean_of(set.z);
  const auto truth = load_truth(run, c, false);
  const json metrics = write_meshes(run, m.net, z, c.surfaces("surfaces", m.net.surface_count()), grid_from(c.sub("grid")),
                                    truth, static_cast<std::size_t>(c.integer("metric_samples", 1)));
  io::write_json(run.output("mmse.json"), {{"z", to_std(z)}, {"samples", set.z.size()}});
  if (truth) io::write_json(run.output("metrics.json"), metrics);
}

void cmd_calibrate(Run& run) {
  const auto& c = run.cfg();
  const auto m = load_model(run, c);
  const int thin = static_cast<int>(c.integer("thin", 1));
  const auto set = load_samples(run, c, m.net.latent_dim(), thin);
  const auto truth = load_truth(run, c, true);
  const auto surfaces = c.surfaces("surfaces", m.net.surface_count());
  for (int j : surfaces)
    if (j >= kSyntheticSurfaces) throw ConfigError("surfaces", "truth has only 4 surfaces");
  const auto grid = grid_from(c.sub("grid"));
  const long max_nodes = c.integer("max_nodes", 0);
  const long n_levels = c.integer("levels", 1);
  const auto levels = default_quantile_levels(static_cast<int>(n_levels));

  const std::string node_src = c.string("nodes");
  LatentCode z_nodes;
  if (node_src == "map") z_nodes = to_vector(set.meta.at("map").at("z"));
  else if (node_src == "mmse") z_nodes = mean_of(set.z);
  else throw ConfigError("nodes", "expected \"map\" or \"mmse\"");

  const auto t0 = Clock::now();
  std::vector<double> hits(levels.size(), 0.0);
  std::size_t total = 0;
  std::vector<NodeStats> stats;
  json per_surface = json::object();
  for (int j : surfaces) {
    const auto mesh = extract_zero_level(m.net, z_nodes, j, grid);
    const auto nodes = subsample(mesh.vertices, max_nodes, derive_seed(run.seed(), "nodes", static_cast<std::uint64_t>(j)));
    std::vector<double> sh(levels.size(), 0.0);
    for_node_blocks(m.net, nodes, set.z, j, *truth, [&](const std::vector<NodeDistribution>& block) {
      const auto rep = calibrate(block, levels);
      for (std::size_t q = 0; q < levels.size(); ++q) sh[q] += std::round(rep.coverage[q] * static_cast<double>(block.size()));
      const auto ns = node_stats(block);
      stats.insert(stats.end(), ns.begin(), ns.end());
    });
    double ece_j = 0.0;
    for (std::size_t q = 0; q < levels.size(); ++q) {
      hits[q] += sh[q];
      if (!nodes.empty()) ece_j += std::abs(sh[q] / static_cast<double>(nodes.size()) - levels[q]);
    }
    total += nodes.size();
    per_surface["surface_" + std::to_string(j + 1)] = {
        {"nodes", nodes.size()}, {"ece", nodes.empty() ? json() : json(ece_j / static_cast<double>(levels.size()))}};
  }
  if (total == 0) throw NumericalError("calibrate: reconstruction meshes are empty");
  CalibrationReport rep;
  rep.levels = levels;
  rep.node_count = total;
  rep.samples_per_node = set.z.size();
  for (std::size_t q = 0; q < levels.size(); ++q) {
    rep.coverage.push_back(hits[q] / static_cast<double>(total));
    rep.ece += std::abs(rep.coverage.back() - levels[q]);
  }
  rep.ece /= static_cast<double>(levels.size());
  run.time("calibrate_s", seconds_since(t0));

  const fs::path cj = run.output("calibration.json");
  io::write_calibration(run.output("calibration.csv"), cj, rep);
  auto j = io::read_json(cj);
  j["surfaces"] = per_surface;
  j["nodes_from"] = node_src;
  io::write_json(cj, j);
  io::write_node_stats(run.output("node_stats.csv"), stats);
}

void cmd_certainty(Run& run) {
  const auto& c = run.cfg();
  const auto m = load_model(run, c);
  const auto set = load_samples(run, c, m.net.latent_dim(), static_cast<int>(c.integer("thin", 1)));
  const int surface = c.surface("surface", m.net.surface_count());
  const auto grid = grid_from(c.sub("grid"));
  double tol = 0.0;
  if (c.raw("tol").is_string() && c.raw("tol") == "cell") tol = grid.cell_size();
  else if (c.raw("tol").is_number()) tol = c.positive("tol");
  else throw ConfigError("tol", "expected \"cell\" or a number");
  std::uint32_t threshold = 0;
  if (!c.is_null("threshold")) {
    threshold = static_cast<std::uint32_t>(c.integer("threshold", 0));
  } else {
    const double f = c.number("threshold_fraction");
    if (!(f > 0.0 && f <= 1.0)) throw ConfigError("threshold_fraction", "must lie in (0, 1]");
    threshold = static_cast<std::uint32_t>(std::ceil(f * static_cast<double>(set.z.size())));
  }
  const auto t0 = Clock::now();
  const auto map = certainty_map(m.net, set.z, surface, grid, tol, threshold);
  run.time("certainty_s", seconds_since(t0));
  write_voxel_grid(map.counts, run.output("counts.vox"));
  write_voxel_grid(map.mask, run.output("mask.vox"));
  const auto mask_voxels = std::accumulate(map.mask.values.begin(), map.mask.values.end(), std::size_t{0});
  const auto max_count = *std::max_element(map.counts.values.begin(), map.counts.values.end());
  io::write_json(run.output("certainty.json"), {{"samples", map.samples},
                                                 {"tol", tol},
                                                 {"threshold", threshold},
                                                 {"mask_voxels", mask_voxels},
                                                 {"max_count", max_count}});
}

void cmd_partial(Run& run) {
  const auto& c = run.cfg();
  const auto m = load_model(run, c);
  const NetworkModel model(m.net);
  const auto truth = load_truth(run, c, true);
  const int surface = c.surface("surface", std::min(m.net.surface_count(), kSyntheticSurfaces));
  const long levels = c.integer("levels", 1);
  const long per_level = c.integer("points_per_level", 1);
  const long dense = c.integer("dense_points", 1);
  const double noise = c.non_negative("noise");
  const long axis = c.integer("axis", 0);
  if (axis > 2) throw ConfigError("axis", "must be 0, 1 or 2");
  const auto grid = grid_from(c.sub("grid"));
  const int thin = static_cast<int>(c.integer("thin", 1));
  const long max_nodes = c.integer("max_nodes", 0);
  const Section post = c.sub("posterior");
  const Section samp = c.sub("sampler");
  if (samp.string("method") == "laplace") throw ConfigError("sampler.method", "partial runs hmc or nuts");

  const auto& e = truth->surfaces[static_cast<std::size_t>(surface)];
  const auto dense_pts = sample_ellipsoid_surface(e, static_cast<std::size_t>(dense), derive_seed(run.seed(), "dense"));
  double y_min = std::numeric_limits<double>::infinity(), y_max = -y_min;
  for (const auto& [p, n] : dense_pts) {
    y_min = std::min(y_min, p(axis));
    y_max = std::max(y_max, p(axis));
  }

  json summary = {{"y_min", y_min}, {"y_max", y_max}, {"levels", json::array()}};
  for (long l = 1; l <= levels; ++l) {
    const double y_hi = (static_cast<double>(l) / static_cast<double>(levels)) * y_max;
    if (!(y_hi > y_min)) throw InvalidArgument("partial: empty y-range at level " + std::to_string(l));
    std::vector<SurfaceSample> cand;
    for (const auto& [p, n] : dense_pts)
      if (p(axis) > y_min && p(axis) < y_hi) cand.push_back({p, n});
    Rng rng = make_rng(run.seed(), "partial_cloud", static_cast<std::uint64_t>(l));
    std::shuffle(cand.begin(), cand.end(), rng);
    const auto want = static_cast<std::size_t>(l * per_level);
    if (cand.size() > want) cand.resize(want);
    const auto cloud =
        perturb_along_normals(cand, noise, surface, derive_seed(run.seed(), "partial_noise", static_cast<std::uint64_t>(l)));
    const std::string tag = "level_" + std::to_string(l);
    io::write_point_cloud(run.output(tag + "/cloud.csv"), cloud);

    auto inf = setup_inference(post, m, model, cloud);
    auto outcome = infer(inf, samp, derive_seed(run.seed(), "partial_chains", static_cast<std::uint64_t>(l)), run, tag + "_");
    std::vector<LatentCode> zs;
    for (const auto& ch : outcome.chains)
      for (std::size_t i = 0; i < ch.samples.size(); i += static_cast<std::size_t>(thin))
        zs.push_back(ch.samples[i].head(model.latent_dim()));
    const Vector z_hat = mean_of(zs);
    const auto mesh = extract_zero_level(m.net, z_hat, surface, grid);
    write_obj(mesh, run.output(tag + "/mmse.obj"));
    const auto nodes = subsample(mesh.vertices, max_nodes, derive_seed(run.seed(), "nodes", static_cast<std::uint64_t>(l)));
    std::vector<NodeStats> stats;
    for_node_blocks(m.net, nodes, zs, surface, *truth, [&](const std::vector<NodeDistribution>& block) {
      const auto ns = node_stats(block);
      stats.insert(stats.end(), ns.begin(), ns.end());
    });
    io::write_node_stats(run.output(tag + "/node_stats.csv"), stats);
    outcome.info.erase("chains");
    std::vector<double> sd, ad;
    for (const auto& s : stats) {
      sd.push_back(s.std);
      ad.push_back(s.abs_dist);
    }
    summary["levels"].push_back({{"level", l},
                                 {"points", cloud.size()},
                                 {"y_hi", y_hi},
                                 {"nodes", stats.size()},
                                 {"median_std", stats.empty() ? json() : json(median(sd))},
                                 {"median_abs_dist", stats.empty() ? json() : json(median(ad))},
                                 {"inference", outcome.info}});
  }
  io::write_json(run.output("partial.json"), summary);
}

}  // namespace

std::string version() { return SDFUQ_VERSION; }

const std::vector<std::string>& command_names() {
  static const std::vector<std::string> names{"synth",     "train",     "fit",      "sample",
                                              "reconstruct", "calibrate", "certainty", "partial"};
  return names;
}

json default_config(const std::string& command) {
  json cfg = {{"seed", 0}, {"out_dir", "out/" + command}, {"threads", 0}};
  cfg.update(command_defaults(command));
  return cfg;
}

void merge_config(json& base, const json& overrides, const std::string& prefix) {
  if (!overrides.is_object()) throw ConfigError(prefix, "expected an object");
  for (const auto& [key, value] : overrides.items()) {
    const std::string name = prefix.empty() ? key : prefix + "." + key;
    if (!base.contains(key)) throw ConfigError(name, "unknown configuration key");
    auto& slot = base[key];
    if (slot.is_object()) {
      if (!value.is_object()) throw ConfigError(name, "expected an object");
      merge_config(slot, value, name);
    } else {
      slot = value;
    }
  }
}

void apply_assignment(json& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError(assignment, "expected key=value");
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  // Build a nested override from the dotted key so merge_config validates every level.
  json patch = value;
  std::size_t end = key.size();
  while (true) {
    const auto dot = key.rfind('.', end - 1);
    const std::string part = key.substr(dot == std::string::npos ? 0 : dot + 1, end - (dot == std::string::npos ? 0 : dot + 1));
    if (part.empty()) throw ConfigError(key, "malformed key");
    patch = json{{part, patch}};
    if (dot == std::string::npos) break;
    end = dot;
  }
  merge_config(cfg, patch);
}

json config_from_document(const json& doc, const std::string& command) {
  if (!doc.is_object()) throw ConfigError("", "config document must be a JSON object");
  if (doc.contains("command") && doc.contains("config")) {
    if (doc.at("command") != command)
      throw ConfigError("command", "run record is for '" + doc.at("command").get<std::string>() + "'");
    return doc.at("config");
  }
  return doc;
}

json run(const std::string& command, const json& cfg) {
  Run r(command, cfg);
  if (command == "synth") cmd_synth(r);
  else if (command == "train") cmd_train(r);
  else if (command == "fit") cmd_fit(r);
  else if (command == "sample") cmd_sample(r);
  else if (command == "reconstruct") cmd_reconstruct(r);
  else if (command == "calibrate") cmd_calibrate(r);
  else if (command == "certainty") cmd_certainty(r);
  else if (command == "partial") cmd_partial(r);
  else throw ConfigError("command", "unknown command '" + command + "'");
  return r.finish();
}

}  // namespace sdfuq::pipeline
