// Acceptance run: one PASS/FAIL line per criterion. The pipeline criteria (5b, 6, 7, 10)
// share one trained atlas built in the work directory.

#include "sdfuq/diagnostics.hpp"
#include "sdfuq/io.hpp"
#include "sdfuq/kernels.hpp"
#include "sdfuq/marching_cubes.hpp"
#include "sdfuq/mesh_distance.hpp"
#include "sdfuq/mesh_query.hpp"
#include "sdfuq/model.hpp"
#include "sdfuq/pipeline.hpp"
#include "sdfuq/posterior.hpp"
#include "sdfuq/rng.hpp"
#include "sdfuq/samplers.hpp"
#include "sdfuq/shapenet.hpp"

#include <CLI11.hpp>
#include <Eigen/Cholesky>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <iostream>
#include <random>
#include <set>
#include <sstream>

using namespace sdfuq;
namespace fs = std::filesystem;
namespace pl = sdfuq::pipeline;
using nlohmann::json;

namespace {

using Clock = std::chrono::steady_clock;
double since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

// Pipeline settings shared by the end-to-end criteria.
constexpr int kTrainShapes = 40;
constexpr int kTestShapes = 4;
constexpr std::uint64_t kSeed = 1;
// Latent prior fitted to the training codes; the noise variance is sampled jointly.
const json kPosterior = {{"zeta2", "inferred"}, {"mu", "prior"}, {"sigma_tilde2", "prior"}};
// Partial data uses the plug-in noise S/K^2: with the 1/K-weighted data term only a noise level that
// shrinks with K lets the posterior contract as points are added.
const json kPartialPosterior = {{"zeta2", "plugin"}, {"mu", "prior"}, {"sigma_tilde2", "prior"}};
constexpr int kNodesPerSurface = 500;  // 2000 nodes over the four surfaces

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v, int prec = 4) {
  std::ostringstream s;
  s.precision(prec);
  s << v;
  return s.str();
}

Vector randn(Rng& rng, Eigen::Index n, double scale = 1.0) {
  std::normal_distribution<double> g(0.0, scale);
  Vector v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = g(rng);
  return v;
}

// ------------------------------------------------------------------ 1

Outcome gradient_exactness() {
  const auto t0 = Clock::now();
  Rng rng(101);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const int d = 1 + trial % 8, L = 1 + trial % 4, depth = 2 + trial % 4, width = 4 + trial % 13;
    ShapeNetwork net = ShapeNetwork::init(d, L, depth, width, rng());
    Vector p = net.parameters();
    std::uniform_real_distribution<double> shift(-0.7, 0.7);
    for (Eigen::Index i = p.size() - depth; i < p.size(); ++i) p(i) += shift(rng);  // off the kink
    net.set_parameters(p);
    const Vec3 x = randn(rng, 3, 0.5);
    const Vector z = randn(rng, d, 0.5);
    const Vector c = randn(rng, L);
    const auto g = net.backprop(x, z, c);
    auto rel = [](double fd, double an) { return std::abs(fd - an) / std::max(1.0, std::abs(fd)); };
    for (int i = 0; i < d; ++i) {
      const double h = 1e-5 * (1.0 + std::abs(z(i)));
      Vector zp = z, zm = z;
      zp(i) += h;
      zm(i) -= h;
      const double fd = (c.dot(net.forward(x, zp)) - c.dot(net.forward(x, zm))) / (2 * h);
      worst = std::max(worst, rel(fd, g.latent(i)));
    }
    std::uniform_int_distribution<Eigen::Index> pick(0, p.size() - 1);
    for (int rep = 0; rep < 12; ++rep) {
      const Eigen::Index i = rep < depth ? p.size() - 1 - rep : pick(rng);
      const double h = 1e-5 * (1.0 + std::abs(p(i)));
      Vector pp = p, pm = p;
      pp(i) += h;
      pm(i) -= h;
      ShapeNetwork np = net, nm = net;
      np.set_parameters(pp);
      nm.set_parameters(pm);
      const double fd = (c.dot(np.forward(x, z)) - c.dot(nm.forward(x, z))) / (2 * h);
      worst = std::max(worst, rel(fd, g.params(i)));
    }
  }
  const double t = since(t0);
  return {worst < 1e-5 && t < 10.0, "worst relative error " + fmt(worst) + " over 100 networks, " + fmt(t, 3) + " s"};
}

// ------------------------------------------------------------------ 2

Outcome objective_equivalence() {
  Rng rng(202);
  std::normal_distribution<double> g(0.0, 1.0);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  double worst = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const int d = 2 + trial % 7, L = 1 + trial % 4;
    const auto net = ShapeNetwork::init(d, L, 3, 12, 1000 + trial);
    const NetworkModel m(net);
    PosteriorSpec spec;
    spec.model = &m;
    const int K = 1 + trial % 40;
    for (int k = 0; k < K; ++k) spec.cloud.push_back({Vec3(u(rng), u(rng), u(rng)), 0.1 * u(rng), k % L});
    const double inv_sigma2 = std::exp(3.0 * u(rng));
    spec.sigma_tilde2 = 1.0 / inv_sigma2;
    spec.zeta2 = 1.0;
    const Vector z = 0.5 * randn(rng, d);
    const double two_phi = 2.0 * neg_log_posterior(spec, z, 1.0).value;
    const double obj = inference_objective(net, spec.cloud, z, inv_sigma2);
    worst = std::max(worst, std::abs(two_phi - obj) / std::max(1.0, std::abs(obj)));
  }
  return {worst < 1e-12, "worst |2 Phi - objective| / max(1, |objective|) = " + fmt(worst) + " over 1000 pairs"};
}

// ------------------------------------------------------------------ 3

Outcome sampler_correctness() {
  const auto t0 = Clock::now();
  std::vector<std::string> notes;
  bool ok = true;

  // (a) N(0, 1)
  const GaussianDensity normal(Vector::Zero(1), Matrix::Identity(1, 1));
  HMCConfig cfg;
  cfg.seed = 303;
  for (auto kind : {SamplerKind::Hmc, SamplerKind::Nuts}) {
    const auto chains = run_chains(kind, normal, cfg, std::vector<Vector>{Vector::Zero(1)}, 20);
    std::vector<std::vector<Vector>> sets;
    for (const auto& c : chains) sets.push_back(c.samples);
    const double n_eff = multi_chain_ess(sets).pooled(0);
    double mean = 0.0, var = 0.0, n = 0.0;
    for (const auto& s : sets)
      for (const auto& x : s) {
        mean += x(0);
        n += 1.0;
      }
    mean /= n;
    for (const auto& s : sets)
      for (const auto& x : s) var += (x(0) - mean) * (x(0) - mean);
    var /= n - 1.0;
    const bool pass = std::abs(mean) < 4.0 / std::sqrt(n_eff) && std::abs(var - 1.0) < 0.1;
    ok = ok && pass;
    notes.push_back(to_string(kind) + " mean " + fmt(mean, 3) + " (bound " + fmt(4.0 / std::sqrt(n_eff), 3) + ") var " +
                    fmt(var, 4));
  }

  // (b) linear-forward conjugate shape posterior. The prior mean keeps the posterior mean well away
  // from zero so the relative error measures the sampler rather than Monte Carlo noise.
  const int d = 3, L = 2;
  const LinearModel lin(d, L, [d](const Vec3& x, int j) {
    LinearModel::Row r;
    r.a.resize(d);
    r.a << 1.0 + 0.2 * j, x.x(), x.y() * x.z() + 0.5 * x.x();
    r.b = 0.1 * j;
    return r;
  });
  PosteriorSpec spec;
  spec.model = &lin;
  Rng rng(304);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int k = 0; k < 40; ++k) spec.cloud.push_back({Vec3(u(rng), u(rng), u(rng)), 0.1 * u(rng), k % L});
  spec.zeta2 = 0.05;
  spec.sigma_tilde2 = 0.3;
  spec.mu = (Vector(d) << 1.0, -2.0, 0.5).finished();
  const double K = static_cast<double>(spec.cloud.size());
  Matrix P = Matrix::Identity(d, d) / spec.sigma_tilde2;
  Vector rhs = spec.mu / spec.sigma_tilde2;
  for (const auto& o : spec.cloud) {
    const auto r = lin.row(o.x, o.surface);
    P += r.a * r.a.transpose() / (K * spec.zeta2);
    rhs += r.a * (o.s - r.b) / (K * spec.zeta2);
  }
  const Matrix cov = P.inverse();
  const Vector mean = P.ldlt().solve(rhs);
  const PosteriorDensity dens(spec);
  HMCConfig cc;
  cc.seed = 305;
  cc.n_warmup = 300;
  cc.n_samples = 1000;
  for (auto kind : {SamplerKind::Hmc, SamplerKind::Nuts}) {
    const auto chains = run_chains(kind, dens, cc, std::vector<Vector>{Vector::Zero(d)}, 20);
    const auto xs = pooled_samples(chains);
    const Vector m_hat = mmse(chains);
    Matrix c_hat = Matrix::Zero(d, d);
    for (const auto& x : xs) c_hat += (x - m_hat) * (x - m_hat).transpose();
    c_hat /= static_cast<double>(xs.size() - 1);
    const double em = (m_hat - mean).norm() / mean.norm(), ec = (c_hat - cov).norm() / cov.norm();
    ok = ok && em < 0.05 && ec < 0.05;
    notes.push_back(to_string(kind) + " conjugate mean err " + fmt(em, 3) + " cov err " + fmt(ec, 3));
  }

  // (c) Laplace on quadratic targets
  double worst = 0.0;
  for (int trial = 0; trial < 10; ++trial) {
    const int n = 1 + trial % 6;
    const Matrix B = randn(rng, n * n).reshaped(n, n);
    const Matrix A = B * B.transpose() + Matrix::Identity(n, n);
    const Vector a = randn(rng, n);
    const auto lap = laplace_approx(GaussianDensity(a, A), a);
    const Matrix Ainv = A.inverse();
    worst = std::max({worst, (lap.covariance - Ainv).norm() / Ainv.norm(), (lap.mean - a).norm()});
  }
  ok = ok && worst < 1e-4;
  notes.push_back("laplace worst rel err " + fmt(worst, 3));
  const double t = since(t0);
  ok = ok && t < 120.0;
  std::string detail;
  for (const auto& s : notes) detail += s + "; ";
  return {ok, detail + fmt(t, 3) + " s"};
}

// ------------------------------------------------------------------ 4

Outcome leapfrog_symplecticity() {
  Matrix P(3, 3);
  P << 2.0, 0.3, 0.0, 0.3, 1.0, -0.2, 0.0, -0.2, 0.5;
  const GaussianDensity target(Vector::LinSpaced(3, -1.0, 1.0), P);
  const Vector inv_mass = (Vector(3) << 1.0, 0.5, 2.0).finished();
  Rng rng(404);
  double rev = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    PhaseState s;
    s.z = randn(rng, 3);
    s.p = randn(rng, 3);
    refresh(target, s);
    const PhaseState start = s;
    for (int i = 0; i < 25; ++i) leapfrog(target, s, 0.07, inv_mass);
    s.p = -s.p;
    for (int i = 0; i < 25; ++i) leapfrog(target, s, 0.07, inv_mass);
    rev = std::max({rev, (s.z - start.z).cwiseAbs().maxCoeff(), (s.p + start.p).cwiseAbs().maxCoeff()});
  }
  const GaussianDensity quad(Vector::Zero(2), Matrix::Identity(2, 2));
  auto mean_dH = [&](double eps, int steps) {
    Rng r(405);
    double total = 0.0;
    for (int i = 0; i < 4000; ++i) {
      PhaseState s;
      s.z = randn(r, 2);
      s.p = randn(r, 2);
      refresh(quad, s);
      const double h0 = s.phi + kinetic_energy(s.p, Vector::Ones(2));
      for (int k = 0; k < steps; ++k) leapfrog(quad, s, eps, Vector::Ones(2));
      total += std::abs(s.phi + kinetic_energy(s.p, Vector::Ones(2)) - h0);
    }
    return total / 4000.0;
  };
  const double ratio = mean_dH(0.2, 5) / mean_dH(0.1, 10);
  return {rev < 1e-12 && ratio >= 3.0 && ratio <= 5.0,
          "reversibility error " + fmt(rev, 3) + ", |dH| ratio on halving eps " + fmt(ratio, 4)};
}

// ------------------------------------------------------------------ 5a

Outcome self_calibration() {
  Rng rng(505);
  std::normal_distribution<double> g(0.0, 1.0);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<NodeDistribution> nodes(2000);
  for (auto& n : nodes) {
    const double m = u(rng), s = 0.05 + std::abs(u(rng));
    n.values.resize(500);
    for (auto& v : n.values) v = m + s * g(rng);
    n.f_star = m + s * g(rng);
  }
  const auto rep = calibrate(nodes, default_quantile_levels());
  double worst = 0.0;
  for (std::size_t i = 0; i < rep.levels.size(); ++i) worst = std::max(worst, std::abs(rep.coverage[i] - rep.levels[i]));
  return {rep.ece < 0.03 && worst <= 0.05, "ECE " + fmt(rep.ece, 3) + ", worst |AC - q| " + fmt(worst, 3)};
}

// ------------------------------------------------------------------ 8

Outcome ess_estimator() {
  Rng rng(808);
  std::normal_distribution<double> g(0.0, 1.0);
  double lo = 1e300, hi = 0.0, lo_ar = 1e300, hi_ar = 0.0;
  for (int rep = 0; rep < 20; ++rep) {
    std::vector<double> x(10000);
    for (auto& v : x) v = g(rng);
    const double e = ess(x).value / 10000.0;
    lo = std::min(lo, e);
    hi = std::max(hi, e);
  }
  const double rho = 0.5;
  for (int rep = 0; rep < 20; ++rep) {
    std::vector<double> x(10000);
    x[0] = g(rng) / std::sqrt(1 - rho * rho);
    for (std::size_t i = 1; i < x.size(); ++i) x[i] = rho * x[i - 1] + g(rng);
    const double e = ess(x).value / (10000.0 / 3.0);
    lo_ar = std::min(lo_ar, e);
    hi_ar = std::max(hi_ar, e);
  }
  const bool ok = lo >= 0.8 && hi <= 1.2 && lo_ar >= 0.8 && hi_ar <= 1.2;
  return {ok, "iid ESS/N in [" + fmt(lo, 3) + ", " + fmt(hi, 3) + "], AR(1) ESS/(N/3) in [" + fmt(lo_ar, 3) + ", " +
                  fmt(hi_ar, 3) + "] (20 repeats each)"};
}

// ------------------------------------------------------------------ 9

Outcome geometry_oracles() {
  const auto grid = GridSpec::cube(64);
  const auto sphere = extract_zero_level([](const Vec3& x) { return x.norm() - 0.5; }, grid);
  const double diag = std::sqrt(3.0) * grid.cell_size();
  double mc = 0.0;
  for (const auto& v : sphere.vertices) mc = std::max(mc, std::abs(v.norm() - 0.5));

  const auto ico = make_icosphere(4, 0.6);
  const MeshSdf sdf(ico);
  Rng rng(909);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  double sdf_err = 0.0;
  for (int i = 0; i < 2000; ++i) {
    const Vec3 x(u(rng), u(rng), u(rng));
    sdf_err = std::max(sdf_err, std::abs(sdf(x).value - (x.norm() - 0.6)));
  }

  const auto a = make_icosphere(4);
  const auto same = mesh_distances(a, a, 4000, 3);
  const double delta = 0.2;
  const auto moved = mesh_distances(a, make_icosphere(4, 1.0, Vec3(delta, 0, 0)), 20000, 5);
  const auto grown = mesh_distances(a, make_icosphere(4, 1.0 + delta), 20000, 6);
  // Translated unit spheres: the mean nearest distance is E|(|p - c| - 1)| over the sphere, which a
  // quadrature on the analytic pair gives independently of the meshes.
  double quad = 0.0;
  const int nq = 4000;
  for (int i = 0; i < nq; ++i) {
    const double ct = -1.0 + (i + 0.5) * 2.0 / nq;  // uniform in cos(theta) is uniform on the sphere
    const Vec3 p(ct, std::sqrt(1 - ct * ct), 0.0);
    quad += std::abs((p - Vec3(delta, 0, 0)).norm() - 1.0);
  }
  quad /= nq;

  const bool ok = mc <= diag && sdf_err < 0.01 && same.chamfer < 1e-12 && same.hausdorff < 1e-12 &&
                  std::abs(moved.hausdorff - delta) <= 0.01 && std::abs(moved.chamfer - quad) <= 0.01 &&
                  std::abs(grown.chamfer - delta) <= 0.01 && std::abs(grown.hausdorff - delta) <= 0.01;
  return {ok, "MC radius error " + fmt(mc, 3) + " (cell diagonal " + fmt(diag, 3) + "), mesh_sdf error " + fmt(sdf_err, 3) +
                  ", identical CD/HD " + fmt(same.chamfer) + "/" + fmt(same.hausdorff) + ", translated 0.2: HD " +
                  fmt(moved.hausdorff) + " CD " + fmt(moved.chamfer) + " (analytic " + fmt(quad) + "), radial offset 0.2: CD " +
                  fmt(grown.chamfer) + " HD " + fmt(grown.hausdorff)};
}

// ------------------------------------------------------------------ pipeline

struct Workspace {
  fs::path root;
  double pipeline_s = 0.0;
  bool built = false;
  std::string error;

  fs::path operator/(const std::string& s) const { return root / s; }
};

json cfg_for(const std::string& command, const fs::path& out, const json& overrides) {
  auto cfg = pl::default_config(command);
  cfg["out_dir"] = out.string();
  cfg["seed"] = kSeed;
  pl::merge_config(cfg, overrides);
  return cfg;
}

std::string model_path(const Workspace& w) { return (w / "train" / "model.bin").string(); }
std::string shapes_path(const Workspace& w) { return (w / "synth" / "shapes.json").string(); }

// Only the commands of build_pipeline count toward the pipeline budget.
json timed_run(Workspace& w, const std::string& command, const json& cfg, bool budgeted = false) {
  const auto t0 = Clock::now();
  auto rec = pl::run(command, cfg);
  const double t = since(t0);
  if (budgeted) w.pipeline_s += t;
  std::cerr << "  [" << command << " " << fmt(t, 4) << " s]\n";
  return rec;
}

// synth -> train -> fit -> sample -> calibrate on the first held-out shape.
void build_pipeline(Workspace& w) {
  fs::remove_all(w.root);
  fs::create_directories(w.root);
  timed_run(w, "synth", cfg_for("synth", w / "synth", {{"n_train", kTrainShapes}, {"n_test", kTestShapes}}), true);
  timed_run(w, "train", cfg_for("train", w / "train", {{"train", (w / "synth" / "train" / "manifest.json").string()}}), true);
  const json truth = {{"shapes", shapes_path(w)}, {"id", kTrainShapes}};
  const std::string cloud = (w / "synth" / "test" / ("cloud_" + std::to_string(kTrainShapes) + ".csv")).string();
  timed_run(w, "fit", cfg_for("fit", w / "fit", {{"model", model_path(w)}, {"cloud", cloud}, {"truth", truth}}), true);
  timed_run(w, "sample", cfg_for("sample", w / "sample",
                                 {{"model", model_path(w)}, {"cloud", cloud}, {"posterior", kPosterior},
                                  {"sampler", {{"method", "nuts"}, {"chains", 20}, {"n_samples", 500}, {"target_accept", 0.8}}}}), true);
  timed_run(w, "calibrate", cfg_for("calibrate", w / "calibrate",
                                    {{"model", model_path(w)}, {"samples", (w / "sample" / "chains.json").string()},
                                     {"truth", truth}, {"max_nodes", kNodesPerSurface}}), true);
  w.built = true;
}

Outcome pipeline_calibration(const Workspace& w) {
  if (!w.built) return {false, "pipeline failed: " + w.error};
  const auto cal = io::read_json(w / "calibrate" / "calibration.json");
  const auto fit = io::read_json(w / "fit" / "metrics.json");
  const double ece = cal.at("ece").get<double>();
  double cd = 0.0;
  for (const auto& [k, v] : fit.items()) cd = std::max(cd, v.at("chamfer").get<double>());
  const auto chains = io::read_json(w / "sample" / "chains.json");
  std::size_t div = 0;
  for (const auto& c : chains.at("chains")) div += c.at("divergences").get<std::size_t>();
  return {ece < 0.08, "pipeline ECE " + fmt(ece, 3) + " on " + std::to_string(cal.at("node_count").get<int>()) +
                          " nodes x " + std::to_string(cal.at("N").get<int>()) + " samples (MAP worst-surface Chamfer " +
                          fmt(cd, 3) + ", " + std::to_string(div) + " divergences)"};
}

bool monotone_with_slack(const std::vector<double>& v, std::string& why) {
  int violations = 0;
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i] > v[i - 1]) {
      ++violations;
      if (v[i] > 1.10 * v[i - 1]) {
        why = "increase of " + fmt(100.0 * (v[i] / v[i - 1] - 1.0), 3) + "% at level " + std::to_string(i + 1);
        return false;
      }
    }
  }
  if (violations > 1) {
    why = std::to_string(violations) + " increasing pairs";
    return false;
  }
  return true;
}

Outcome partial_trend(Workspace& w) {
  if (!w.built) return {false, "pipeline failed: " + w.error};
  const json truth = {{"shapes", shapes_path(w)}, {"id", kTrainShapes + 1}};
  int passed = 0;
  std::string detail;
  for (int s = 0; s < 5; ++s) {
    auto cfg = cfg_for("partial", w / ("partial_" + std::to_string(s)),
                       {{"model", model_path(w)}, {"truth", truth}, {"surface", 1}, {"levels", 5},
                        {"points_per_level", 40}, {"posterior", kPartialPosterior},
                        {"sampler", {{"chains", 4}, {"n_samples", 250}}}, {"max_nodes", 1000}});
    cfg["seed"] = 600 + s;
    timed_run(w, "partial", cfg);
    const auto res = io::read_json(w / ("partial_" + std::to_string(s)) / "partial.json");
    std::vector<double> sd, ad;
    for (const auto& l : res.at("levels")) {
      sd.push_back(l.at("median_std").get<double>());
      ad.push_back(l.at("median_abs_dist").get<double>());
    }
    std::string why_s, why_a;
    const bool ok = monotone_with_slack(sd, why_s) && monotone_with_slack(ad, why_a);
    passed += ok;
    detail += "seed " + std::to_string(s) + ": std";
    for (double v : sd) detail += " " + fmt(v, 3);
    detail += " | abs";
    for (double v : ad) detail += " " + fmt(v, 3);
    if (!ok) detail += " (" + why_s + why_a + ")";
    detail += "; ";
  }
  return {passed == 5, std::to_string(passed) + "/5 seeds monotone: " + detail};
}

Outcome noise_trend(Workspace& w) {
  if (!w.built) return {false, "pipeline failed: " + w.error};
  const auto doc = io::read_json(shapes_path(w));
  const auto shape = io::synthetic_shape_from_json(doc.at("test")[1]);
  // With K points the noise variance settles near sigma^2 / K, so on 100 points the lower bound of
  // 1e-4 corresponds to sigma = 0.1; the levels straddle it.
  const std::array<double, 3> levels{0.05, 0.1, 0.2};
  int ordered = 0;
  bool in_bounds = true;
  std::string detail;
  for (int r = 0; r < 5; ++r) {
    std::array<double, 3> means{};
    for (std::size_t l = 0; l < levels.size(); ++l) {
      const auto seed = derive_seed(700, "noise_repeat", static_cast<std::uint64_t>(r));
      std::vector<SurfaceSample> pts;
      for (const auto& [p, n] : sample_ellipsoid_surface(shape.surfaces[0], 100, derive_seed(seed, "points")))
        pts.push_back({p, n});
      const auto cloud = perturb_along_normals(pts, levels[l], 0, derive_seed(seed, "tau"));
      const fs::path dir = w / ("noise_" + std::to_string(r) + "_" + std::to_string(l));
      fs::create_directories(dir);
      io::write_point_cloud(dir / "cloud.csv", cloud);
      json post = kPosterior;
      post["zeta2"] = "inferred";
      auto cfg = cfg_for("sample", dir / "sample",
                         {{"model", model_path(w)}, {"cloud", (dir / "cloud.csv").string()}, {"posterior", post},
                          {"sampler", {{"chains", 4}, {"n_samples", 500}}}});
      cfg["seed"] = derive_seed(seed, "chains", l);
      timed_run(w, "sample", cfg);
      const auto res = io::read_json(dir / "sample" / "chains.json");
      const auto& post_z = res.at("zeta2").at("posterior");
      means[l] = post_z.at("mean").get<double>();
      in_bounds = in_bounds && post_z.at("min").get<double>() > kZeta2Min && post_z.at("max").get<double>() < 10.0;
    }
    const bool inc = means[0] < means[1] && means[1] < means[2];
    ordered += inc;
    detail += "repeat " + std::to_string(r) + ": " + fmt(means[0]) + " " + fmt(means[1]) + " " + fmt(means[2]) +
              (inc ? "" : " (not increasing)") + "; ";
  }
  return {ordered >= 4 && in_bounds,
          std::to_string(ordered) + "/5 repeats strictly increasing, samples in bounds: " + (in_bounds ? "yes" : "no") +
              "; posterior means of zeta2 " + detail};
}

Outcome reproducibility(Workspace& w) {
  if (!w.built) return {false, "pipeline failed: " + w.error};
  std::string detail;
  bool ok = true;
  for (const char* cmd : {"synth", "train", "fit", "sample", "calibrate"}) {
    const fs::path dir = w / cmd;
    const auto record = io::read_json(dir / "run.json");
    auto cfg = pl::config_from_document(record, cmd);
    cfg["out_dir"] = (w / (std::string(cmd) + "_rerun")).string();
    const auto t0 = Clock::now();
    const auto again = pl::run(cmd, cfg);
    const bool same = again.at("outputs") == record.at("outputs");
    ok = ok && same;
    detail += std::string(cmd) + (same ? " identical" : " DIFFERS") + " (" + std::to_string(again.at("outputs").size()) +
              " files, " + fmt(since(t0), 3) + " s); ";
  }
  const double budget = 15.0 * 60.0;
  ok = ok && w.pipeline_s < budget;
  return {ok, detail + "full pipeline " + fmt(w.pipeline_s, 4) + " s on " + std::to_string(kernels::thread_count()) +
                  " thread(s) (budget " + fmt(budget, 4) + " s)"};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  std::string work = "acceptance_work";
  std::vector<int> only;
  app.add_option("--work-dir", work, "scratch directory for pipeline artifacts");
  app.add_option("--only", only, "run only these criteria (pipeline criteria still build the atlas)");
  CLI11_PARSE(app, argc, argv);
  const std::set<int> selected(only.begin(), only.end());
  auto want = [&](int c) { return selected.empty() || selected.count(c); };

  int failures = 0;
  auto report = [&](const std::string& id, const std::string& name, const Outcome& o) {
    failures += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << "  criterion " << id << " " << name << ": " << o.detail << std::endl;
  };
  auto guarded = [](auto&& fn) -> Outcome {
    try {
      return fn();
    } catch (const std::exception& e) {
      return {false, std::string("exception: ") + e.what()};
    }
  };

  if (want(1)) report("1", "gradient exactness", guarded(gradient_exactness));
  if (want(2)) report("2", "objective equivalence", guarded(objective_equivalence));
  if (want(3)) report("3", "sampler correctness", guarded(sampler_correctness));
  if (want(4)) report("4", "leapfrog symplecticity", guarded(leapfrog_symplecticity));
  if (want(8)) report("8", "ESS estimator", guarded(ess_estimator));
  if (want(9)) report("9", "geometry oracles", guarded(geometry_oracles));

  const bool pipeline = want(5) || want(6) || want(7) || want(10);
  Workspace w{fs::absolute(work)};
  if (pipeline) {
    try {
      build_pipeline(w);
    } catch (const std::exception& e) {
      w.error = e.what();
    }
  }
  if (want(5)) {
    const auto a = guarded(self_calibration);
    const auto b = guarded([&] { return pipeline_calibration(w); });
    report("5", "calibration", {a.pass && b.pass, "self-test " + a.detail + "; " + b.detail});
  }
  if (want(6)) report("6", "partial-data trend", guarded([&] { return partial_trend(w); }));
  if (want(7)) report("7", "noise-inference trend", guarded([&] { return noise_trend(w); }));
  if (want(10)) report("10", "reproducibility and runtime", guarded([&] { return reproducibility(w); }));

  std::cout << (failures ? std::to_string(failures) + " criteria failed" : std::string("all criteria passed")) << std::endl;
  return failures ? 1 : 0;
}
