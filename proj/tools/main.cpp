#include "sdfuq/common.hpp"
#include "sdfuq/io.hpp"
#include "sdfuq/pipeline.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <map>

namespace pl = sdfuq::pipeline;

namespace {

enum Exit { kOk = 0, kOther = 1, kConfig = 2, kNumerical = 3 };

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
  std::optional<int> threads;
  std::vector<std::string> sets;
  bool print_defaults = false;
};

nlohmann::json resolve(const std::string& command, const Options& o) {
  auto cfg = pl::default_config(command);
  if (!o.config.empty()) pl::merge_config(cfg, pl::config_from_document(sdfuq::io::read_json(o.config), command));
  for (const auto& s : o.sets) pl::apply_assignment(cfg, s);
  if (o.seed) cfg["seed"] = *o.seed;
  if (!o.out_dir.empty()) cfg["out_dir"] = o.out_dir;
  if (o.threads) cfg["threads"] = *o.threads;
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Uncertainty-aware implicit shape reconstruction"};
  app.require_subcommand(1);
  app.set_version_flag("--version", pl::version());
  Options opt;
  const std::map<std::string, std::string> about{
      {"synth", "draw synthetic ellipsoid shapes, training samples and test clouds"},
      {"train", "train the shape network and latent codes"},
      {"fit", "MAP latent code for a point cloud, meshes and metrics"},
      {"sample", "posterior sampling (nuts, hmc or laplace)"},
      {"reconstruct", "MMSE shape from posterior samples"},
      {"calibrate", "coverage and ECE against a known shape"},
      {"certainty", "voxel counts of sampled surface occurrences"},
      {"partial", "posterior spread as the observed region grows"}};
  for (const auto& name : pl::command_names()) {
    auto* sub = app.add_subcommand(name, about.at(name));
    sub->add_option("--config", opt.config, "JSON config or a previous run.json")->check(CLI::ExistingFile);
    sub->add_option("--seed", opt.seed, "root seed");
    sub->add_option("--out-dir", opt.out_dir, "output directory");
    sub->add_option("--threads", opt.threads, "worker threads (0 = runtime default)")->check(CLI::NonNegativeNumber);
    sub->add_option("--set", opt.sets, "override a config field, e.g. --set sampler.chains=4");
    sub->add_flag("--print-config", opt.print_defaults, "print the resolved config and exit");
  }
  CLI11_PARSE(app, argc, argv);
  const std::string command = app.get_subcommands().front()->get_name();

  try {
    const auto cfg = resolve(command, opt);
    if (opt.print_defaults) {
      std::cout << cfg.dump(2) << "\n";
      return kOk;
    }
    const auto record = pl::run(command, cfg);
    std::cout << command << ": wrote " << record.at("outputs").size() << " files to "
              << cfg.at("out_dir").get<std::string>() << "\n";
    return kOk;
  } catch (const sdfuq::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const sdfuq::InvalidArgument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const sdfuq::NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kOther;
  }
}
