#pragma once

// Command layer behind the CLI. Each command takes one resolved JSON configuration
// (defaults < config file < flags), writes its artifacts into cfg["out_dir"] and records
// a run.json with the resolved config, input hashes and versions. Wall-clock timings go to
// timing.json so every other artifact is bit-reproducible from run.json.

#include <json.hpp>

#include <string>
#include <vector>

namespace sdfuq::pipeline {

using nlohmann::json;

std::string version();
const std::vector<std::string>& command_names();

/// Full default configuration of a command, including the shared keys seed, out_dir, threads.
json default_config(const std::string& command);

/// Overlay `overrides` onto `base`. Keys absent from `base` are rejected with a ConfigError
/// naming the dotted key. Objects merge recursively; everything else is replaced.
void merge_config(json& base, const json& overrides, const std::string& prefix = "");

/// Apply a "dotted.key=value" assignment. The value is parsed as JSON when possible and taken
/// as a plain string otherwise.
void apply_assignment(json& cfg, const std::string& assignment);

/// A config document may be a plain config or a previous run.json; returns the config part.
json config_from_document(const json& doc, const std::string& command);

/// Execute a command; returns the run record that was written to run.json.
json run(const std::string& command, const json& cfg);

}  // namespace sdfuq::pipeline
