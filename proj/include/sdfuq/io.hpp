#pragma once

// File formats of the pipeline: network checkpoints, training sets, point clouds, chains,
// calibration reports and node statistics. Text formats write shortest round-trip decimals,
// so a write/read cycle is exact and reruns produce identical bytes.

#include "sdfuq/atlas.hpp"
#include "sdfuq/diagnostics.hpp"
#include "sdfuq/samplers.hpp"
#include "sdfuq/synthetic.hpp"

#include <json.hpp>

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace sdfuq::io {

namespace fs = std::filesystem;

inline constexpr int kFormatVersion = 1;

/// Shortest decimal that parses back to exactly `v`.
std::string format_double(double v);
/// Strict parse of a whole field; throws IoError naming `what`.
double parse_double(std::string_view s, const std::string& what);

/// Simple comma-separated table with a header row.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;

  /// Index of a header column; throws IoError when absent.
  std::size_t column(const std::string& name) const;
};
CsvTable read_csv(const fs::path& path);
void write_csv(const fs::path& path, const CsvTable& table);

// Network checkpoint: one JSON header line, then the float64 LE parameters in the
// network's flattened layout, then the latent table (codes in table order).
struct ModelFile {
  ShapeNetwork net;
  std::optional<LatentTable> codes;
  nlohmann::json meta;  // free-form extras stored in the header ("meta")
};
void write_model(const fs::path& path, const ShapeNetwork& net, const LatentTable* codes = nullptr,
                 const nlohmann::json& meta = nlohmann::json::object());
ModelFile read_model(const fs::path& path);

// Training set: shape_<id>.csv files (x,y,z,s1..sL) plus manifest.json in `dir`.
void write_training_set(const fs::path& dir, std::span<const TrainingShape> shapes);
std::vector<TrainingShape> read_training_set(const fs::path& manifest);

// Point cloud CSV x,y,z,s,j with 1-based surface j. `surface_count` > 0 validates j.
void write_point_cloud(const fs::path& path, const PointCloud& cloud);
PointCloud read_point_cloud(const fs::path& path, int surface_count = 0);

// Chains: CSV z_0..z_{d-1}[,zeta2] per chain; the sidecar JSON is assembled by the caller.
void write_chain(const fs::path& path, const Chain& chain, bool has_zeta2);
std::vector<Vector> read_chain(const fs::path& path);
nlohmann::json chain_summary(const Chain& chain);

void write_calibration(const fs::path& csv, const fs::path& json, const CalibrationReport& report);
void write_node_stats(const fs::path& path, std::span<const NodeStats> stats);

nlohmann::json to_json(const SyntheticShape& shape);
SyntheticShape synthetic_shape_from_json(const nlohmann::json& j);
nlohmann::json to_json(const EllipsoidFamilyParams& p);

void write_json(const fs::path& path, const nlohmann::json& j);
nlohmann::json read_json(const fs::path& path);

/// Git blob hash ("blob <size>\0" + content, SHA-1) of a file, hex encoded.
std::string git_blob_sha1(const fs::path& path);
std::string sha1_hex(std::string_view data);

}  // namespace sdfuq::io
