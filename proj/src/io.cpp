#include "sdfuq/io.hpp"

#include "binary_io.hpp"

#include <openssl/evp.h>

#include <charconv>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace sdfuq::io {

using nlohmann::json;

std::string format_double(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

double parse_double(std::string_view s, const std::string& what) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  double v = 0.0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || r.ec != std::errc() || r.ptr != s.data() + s.size())
    throw IoError(what + ": cannot parse '" + std::string(s) + "' as a number");
  return v;
}

namespace {

std::vector<std::string_view> split(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto c = line.find(',', start);
    out.push_back(line.substr(start, c == std::string_view::npos ? std::string_view::npos : c - start));
    if (c == std::string_view::npos) break;
    start = c + 1;
  }
  return out;
}

std::string trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return std::string(s);
}

template <class T>
T json_field(const json& j, const char* key, const fs::path& path) {
  if (!j.contains(key)) throw IoError(path.string() + ": missing header field '" + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw IoError(path.string() + ": header field '" + key + "' has the wrong type");
  }
}

}  // namespace

std::size_t CsvTable::column(const std::string& name) const {
  for (std::size_t i = 0; i < header.size(); ++i)
    if (header[i] == name) return i;
  throw IoError("missing CSV column '" + name + "'");
}

CsvTable read_csv(const fs::path& path) {
  auto in = detail::open_in(path, false);
  CsvTable t;
  std::string line;
  if (!std::getline(in, line)) throw IoError(path.string() + ": empty file (header required)");
  for (auto f : split(line)) t.header.push_back(trim(f));
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    const auto fields = split(line);
    if (fields.size() != t.header.size())
      throw IoError(path.string() + ":" + std::to_string(lineno) + ": expected " + std::to_string(t.header.size()) +
                    " fields, found " + std::to_string(fields.size()));
    std::vector<double> row;
    row.reserve(fields.size());
    for (auto f : fields) row.push_back(parse_double(f, path.string() + ":" + std::to_string(lineno)));
    t.rows.push_back(std::move(row));
  }
  return t;
}

void write_csv(const fs::path& path, const CsvTable& table) {
  auto out = detail::open_out(path);
  for (std::size_t i = 0; i < table.header.size(); ++i) out << (i ? "," : "") << table.header[i];
  out << '\n';
  for (const auto& row : table.rows) {
    for (std::size_t i = 0; i < row.size(); ++i) out << (i ? "," : "") << format_double(row[i]);
    out << '\n';
  }
  if (!out) throw IoError("failed writing " + path.string());
}

// ---------------------------------------------------------------------------- model

void write_model(const fs::path& path, const ShapeNetwork& net, const LatentTable* codes, const json& meta) {
  json h = {{"format", "sdfuq-model"},
            {"version", kFormatVersion},
            {"latent_dim", net.latent_dim()},
            {"surface_count", net.surface_count()},
            {"depth", net.depth()},
            {"width", net.hidden_width()},
            {"parameter_count", net.parameter_count()},
            {"dtype", "float64"},
            {"endianness", "little"},
            {"meta", meta}};
  if (codes) h["latent_ids"] = codes->ids;
  auto out = detail::open_out(path);
  out << h.dump() << '\n';
  const Vector p = net.parameters();
  for (Eigen::Index i = 0; i < p.size(); ++i) detail::put_f64(out, p(i));
  if (codes)
    for (const auto& z : codes->codes)
      for (Eigen::Index i = 0; i < z.size(); ++i) detail::put_f64(out, z(i));
  if (!out) throw IoError("failed writing " + path.string());
}

ModelFile read_model(const fs::path& path) {
  auto in = detail::open_in(path);
  std::string line;
  std::getline(in, line);
  const json h = json::parse(line, nullptr, false);
  if (h.is_discarded() || !h.is_object()) throw IoError(path.string() + ": malformed model header");
  if (h.value("format", "") != "sdfuq-model") throw IoError(path.string() + ": not a model file");
  const int d = json_field<int>(h, "latent_dim", path);
  const int L = json_field<int>(h, "surface_count", path);
  const int depth = json_field<int>(h, "depth", path);
  const int width = json_field<int>(h, "width", path);
  const auto count = json_field<std::size_t>(h, "parameter_count", path);
  if (d < 1 || L < 1 || depth < 2 || width < 1) throw IoError(path.string() + ": invalid architecture in header");

  ModelFile m;
  m.net = ShapeNetwork::init(d, L, depth, width, 0);
  if (m.net.parameter_count() != count) throw IoError(path.string() + ": parameter count does not match the architecture");
  std::vector<unsigned char> raw(std::istreambuf_iterator<char>(in), {});
  std::size_t n_codes = 0;
  if (h.contains("latent_ids")) n_codes = h.at("latent_ids").size();
  const std::size_t expect = 8 * (count + n_codes * static_cast<std::size_t>(d));
  if (raw.size() != expect)
    throw IoError(path.string() + ": payload has " + std::to_string(raw.size()) + " bytes, expected " + std::to_string(expect));
  Vector p(static_cast<Eigen::Index>(count));
  for (std::size_t i = 0; i < count; ++i) p(static_cast<Eigen::Index>(i)) = detail::get_f64(raw.data() + 8 * i);
  m.net.set_parameters(p);
  if (h.contains("latent_ids")) {
    LatentTable t;
    t.ids = h.at("latent_ids").get<std::vector<int>>();
    std::size_t off = 8 * count;
    for (std::size_t k = 0; k < n_codes; ++k) {
      Vector z(d);
      for (int i = 0; i < d; ++i, off += 8) z(i) = detail::get_f64(raw.data() + off);
      t.codes.push_back(std::move(z));
    }
    m.codes = std::move(t);
  }
  m.meta = h.value("meta", json::object());
  return m;
}

// ---------------------------------------------------------------------- training set

void write_training_set(const fs::path& dir, std::span<const TrainingShape> shapes) {
  require(!shapes.empty(), "write_training_set: no shapes");
  fs::create_directories(dir);
  const auto L = shapes.front().distances.rows();
  json manifest = {{"format", "sdfuq-training-set"}, {"version", kFormatVersion}, {"surface_count", L}, {"shapes", json::array()}};
  for (const auto& s : shapes) {
    require(s.distances.rows() == L, "write_training_set: surface count differs between shapes");
    CsvTable t;
    t.header = {"x", "y", "z"};
    for (Eigen::Index l = 0; l < L; ++l) t.header.push_back("s" + std::to_string(l + 1));
    for (std::size_t k = 0; k < s.size(); ++k) {
      std::vector<double> row{s.points[k].x(), s.points[k].y(), s.points[k].z()};
      for (Eigen::Index l = 0; l < L; ++l) row.push_back(s.distances(l, static_cast<Eigen::Index>(k)));
      t.rows.push_back(std::move(row));
    }
    const std::string file = "shape_" + std::to_string(s.id) + ".csv";
    write_csv(dir / file, t);
    manifest["shapes"].push_back({{"id", s.id}, {"file", file}, {"points", s.size()}});
  }
  write_json(dir / "manifest.json", manifest);
}

std::vector<TrainingShape> read_training_set(const fs::path& manifest_path) {
  const json m = read_json(manifest_path);
  const int L = json_field<int>(m, "surface_count", manifest_path);
  if (!m.contains("shapes") || !m.at("shapes").is_array()) throw IoError(manifest_path.string() + ": missing 'shapes' list");
  std::vector<TrainingShape> out;
  for (const auto& e : m.at("shapes")) {
    TrainingShape s;
    s.id = json_field<int>(e, "id", manifest_path);
    const auto file = manifest_path.parent_path() / json_field<std::string>(e, "file", manifest_path);
    const auto t = read_csv(file);
    const std::size_t cx = t.column("x"), cy = t.column("y"), cz = t.column("z");
    std::vector<std::size_t> cs;
    for (int l = 0; l < L; ++l) cs.push_back(t.column("s" + std::to_string(l + 1)));
    s.distances.resize(L, static_cast<Eigen::Index>(t.rows.size()));
    for (std::size_t k = 0; k < t.rows.size(); ++k) {
      const auto& r = t.rows[k];
      s.points.emplace_back(r[cx], r[cy], r[cz]);
      for (int l = 0; l < L; ++l) s.distances(l, static_cast<Eigen::Index>(k)) = r[cs[static_cast<std::size_t>(l)]];
    }
    out.push_back(std::move(s));
  }
  if (out.empty()) throw IoError(manifest_path.string() + ": no shapes listed");
  return out;
}

// ----------------------------------------------------------------------- point cloud

void write_point_cloud(const fs::path& path, const PointCloud& cloud) {
  CsvTable t;
  t.header = {"x", "y", "z", "s", "j"};
  for (const auto& o : cloud) t.rows.push_back({o.x.x(), o.x.y(), o.x.z(), o.s, static_cast<double>(o.surface + 1)});
  write_csv(path, t);
}

PointCloud read_point_cloud(const fs::path& path, int surface_count) {
  const auto t = read_csv(path);
  const std::size_t cx = t.column("x"), cy = t.column("y"), cz = t.column("z"), cs = t.column("s"), cj = t.column("j");
  PointCloud out;
  for (std::size_t k = 0; k < t.rows.size(); ++k) {
    const auto& r = t.rows[k];
    const double j = r[cj];
    const std::string where = path.string() + ": row " + std::to_string(k + 1);
    if (j != std::floor(j) || j < 1.0) throw IoError(where + ": surface index j must be a positive integer");
    if (surface_count > 0 && j > surface_count)
      throw IoError(where + ": surface index " + format_double(j) + " out of range 1.." + std::to_string(surface_count));
    out.push_back({Vec3(r[cx], r[cy], r[cz]), r[cs], static_cast<int>(j) - 1});
  }
  return out;
}

// ---------------------------------------------------------------------------- chains

void write_chain(const fs::path& path, const Chain& chain, bool has_zeta2) {
  require(!chain.samples.empty(), "write_chain: empty chain");
  const auto n = chain.samples.front().size();
  const auto d = has_zeta2 ? n - 1 : n;
  CsvTable t;
  for (Eigen::Index i = 0; i < d; ++i) t.header.push_back("z_" + std::to_string(i));
  if (has_zeta2) t.header.push_back("zeta2");
  for (const auto& x : chain.samples) t.rows.emplace_back(x.data(), x.data() + x.size());
  write_csv(path, t);
}

std::vector<Vector> read_chain(const fs::path& path) {
  const auto t = read_csv(path);
  std::vector<Vector> out;
  for (const auto& r : t.rows) out.push_back(Eigen::Map<const Vector>(r.data(), static_cast<Eigen::Index>(r.size())));
  return out;
}

json chain_summary(const Chain& chain) {
  double depth = 0.0;
  for (int t : chain.tree_depths) depth += t;
  return {{"samples", chain.size()},
          {"acceptance_rate", chain.mean_accept()},
          {"divergences", chain.divergences.size()},
          {"warmup_divergences", chain.warmup_divergences},
          {"depth_saturations", chain.depth_saturations},
          {"mean_tree_depth", chain.size() ? depth / static_cast<double>(chain.size()) : 0.0},
          {"step_size", chain.step_size},
          {"inv_mass", std::vector<double>(chain.inv_mass.data(), chain.inv_mass.data() + chain.inv_mass.size())},
          {"function_evaluations", chain.gradient_evaluations},
          {"wall_time_s", chain.wall_time_s}};
}

// ----------------------------------------------------------------------- diagnostics

void write_calibration(const fs::path& csv, const fs::path& js, const CalibrationReport& rep) {
  CsvTable t;
  t.header = {"q", "ac"};
  for (std::size_t m = 0; m < rep.levels.size(); ++m) t.rows.push_back({rep.levels[m], rep.coverage[m]});
  write_csv(csv, t);
  write_json(js, {{"ece", rep.ece}, {"node_count", rep.node_count}, {"N", rep.samples_per_node}, {"levels", rep.levels},
                  {"coverage", rep.coverage}});
}

void write_node_stats(const fs::path& path, std::span<const NodeStats> stats) {
  CsvTable t;
  t.header = {"x", "y", "z", "mean", "std", "abs_dist"};
  for (const auto& s : stats) t.rows.push_back({s.x.x(), s.x.y(), s.x.z(), s.mean, s.std, s.abs_dist});
  write_csv(path, t);
}

// ------------------------------------------------------------------------ synthetic

namespace {

json vec_json(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }

Vec3 vec_from(const json& j) {
  const auto a = j.get<std::array<double, 3>>();
  return Vec3(a[0], a[1], a[2]);
}

json range_json(const Range& r) { return json::array({r.lo, r.hi}); }

}  // namespace

json to_json(const SyntheticShape& s) {
  static const char* names[kSyntheticSurfaces] = {"lv_endo", "lv_epi", "rv_endo", "rv_epi"};
  json surfaces = json::array();
  for (int i = 0; i < kSyntheticSurfaces; ++i) {
    const auto& e = s.surfaces[static_cast<std::size_t>(i)];
    surfaces.push_back({{"name", names[i]}, {"center", vec_json(e.center)}, {"semi_axes", vec_json(e.semi_axes)}});
  }
  return {{"id", s.id}, {"surfaces", surfaces}};
}

SyntheticShape synthetic_shape_from_json(const json& j) {
  try {
    SyntheticShape s;
    s.id = j.at("id").get<int>();
    const auto& surf = j.at("surfaces");
    if (!surf.is_array() || surf.size() != kSyntheticSurfaces) throw IoError("shape parameters: expected four surfaces");
    for (std::size_t i = 0; i < kSyntheticSurfaces; ++i) {
      s.surfaces[i].center = vec_from(surf[i].at("center"));
      s.surfaces[i].semi_axes = vec_from(surf[i].at("semi_axes"));
    }
    return s;
  } catch (const json::exception& e) {
    throw IoError(std::string("shape parameters: ") + e.what());
  }
}

json to_json(const EllipsoidFamilyParams& p) {
  auto ranges = [](const std::array<Range, 3>& r) { return json::array({range_json(r[0]), range_json(r[1]), range_json(r[2])}); };
  return {{"lv_center", ranges(p.lv_center)},
          {"lv_axes", ranges(p.lv_axes)},
          {"lv_wall", range_json(p.lv_wall)},
          {"rv_center", ranges(p.rv_center)},
          {"rv_axes", ranges(p.rv_axes)},
          {"rv_wall", range_json(p.rv_wall)},
          {"samples_per_shape", p.samples_per_shape},
          {"surface_fraction", p.surface_fraction},
          {"surface_sigmas", p.surface_sigmas},
          {"seed", p.seed}};
}

// ----------------------------------------------------------------------------- json

void write_json(const fs::path& path, const json& j) {
  auto out = detail::open_out(path, false);
  out << j.dump(2) << '\n';
  if (!out) throw IoError("failed writing " + path.string());
}

json read_json(const fs::path& path) {
  auto in = detail::open_in(path, false);
  std::stringstream ss;
  ss << in.rdbuf();
  json j = json::parse(ss.str(), nullptr, false);
  if (j.is_discarded()) throw IoError(path.string() + ": malformed JSON");
  return j;
}

// ----------------------------------------------------------------------------- hash

std::string sha1_hex(std::string_view data) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), md, &len, EVP_sha1(), nullptr) != 1) throw IoError("SHA-1 failed");
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[i]);
  return os.str();
}

std::string git_blob_sha1(const fs::path& path) {
  auto in = detail::open_in(path);
  std::string content(std::istreambuf_iterator<char>(in), {});
  std::string blob = "blob " + std::to_string(content.size());
  blob.push_back('\0');
  blob += content;
  return sha1_hex(blob);
}

}  // namespace sdfuq::io
