#include "sdfuq/voxel.hpp"

#include "sdfuq/kernels.hpp"

#include "binary_io.hpp"

#include <json.hpp>

#include <bit>
#include <cstring>
#include <fstream>

namespace sdfuq {

void GridSpec::validate() const {
  for (int a = 0; a < 3; ++a) {
    require(resolution[static_cast<std::size_t>(a)] >= 2, "grid resolution must be >= 2 per axis");
    require(std::isfinite(lo(a)) && std::isfinite(hi(a)) && lo(a) < hi(a), "grid bounds must satisfy lo < hi");
  }
}

std::size_t GridSpec::node_count() const {
  return static_cast<std::size_t>(resolution[0]) * static_cast<std::size_t>(resolution[1]) *
         static_cast<std::size_t>(resolution[2]);
}

Vec3 GridSpec::spacing() const {
  return Vec3((hi(0) - lo(0)) / (resolution[0] - 1), (hi(1) - lo(1)) / (resolution[1] - 1),
              (hi(2) - lo(2)) / (resolution[2] - 1));
}

std::size_t GridSpec::index(int i, int j, int k) const {
  return static_cast<std::size_t>(i) +
         static_cast<std::size_t>(resolution[0]) *
             (static_cast<std::size_t>(j) + static_cast<std::size_t>(resolution[1]) * static_cast<std::size_t>(k));
}

Vec3 GridSpec::node(int i, int j, int k) const {
  // Interpolate from both ends so the last node is exactly hi.
  auto at = [](double a, double b, int t, int n) { return a + (b - a) * (static_cast<double>(t) / (n - 1)); };
  return Vec3(at(lo(0), hi(0), i, resolution[0]), at(lo(1), hi(1), j, resolution[1]), at(lo(2), hi(2), k, resolution[2]));
}

std::vector<Vec3> GridSpec::nodes() const {
  std::vector<Vec3> out;
  out.reserve(node_count());
  for (int k = 0; k < resolution[2]; ++k)
    for (int j = 0; j < resolution[1]; ++j)
      for (int i = 0; i < resolution[0]; ++i) out.push_back(node(i, j, k));
  return out;
}

VoxelGrid<double> sample_grid(const GridSpec& spec, const ScalarField& field) {
  spec.validate();
  VoxelGrid<double> g{spec, std::vector<double>(spec.node_count())};
  const int nz = spec.resolution[2];
#pragma omp parallel for schedule(static)
  for (int k = 0; k < nz; ++k)
    for (int j = 0; j < spec.resolution[1]; ++j)
      for (int i = 0; i < spec.resolution[0]; ++i) g.values[spec.index(i, j, k)] = field(spec.node(i, j, k));
  return g;
}

VoxelGrid<double> sample_grid(const GridSpec& spec, const ShapeNetwork& net, const LatentCode& z, int surface) {
  spec.validate();
  require(surface >= 0 && surface < net.surface_count(), "surface index out of range");
  VoxelGrid<double> g{spec, std::vector<double>(spec.node_count())};
  // One z-slab at a time keeps the L x n output small.
  const std::size_t slab = static_cast<std::size_t>(spec.resolution[0]) * static_cast<std::size_t>(spec.resolution[1]);
  std::vector<Vec3> pts;
  pts.reserve(slab);
  for (int k = 0; k < spec.resolution[2]; ++k) {
    pts.clear();
    for (int j = 0; j < spec.resolution[1]; ++j)
      for (int i = 0; i < spec.resolution[0]; ++i) pts.push_back(spec.node(i, j, k));
    const Matrix out = kernels::parallel::evaluate(net, pts, z);
    for (std::size_t n = 0; n < slab; ++n) g.values[k * slab + n] = out(surface, static_cast<Eigen::Index>(n));
  }
  return g;
}

namespace {

CertaintyMap finish_mask(GridSpec spec, std::vector<std::uint32_t> counts, std::size_t samples,
                         std::uint32_t threshold) {
  CertaintyMap m;
  m.samples = samples;
  m.mask.spec = spec;
  m.mask.values.resize(counts.size());
  for (std::size_t i = 0; i < counts.size(); ++i) m.mask.values[i] = counts[i] >= threshold ? 1u : 0u;
  m.counts = {spec, std::move(counts)};
  return m;
}

}  // namespace

CertaintyMap certainty_map(const ShapeNetwork& net, std::span<const LatentCode> samples, int surface,
                           const GridSpec& spec, double tol, std::uint32_t threshold) {
  spec.validate();
  require(!samples.empty(), "certainty_map: empty chain");
  require(tol > 0.0, "certainty_map: tol must be > 0");
  require(surface >= 0 && surface < net.surface_count(), "surface index out of range");
  const auto nodes = spec.nodes();
  auto counts = kernels::parallel::surface_counts(net, nodes, samples, surface, tol);
  return finish_mask(spec, std::move(counts), samples.size(), threshold);
}

CertaintyMap certainty_map(std::span<const ScalarField> fields, const GridSpec& spec, double tol,
                           std::uint32_t threshold) {
  spec.validate();
  require(!fields.empty(), "certainty_map: no fields");
  require(tol > 0.0, "certainty_map: tol must be > 0");
  const auto nodes = spec.nodes();
  std::vector<std::uint32_t> counts(nodes.size(), 0);
  const auto n = static_cast<std::int64_t>(nodes.size());
#pragma omp parallel for schedule(static)
  for (std::int64_t p = 0; p < n; ++p)
    for (const auto& f : fields)
      if (std::abs(f(nodes[static_cast<std::size_t>(p)])) < tol) ++counts[static_cast<std::size_t>(p)];
  return finish_mask(spec, std::move(counts), fields.size(), threshold);
}

namespace {

using detail::get_le;
using detail::open_out;
using detail::put_le;

nlohmann::json header(const GridSpec& s, const char* dtype) {
  return {{"resolution", s.resolution},
          {"bounds", {{s.lo(0), s.lo(1), s.lo(2)}, {s.hi(0), s.hi(1), s.hi(2)}}},
          {"dtype", dtype},
          {"ordering", "x-fastest"},
          {"endianness", "little"}};
}

// Reads the header line and the raw payload; checks dtype and size.
GridSpec read_raw(const std::filesystem::path& path, const char* dtype, std::vector<unsigned char>& payload) {
  auto in = detail::open_in(path);
  std::string line;
  std::getline(in, line);
  const auto h = nlohmann::json::parse(line, nullptr, false);
  if (h.is_discarded() || !h.is_object()) throw IoError(path.string() + ": malformed header");
  if (h.at("dtype").get<std::string>() != dtype)
    throw IoError(path.string() + ": expected dtype " + dtype);
  if (h.value("ordering", "x-fastest") != "x-fastest") throw IoError(path.string() + ": unsupported ordering");
  GridSpec s;
  s.resolution = h.at("resolution").get<std::array<int, 3>>();
  const auto b = h.at("bounds").get<std::array<std::array<double, 3>, 2>>();
  s.lo = Vec3(b[0][0], b[0][1], b[0][2]);
  s.hi = Vec3(b[1][0], b[1][1], b[1][2]);
  s.validate();
  payload.assign(std::istreambuf_iterator<char>(in), {});
  if (payload.size() != 4 * s.node_count()) throw IoError(path.string() + ": payload size mismatch");
  return s;
}

}  // namespace

void write_voxel_grid(const VoxelGrid<double>& grid, const std::filesystem::path& path) {
  require(grid.values.size() == grid.spec.node_count(), "voxel grid: value count mismatch");
  auto out = open_out(path);
  out << header(grid.spec, "float32").dump() << '\n';
  for (double v : grid.values) put_le(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
}

void write_voxel_grid(const VoxelGrid<std::uint32_t>& grid, const std::filesystem::path& path) {
  require(grid.values.size() == grid.spec.node_count(), "voxel grid: value count mismatch");
  auto out = open_out(path);
  out << header(grid.spec, "uint32").dump() << '\n';
  for (auto v : grid.values) put_le(out, v);
}

VoxelGrid<double> read_voxel_grid_f32(const std::filesystem::path& path) {
  std::vector<unsigned char> raw;
  VoxelGrid<double> g;
  g.spec = read_raw(path, "float32", raw);
  g.values.resize(g.spec.node_count());
  for (std::size_t i = 0; i < g.values.size(); ++i)
    g.values[i] = std::bit_cast<float>(get_le<std::uint32_t>(raw.data() + 4 * i));
  return g;
}

VoxelGrid<std::uint32_t> read_voxel_grid_u32(const std::filesystem::path& path) {
  std::vector<unsigned char> raw;
  VoxelGrid<std::uint32_t> g;
  g.spec = read_raw(path, "uint32", raw);
  g.values.resize(g.spec.node_count());
  for (std::size_t i = 0; i < g.values.size(); ++i) g.values[i] = get_le<std::uint32_t>(raw.data() + 4 * i);
  return g;
}

}  // namespace sdfuq
