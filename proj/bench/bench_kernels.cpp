// Serial reference loops vs the batched OpenMP kernels at pipeline sizes.

#include "sdfuq/kernels.hpp"
#include "sdfuq/mesh.hpp"
#include "sdfuq/mesh_distance.hpp"
#include "sdfuq/rng.hpp"

#include <benchmark/benchmark.h>

#include <random>

using namespace sdfuq;

namespace {

const ShapeNetwork& network() {
  static const auto net = ShapeNetwork::init(8, 4, 3, 64, 7);
  return net;
}

std::vector<Vec3> points(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<Vec3> p(n);
  for (auto& x : p) x = Vec3(u(rng), u(rng), u(rng));
  return p;
}

PointCloud cloud(std::size_t n) {
  PointCloud c;
  int j = 0;
  for (const auto& x : points(n, 1)) c.push_back({x, 0.01, j++ % 4});
  return c;
}

std::vector<TrainingShape> shapes(int count, std::size_t n) {
  std::vector<TrainingShape> s(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    s[i].id = i;
    s[i].points = points(n, 10 + i);
    s[i].distances = Matrix::Constant(4, static_cast<Eigen::Index>(n), 0.05);
  }
  return s;
}

template <auto Fn>
void data_term(benchmark::State& st) {
  const auto c = cloud(static_cast<std::size_t>(st.range(0)));
  const LatentCode z = Vector::Constant(8, 0.1);
  for (auto _ : st) benchmark::DoNotOptimize(Fn(network(), c, z));
  st.SetItemsProcessed(st.iterations() * st.range(0));
}

template <auto Fn>
void training_term(benchmark::State& st) {
  const auto s = shapes(8, static_cast<std::size_t>(st.range(0)));
  std::vector<LatentCode> z(s.size(), Vector::Constant(8, 0.05));
  std::vector<kernels::TrainingSlot> slots;
  for (std::size_t i = 0; i < s.size(); ++i) slots.push_back({&s[i], &z[i], 1.0});
  for (auto _ : st) benchmark::DoNotOptimize(Fn(network(), slots));
  st.SetItemsProcessed(st.iterations() * st.range(0) * 8);
}

template <auto Fn>
void surface_counts(benchmark::State& st) {
  const auto p = points(static_cast<std::size_t>(st.range(0)), 2);
  std::vector<LatentCode> z;
  for (int i = 0; i < 50; ++i) z.push_back(Vector::Constant(8, 0.01 * i));
  for (auto _ : st) benchmark::DoNotOptimize(Fn(network(), p, z, 0, 0.03));
  st.SetItemsProcessed(st.iterations() * st.range(0) * 50);
}

template <auto Fn>
void nearest(benchmark::State& st) {
  const auto mesh = make_icosphere(4, 0.6);
  const auto p = points(static_cast<std::size_t>(st.range(0)), 3);
  for (auto _ : st) benchmark::DoNotOptimize(Fn(p, mesh));
  st.SetItemsProcessed(st.iterations() * st.range(0));
}

}  // namespace

BENCHMARK(data_term<kernels::serial::data_term>)->Name("data_term/serial")->Arg(100)->Arg(400)->Arg(2000);
BENCHMARK(data_term<kernels::parallel::data_term>)->Name("data_term/parallel")->Arg(100)->Arg(400)->Arg(2000);
BENCHMARK(training_term<kernels::serial::training_term>)->Name("training_term/serial")->Arg(256)->Arg(2048);
BENCHMARK(training_term<kernels::parallel::training_term>)->Name("training_term/parallel")->Arg(256)->Arg(2048);
BENCHMARK(surface_counts<kernels::serial::surface_counts>)->Name("surface_counts/serial")->Arg(4096);
BENCHMARK(surface_counts<kernels::parallel::surface_counts>)->Name("surface_counts/parallel")->Arg(4096);
BENCHMARK(nearest<serial::nearest_distances>)->Name("nearest_distances/serial")->Arg(2000);
BENCHMARK(nearest<parallel::nearest_distances>)->Name("nearest_distances/parallel")->Arg(2000);

BENCHMARK_MAIN();
