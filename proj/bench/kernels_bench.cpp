#include <benchmark/benchmark.h>

#include <vector>

#include "doorbench/assets.hpp"
#include "doorbench/kernels.hpp"
#include "doorbench/percept.hpp"
#include "doorbench/random.hpp"
#include "doorbench/sim.hpp"

using namespace doorbench;

namespace {

std::vector<float> random_floats(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<float> v(n);
  for (auto& x : v) x = static_cast<float>(rng.uniform(-1, 1));
  return v;
}

template <bool Parallel>
void BM_Matmul(benchmark::State& state) {
  const int m = static_cast<int>(state.range(0));
  const int k = 128;
  const int n = 128;
  const auto a = random_floats(static_cast<std::size_t>(m) * k, 1);
  const auto b = random_floats(static_cast<std::size_t>(k) * n, 2);
  std::vector<float> c(static_cast<std::size_t>(m) * n);
  for (auto _ : state) {
    if constexpr (Parallel) kernels::matmul(a.data(), b.data(), c.data(), m, k, n);
    else kernels::reference::matmul(a.data(), b.data(), c.data(), m, k, n);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(m) * k * n);
}

template <bool Parallel>
void BM_Fps(benchmark::State& state) {
  const auto xyz = random_floats(3 * static_cast<std::size_t>(state.range(0)), 3);
  for (auto _ : state) {
    auto idx = Parallel ? kernels::farthest_point_sample(xyz, 4096, 0)
                        : kernels::reference::farthest_point_sample(xyz, 4096, 0);
    benchmark::DoNotOptimize(idx.data());
  }
}

template <bool Parallel>
void BM_Knn(benchmark::State& state) {
  const auto xyz = random_floats(3 * 4096, 4);
  const auto q = random_floats(3 * static_cast<std::size_t>(state.range(0)), 5);
  for (auto _ : state) {
    auto idx = Parallel ? kernels::knn(xyz, q, 16) : kernels::reference::knn(xyz, q, 16);
    benchmark::DoNotOptimize(idx.data());
  }
}

struct Scene {
  kernels::RayGrid grid;
  std::vector<Solid> solids;
};

const Scene& door_scene() {
  static const Scene s = [] {
    const auto cat = assets::build_catalog(assets::CategoryCounts::uniform(2), 0.25, 11);
    const auto& d = cat.instances.begin()->second;
    const sim::RobotModel robot;
    const auto st = sim::reset(d, robot, sim::TaskConfig{}, 1);
    const auto cam = percept::default_camera(d);
    Scene out;
    for (const auto& so : sim::scene_solids(d, st, robot)) out.solids.push_back(so.solid);
    out.grid = cam.ray_grid();
    return out;
  }();
  return s;
}

template <bool Parallel>
void BM_Raycast(benchmark::State& state) {
  const Scene& s = door_scene();
  for (auto _ : state) {
    auto depth = Parallel ? kernels::raycast(s.grid, s.solids) : kernels::reference::raycast(s.grid, s.solids);
    benchmark::DoNotOptimize(depth.data());
  }
}

}  // namespace

BENCHMARK(BM_Matmul<true>)->Name("matmul/parallel")->Arg(256)->Arg(4096);
BENCHMARK(BM_Matmul<false>)->Name("matmul/reference")->Arg(256)->Arg(4096);
BENCHMARK(BM_Fps<true>)->Name("fps/parallel")->Arg(20000)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Fps<false>)->Name("fps/reference")->Arg(20000)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Knn<true>)->Name("knn/parallel")->Arg(256)->Arg(4096)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Knn<false>)->Name("knn/reference")->Arg(256)->Arg(4096)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Raycast<true>)->Name("raycast/parallel")->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Raycast<false>)->Name("raycast/reference")->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
