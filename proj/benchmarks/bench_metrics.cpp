#include <benchmark/benchmark.h>

#include "voxdiff/metrics.hpp"

using namespace voxdiff;

namespace {

Volume3D random_volume(Dims3 d, SeededRng& rng) {
  std::vector<float> v(d.voxels());
  for (auto& x : v) x = static_cast<float>(rng.uniform01());
  return Volume3D(d, {}, std::move(v));
}

void BM_Ssim3d(benchmark::State& state) {
  const int d = static_cast<int>(state.range(0));
  SeededRng rng(1);
  const auto a = random_volume({d, d, d}, rng);
  const auto b = random_volume({d, d, d}, rng);
  for (auto _ : state) benchmark::DoNotOptimize(ssim3d(a, b));
}
BENCHMARK(BM_Ssim3d)->Arg(16)->Arg(64)->Unit(benchmark::kMicrosecond);

}  // namespace
