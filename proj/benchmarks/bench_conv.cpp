#include <benchmark/benchmark.h>

#include "voxdiff/autodiff.hpp"
#include "voxdiff/rng.hpp"

using namespace voxdiff;

namespace {

ad::Var<float> random_leaf(ad::Shape s, SeededRng& rng) {
  std::vector<float> v(s.numel());
  for (auto& x : v) x = static_cast<float>(rng.normal());
  return ad::leaf<float>(s, std::move(v));
}

// args: channels, spatial edge
void BM_Conv3dForward(benchmark::State& state) {
  const int c = static_cast<int>(state.range(0)), d = static_cast<int>(state.range(1));
  SeededRng rng(1);
  auto x = random_leaf({4, c, d, d, d}, rng);
  auto w = random_leaf({c, c, 3, 3, 3}, rng);
  auto b = random_leaf({1, c}, rng);
  ad::NoGradGuard no_grad;
  for (auto _ : state) benchmark::DoNotOptimize(ad::conv3d(x, w, b, 1, 1));
  state.SetItemsProcessed(state.iterations() * 4LL * c * c * 27 * d * d * d);
}
BENCHMARK(BM_Conv3dForward)->Args({8, 16})->Args({16, 8})->Args({32, 4})->Unit(benchmark::kMicrosecond);

void BM_Conv3dForwardBackward(benchmark::State& state) {
  const int c = static_cast<int>(state.range(0)), d = static_cast<int>(state.range(1));
  SeededRng rng(2);
  auto x = random_leaf({4, c, d, d, d}, rng);
  auto w = random_leaf({c, c, 3, 3, 3}, rng);
  auto b = random_leaf({1, c}, rng);
  for (auto _ : state) {
    x->zero_grad();
    w->zero_grad();
    b->zero_grad();
    ad::backward(ad::sum(ad::conv3d(x, w, b, 1, 1)));
  }
}
BENCHMARK(BM_Conv3dForwardBackward)->Args({8, 16})->Args({32, 4})->Unit(benchmark::kMicrosecond);

void BM_GroupNormSwish(benchmark::State& state) {
  SeededRng rng(3);
  auto x = random_leaf({4, 16, 16, 16, 16}, rng);
  auto s = ad::leaf<float>({1, 16}, std::vector<float>(16, 1.0f));
  auto t = ad::leaf<float>({1, 16}, std::vector<float>(16, 0.0f));
  ad::NoGradGuard no_grad;
  for (auto _ : state) benchmark::DoNotOptimize(ad::swish(ad::group_norm(x, 8, s, t, 1e-5f)));
}
BENCHMARK(BM_GroupNormSwish)->Unit(benchmark::kMicrosecond);

}  // namespace
