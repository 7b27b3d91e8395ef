#include <benchmark/benchmark.h>

#include "voxdiff/diffusion.hpp"
#include "voxdiff/optimizer.hpp"
#include "voxdiff/unet.hpp"

using namespace voxdiff;

namespace {

// One optimizer step of the desk network on a batch of 16^3 patches.
void BM_UNetTrainStep(benchmark::State& state) {
  const int batch = static_cast<int>(state.range(0));
  SeededRng rng(1);
  auto net = build_unet({}, rng);
  const auto sched = make_linear_schedule({});
  const ad::Shape s{batch, 1, 16, 16, 16};
  std::vector<float> x(s.numel()), y(s.numel());
  for (auto& v : x) v = static_cast<float>(rng.uniform01());
  for (auto& v : y) v = static_cast<float>(rng.uniform01());
  auto x0 = ad::constant<float>(s, x);
  auto cond = ad::constant<float>(s, y);
  OptimizerState<float> opt;
  for (auto _ : state) {
    net.params().zero_grad();
    auto loss = training_loss<float>(net, x0, cond, rng, sched);
    ad::backward(loss);
    adam_step(net.params(), opt, {});
  }
  state.SetItemsProcessed(state.iterations() * batch);
}
BENCHMARK(BM_UNetTrainStep)->Arg(1)->Arg(4)->Unit(benchmark::kMillisecond);

void BM_UNetInference(benchmark::State& state) {
  SeededRng rng(2);
  const auto net = build_unet({}, rng);
  const ad::Shape s{1, 1, 16, 16, 16};
  auto x = ad::constant<float>(s, 0.5f);
  const std::vector<int> t{25};
  ad::NoGradGuard no_grad;
  for (auto _ : state) benchmark::DoNotOptimize(net.forward(x, x, t));
}
BENCHMARK(BM_UNetInference)->Unit(benchmark::kMillisecond);

}  // namespace
