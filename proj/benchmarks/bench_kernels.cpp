#include <benchmark/benchmark.h>

#include <random>

#include "seedet/network.hpp"
#include "seedet/ops.hpp"

using namespace seedet;

namespace {

Tensor<float> random_tensor(Shape shape, std::uint64_t seed, bool grad = false) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> d(0.0f, 1.0f);
  std::vector<float> v(shape_numel(shape));
  for (auto& x : v) x = d(rng);
  return grad ? Tensor<float>::parameter(std::move(shape), std::move(v)) : Tensor<float>(std::move(shape), std::move(v));
}

// args: channels, extent
void BM_Conv3dForward(benchmark::State& state) {
  const auto c = static_cast<std::size_t>(state.range(0)), e = static_cast<std::size_t>(state.range(1));
  auto x = random_tensor({1, c, e, e, e}, 1);
  auto w = random_tensor({c, c, 3, 3, 3}, 2);
  NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(conv3d(x, w, std::optional<Tensor<float>>{}, 1, 1));
  state.counters["GFLOP/s"] =
      benchmark::Counter(2e-9 * static_cast<double>(c * c * 27 * e * e * e), benchmark::Counter::kIsIterationInvariantRate);
}
BENCHMARK(BM_Conv3dForward)->Args({8, 32})->Args({16, 32})->Args({32, 16})->Args({64, 16})->Unit(benchmark::kMillisecond);

void BM_Conv3dBackward(benchmark::State& state) {
  const auto c = static_cast<std::size_t>(state.range(0)), e = static_cast<std::size_t>(state.range(1));
  auto x = random_tensor({1, c, e, e, e}, 1, true);
  auto w = random_tensor({c, c, 3, 3, 3}, 2, true);
  for (auto _ : state) {
    auto y = sum(conv3d(x, w, std::optional<Tensor<float>>{}, 1, 1));
    backward(y);
  }
}
BENCHMARK(BM_Conv3dBackward)->Args({8, 32})->Args({32, 16})->Unit(benchmark::kMillisecond);

void BM_DetectorTrainStep(benchmark::State& state) {
  NetworkConfig cfg;
  cfg.encoder_channels = {8, 16, 32};
  cfg.blocks_per_stage = 1;
  cfg.decoder_channels = {32};
  Detector<float> net(cfg, 0);
  const auto e = static_cast<std::size_t>(state.range(0));
  auto x = random_tensor({static_cast<std::size_t>(state.range(1)), 1, e, e, e}, 3);
  for (auto _ : state) {
    net.zero_grad();
    backward(sum(net.forward_logits(x, NormMode::Train)));
  }
}
BENCHMARK(BM_DetectorTrainStep)->Args({64, 1})->Args({64, 4})->Unit(benchmark::kMillisecond);

void BM_DetectorInference(benchmark::State& state) {
  NetworkConfig cfg;
  cfg.encoder_channels = {8, 16, 32};
  cfg.blocks_per_stage = 1;
  cfg.decoder_channels = {32};
  Detector<float> net(cfg, 0);
  const auto e = static_cast<std::size_t>(state.range(0));
  auto x = random_tensor({1, 1, e, e, e}, 3);
  for (auto _ : state) benchmark::DoNotOptimize(net.forward(x));
}
BENCHMARK(BM_DetectorInference)->Arg(96)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
