#include <benchmark/benchmark.h>

#include <random>

#include "ssc/network.hpp"
#include "ssc/ops.hpp"
#include "ssc/parallel.hpp"
#include "ssc/perf.hpp"

namespace {

ssc::TensorF noise(const ssc::Shape& s, std::uint64_t seed) {
  ssc::TensorF t(s);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  for (auto& v : t.data()) v = u(rng);
  return t;
}

// args: channels, dilation; 16x16x16 volume
void BM_Conv3d(benchmark::State& state) {
  const auto c = static_cast<std::size_t>(state.range(0));
  const auto d = static_cast<std::size_t>(state.range(1));
  const auto spec = ssc::ConvSpec::cubic(c, c, 3, 1, d);
  const auto x = noise({c, 16, 16, 16}, 1), w = noise(spec.weight_shape(), 2), b = noise({c}, 3);
  for (auto _ : state) benchmark::DoNotOptimize(ssc::conv3d(x, w, b, spec));
  // nominal: padding taps included, as the cost model counts them
  const double macs = 16.0 * 16 * 16 * c * c * 27;
  state.counters["MAC/s"] = benchmark::Counter(macs, benchmark::Counter::kIsIterationInvariantRate, benchmark::Counter::kIs1000);
}
BENCHMARK(BM_Conv3d)->Args({16, 1})->Args({16, 2})->Args({16, 8})->Args({32, 1})->Unit(benchmark::kMillisecond);

void BM_Conv3dBackward(benchmark::State& state) {
  const auto c = static_cast<std::size_t>(state.range(0));
  const auto spec = ssc::ConvSpec::cubic(c, c, 3, 1, 2);
  const auto x = noise({c, 16, 16, 16}, 1), w = noise(spec.weight_shape(), 2), g = noise({c, 16, 16, 16}, 3);
  for (auto _ : state) benchmark::DoNotOptimize(ssc::conv3d_backward(g, x, w, spec));
}
BENCHMARK(BM_Conv3dBackward)->Arg(16)->Unit(benchmark::kMillisecond);

void BM_Upsample(benchmark::State& state) {
  const auto x = noise({32, 15, 9, 15}, 4);
  for (auto _ : state) benchmark::DoNotOptimize(ssc::upsample3d(x, ssc::Triple{4, 4, 4}));
}
BENCHMARK(BM_Upsample)->Unit(benchmark::kMillisecond);

// arg: input width on the first axis; full default network
void BM_Forward(benchmark::State& state) {
  const ssc::NetworkConfig cfg;
  const auto params = ssc::init_params<float>(cfg, 0);
  const auto x = noise({1, static_cast<std::size_t>(state.range(0)), 36, 60}, 5);
  for (auto _ : state) benchmark::DoNotOptimize(ssc::forward(x, params, cfg, false));
  state.counters["FPS"] = benchmark::Counter(1.0, benchmark::Counter::kIsIterationInvariantRate);
}
BENCHMARK(BM_Forward)->Arg(60)->Unit(benchmark::kMillisecond)->UseRealTime();

void BM_TrainStep(benchmark::State& state) {
  ssc::NetworkConfig cfg;
  cfg.num_classes = 4;
  const auto params = ssc::init_params<float>(cfg, 0);
  const auto x = noise({1, 32, 16, 32}, 6);
  for (auto _ : state) {
    auto fr = ssc::forward(x, params, cfg, true);
    benchmark::DoNotOptimize(ssc::backward(*fr.cache, fr.occ_logits, fr.sem_logits, params, cfg));
  }
}
BENCHMARK(BM_TrainStep)->Unit(benchmark::kMillisecond)->UseRealTime();

}  // namespace

BENCHMARK_MAIN();
