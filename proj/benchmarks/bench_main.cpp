#include <benchmark/benchmark.h>

#include <random>

#include "stereolidar/correlation.hpp"
#include "stereolidar/model.hpp"
#include "stereolidar/scenegen.hpp"
#include "stereolidar/train.hpp"

using namespace stereolidar;
using ndgrad::DiffArray;

namespace {

DiffArray random_array(ndgrad::Shape shape, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  std::vector<double> v(ndgrad::shape_size(shape));
  for (auto& x : v) x = dist(rng);
  return DiffArray::constant(std::move(shape), std::move(v));
}

ModelConfig bench_model() {
  ModelConfig mc;
  mc.features.feature_channels = mc.features.trunk_channels = 16;
  mc.features.context_channels = mc.features.hidden_channels = 16;
  mc.lookup.levels = 2;
  mc.lookup.radius = 4;
  mc.refine.gru_iters = 10;
  mc.refine.cspn_iters = 10;
  return mc;
}

}  // namespace

static void BM_Conv2d(benchmark::State& state) {
  const auto c = static_cast<std::size_t>(state.range(0));
  const auto input = random_array({c, 32, 64}, 1);
  const auto kernels = random_array({c, c, 3, 3}, 2);
  for (auto _ : state) benchmark::DoNotOptimize(ndgrad::conv2d(input, kernels, 1, 1));
}
BENCHMARK(BM_Conv2d)->Arg(8)->Arg(16)->Arg(32);

static void BM_CorrelationAndPyramid(benchmark::State& state) {
  const auto w = static_cast<std::size_t>(state.range(0));
  const auto left = random_array({16, w / 4, w / 4 * 2}, 3), right = random_array({16, w / 4, w / 4 * 2}, 4);
  const correlation::LookupConfig cfg{4, 2};
  for (auto _ : state) benchmark::DoNotOptimize(correlation::build_pyramid(correlation::build_correlation(left, right), cfg));
}
BENCHMARK(BM_CorrelationAndPyramid)->Arg(64)->Arg(128);

static void BM_Forward(benchmark::State& state) {
  const Model model(bench_model(), 0);
  train::DataConfig data;
  const auto ex = train::make_example(data, 0);
  const BoundParams p(model.params(), nullptr);
  for (auto _ : state)
    benchmark::DoNotOptimize(model.forward(p, ex.sample.left.array(), ex.sample.right.array(), ex.lidar));
}
BENCHMARK(BM_Forward)->Unit(benchmark::kMillisecond);

static void BM_TrainingStep(benchmark::State& state) {
  const Model model(bench_model(), 0);
  train::DataConfig data;
  const auto ex = train::make_example(data, 0);
  train::TrainConfig cfg;
  for (auto _ : state) {
    ndgrad::Tape tape;
    const BoundParams p(model.params(), &tape);
    tape.backward(train::example_loss(model, p, ex, cfg, 0));
    benchmark::DoNotOptimize(p.flat_grad());
  }
}
BENCHMARK(BM_TrainingStep)->Unit(benchmark::kMillisecond);
BENCHMARK_MAIN();
