#include <gtest/gtest.h>

#include <cmath>

#include "fixtures.hpp"
#include "stereolidar/train.hpp"

using namespace stereolidar;
using namespace stereolidar::train;
using testing_support::sparse_only_gradient;
using testing_support::tiny_data;
using testing_support::tiny_model;

namespace {

double max_abs(const std::vector<double>& v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::fabs(x));
  return m;
}

}  // namespace

TEST(TrainTest, StrategyNames) {
  for (auto s : {Strategy::supervised, Strategy::self_all_in, Strategy::self_half1, Strategy::self_half2})
    EXPECT_EQ(parse_strategy(to_string(s)), s);
  EXPECT_THROW(parse_strategy("self-half3"), ArgumentError);
}

TEST(TrainTest, OneCycleRisesToExactlyMaxAndAnneals) {
  TrainConfig cfg;
  cfg.max_lr = 3e-3;
  const std::size_t n = 101;
  double peak = 0.0;
  std::size_t peak_at = 0;
  for (std::size_t t = 0; t < n; ++t) {
    const double lr = one_cycle_lr(t, n, cfg);
    if (lr > peak) {
      peak = lr;
      peak_at = t;
    }
  }
  EXPECT_EQ(peak, cfg.max_lr);
  EXPECT_EQ(peak_at, 30u);
  EXPECT_NEAR(one_cycle_lr(0, n, cfg), cfg.max_lr / cfg.div_factor, 1e-18);
  EXPECT_NEAR(one_cycle_lr(n - 1, n, cfg), cfg.max_lr / cfg.div_factor / cfg.final_div_factor, 1e-18);
  for (std::size_t t = 1; t <= peak_at; ++t) EXPECT_GE(one_cycle_lr(t, n, cfg), one_cycle_lr(t - 1, n, cfg));
  for (std::size_t t = peak_at + 1; t < n; ++t) EXPECT_LE(one_cycle_lr(t, n, cfg), one_cycle_lr(t - 1, n, cfg));
}

TEST(TrainTest, AdamFirstStepMovesByLearningRate) {
  Adam adam(2, 0.9, 0.999, 1e-8);
  std::vector<double> x{1.0, -1.0};
  adam.step(x, {0.5, -2.0}, 0.1);
  EXPECT_NEAR(x[0], 0.9, 1e-7);
  EXPECT_NEAR(x[1], -0.9, 1e-7);
  EXPECT_EQ(adam.steps(), 1u);
}

TEST(TrainTest, ZeroStepsLeavesParametersUnchanged) {
  Model model(tiny_model(), 3);
  const auto before = model.params().flatten();
  TrainConfig cfg;
  cfg.steps = 0;
  const auto r = stereolidar::train::train(model, tiny_data(), cfg);
  EXPECT_TRUE(r.curve.empty());
  EXPECT_EQ(model.params().flatten(), before);
}

TEST(TrainTest, TrainingIsDeterministicAcrossThreadCounts) {
  TrainConfig cfg;
  cfg.steps = 2;
  cfg.batch = 2;
  cfg.max_lr = 1e-3;
  Model a(tiny_model(), 5), b(tiny_model(), 5);
  cfg.jobs = 1;
  const auto ra = stereolidar::train::train(a, tiny_data(), cfg);
  cfg.jobs = 2;
  const auto rb = stereolidar::train::train(b, tiny_data(), cfg);
  EXPECT_EQ(a.params().flatten(), b.params().flatten());
  ASSERT_EQ(ra.curve.size(), 2u);
  EXPECT_EQ(ra.curve[1].loss, rb.curve[1].loss);
  EXPECT_NE(a.params().flatten(), Model(tiny_model(), 5).params().flatten());
}

TEST(TrainTest, CurveCsvHeader) {
  std::vector<CurveRow> rows(1);
  rows[0].step = 0;
  rows[0].loss = 1.5;
  EXPECT_EQ(curve_csv(rows).substr(0, 36), "step,loss,epe,d1,rmse,mae,irmse,imae");
  AblationRow a;
  a.iters = 1;
  EXPECT_EQ(ablation_csv({a}).substr(0, 30), "iters,epe,d1,rmse,mae,irmse,im");
}

TEST(TrainTest, SingleIterationAblationHasOneRow) {
  const Model model(tiny_model(), 1);
  const auto examples = make_examples(tiny_data(9), 2);
  EXPECT_EQ(ablate_iterations(model, examples, {1}).size(), 1u);
  EXPECT_THROW(ablate_iterations(model, examples, {}), ArgumentError);
}

TEST(TrainTest, ExamplesArePureFunctionsOfSeedAndIndex) {
  const auto a = make_example(tiny_data(4), 7), b = make_example(tiny_data(4), 7);
  EXPECT_EQ(a.sample.left, b.sample.left);
  EXPECT_EQ(a.lidar, b.lidar);
  const auto batch = make_examples(tiny_data(4), 8, 3);
  EXPECT_EQ(batch[7].lidar, a.lidar);
}

TEST(TrainTest, AllInSparseGradientIsExactlyZero) {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const auto g = sparse_only_gradient(Strategy::self_all_in, seed);
    for (double v : g) ASSERT_EQ(v, 0.0);
  }
}

TEST(TrainTest, HalfSplitSparseGradientIsNonzero) {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    EXPECT_GT(max_abs(sparse_only_gradient(Strategy::self_half2, seed)), 0.0);
    EXPECT_GT(max_abs(sparse_only_gradient(Strategy::self_half1, seed)), 0.0);
  }
}

TEST(TrainTest, ConfigValidation) {
  TrainConfig cfg;
  EXPECT_NO_THROW(cfg.validate());
  cfg.batch = 0;
  EXPECT_THROW(cfg.validate(), ConfigError);
}
