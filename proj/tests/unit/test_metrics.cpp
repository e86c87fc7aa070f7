#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "helpers.hpp"
#include "oracles.hpp"
#include "stereolidar/metrics.hpp"

using namespace stereolidar;
using namespace stereolidar::metrics;

namespace {

const std::vector<std::uint8_t> kAllValid(16, 1);

}  // namespace

TEST(MetricsTest, ExactPredictionIsAllZero) {
  const std::vector<double> gt(16, 3.0);
  const auto m = compute_metrics(gt, gt, kAllValid, 100.0, 0.5);
  EXPECT_EQ(m.epe, 0.0);
  EXPECT_EQ(m.d1, 0.0);
  EXPECT_EQ(m.rmse, 0.0);
  EXPECT_EQ(m.mae, 0.0);
  EXPECT_EQ(m.irmse, 0.0);
  EXPECT_EQ(m.imae, 0.0);
  EXPECT_EQ(m.count, 16u);
}

TEST(MetricsTest, UnitErrorIsNotAnOutlier) {
  // gt 4 → 12.5 m, pred 5 → 10 m (fB = 50); inverse depths 80 and 100 per km.
  const std::vector<double> gt(16, 4.0), pred(16, 5.0);
  const auto m = compute_metrics(pred, gt, kAllValid, 100.0, 0.5);
  EXPECT_DOUBLE_EQ(m.epe, 1.0);
  EXPECT_EQ(m.d1, 0.0);
  EXPECT_NEAR(m.rmse, 2500.0, 1e-9);
  EXPECT_NEAR(m.mae, 2500.0, 1e-9);
  EXPECT_NEAR(m.irmse, 20.0, 1e-9);
  EXPECT_NEAR(m.imae, 20.0, 1e-9);
}

TEST(MetricsTest, HalfWrongCase) {
  // gt 5 → 10 m = 10000 mm and 100/km; half the pixels predict 10 → 5000 mm
  // and 200/km. EPE = 8·5/16, RMSE = sqrt(8·5000²/16), iRMSE = sqrt(8·100²/16).
  std::vector<double> gt(16, 5.0), pred(16, 5.0);
  for (std::size_t k = 0; k < 16; k += 2) pred[k] = 10.0;
  const auto m = compute_metrics(pred, gt, kAllValid, 100.0, 0.5);
  EXPECT_DOUBLE_EQ(m.epe, 2.5);
  EXPECT_DOUBLE_EQ(m.d1, 50.0);
  EXPECT_NEAR(m.rmse, 5000.0 / std::sqrt(2.0), 1e-9);
  EXPECT_NEAR(m.mae, 2500.0, 1e-9);
  EXPECT_NEAR(m.irmse, 100.0 / std::sqrt(2.0), 1e-9);
  EXPECT_NEAR(m.imae, 50.0, 1e-9);
}

TEST(MetricsTest, InvalidPixelsAreIgnoredAndNonpositivePredictionsClamped) {
  // One valid pixel: gt 2 → 25 m; pred −1 is raised to 0.01 → 5000 m.
  std::vector<double> gt(16, 2.0), pred(16, 100.0);
  std::vector<std::uint8_t> valid(16, 0);
  valid[6] = 1;
  pred[6] = -1.0;
  const auto m = compute_metrics(pred, gt, valid, 100.0, 0.5);
  EXPECT_EQ(m.count, 1u);
  EXPECT_DOUBLE_EQ(m.epe, 3.0);
  EXPECT_DOUBLE_EQ(m.d1, 100.0);
  EXPECT_NEAR(m.rmse, 5000e3 - 25e3, 1e-6);
  EXPECT_NEAR(m.mae, 5000e3 - 25e3, 1e-6);
  EXPECT_NEAR(m.irmse, 40.0 - 0.2, 1e-9);
  EXPECT_NEAR(m.imae, 40.0 - 0.2, 1e-9);
}

class MetricsOracleTest : public ::testing::TestWithParam<std::uint64_t> {};

TEST_P(MetricsOracleTest, RandomCaseMatchesLoop) {
  std::mt19937_64 rng(GetParam());
  const auto gt = testing_support::uniform(rng, 16, 0.5, 20);
  const auto pred = testing_support::uniform(rng, 16, -1, 22);
  std::vector<std::uint8_t> valid(16);
  std::bernoulli_distribution b(0.7);
  for (auto& v : valid) v = b(rng);
  valid[0] = 1;
  const auto m = compute_metrics(pred, gt, valid, 80.0, 0.3);
  const auto r = oracle::metrics(pred, gt, valid, 80.0, 0.3, kMinDisparity);
  EXPECT_NEAR(m.epe, r.epe, 1e-10);
  EXPECT_NEAR(m.d1, r.d1, 1e-10);
  EXPECT_NEAR(m.rmse, r.rmse, 1e-10 * std::max(1.0, r.rmse));
  EXPECT_NEAR(m.mae, r.mae, 1e-10 * std::max(1.0, r.mae));
  EXPECT_NEAR(m.irmse, r.irmse, 1e-10);
  EXPECT_NEAR(m.imae, r.imae, 1e-10);
}

INSTANTIATE_TEST_SUITE_P(Seeds, MetricsOracleTest, ::testing::Range<std::uint64_t>(0, 10));

TEST(MetricsTest, Errors) {
  const std::vector<double> gt(16, 1.0);
  EXPECT_THROW(compute_metrics(gt, gt, std::vector<std::uint8_t>(16, 0), 100, 0.5), DegenerateMaskError);
  EXPECT_THROW(compute_metrics(gt, std::vector<double>(15, 1.0), kAllValid, 100, 0.5), ShapeError);
  EXPECT_THROW(mean_metrics({}), ArgumentError);
}

TEST(MetricsTest, MeanIsUnweighted) {
  Metrics a{}, b{};
  a.epe = 1.0;
  a.count = 10;
  b.epe = 3.0;
  b.count = 1;
  const std::vector<Metrics> v{a, b};
  EXPECT_DOUBLE_EQ(mean_metrics(v).epe, 2.0);
}
