#include <gtest/gtest.h>

#include <random>

#include "helpers.hpp"
#include "oracle_cases.hpp"
#include "stereolidar/correlation.hpp"

using namespace stereolidar;
using namespace stereolidar::correlation;
using ndgrad::DiffArray;
using ndgrad::Shape;
using testing_support::max_abs_diff;
using testing_support::to_vec;
using testing_support::uniform;

TEST(CorrelationTest, SinglePixelDotProduct) {
  // One row, two columns, two channels.
  const auto l = DiffArray::constant({2, 1, 2}, {1, 2, 3, 4});
  const auto r = DiffArray::constant({2, 1, 2}, {5, 6, 7, 8});
  // corr[0][j][k] = l0j·r0k + l1j·r1k
  EXPECT_EQ(to_vec(build_correlation(l, r)), (std::vector<double>{1 * 5 + 3 * 7, 1 * 6 + 3 * 8, 2 * 5 + 4 * 7,
                                                                  2 * 6 + 4 * 8}));
}

TEST(CorrelationTest, RejectsMismatchedFeatures) {
  EXPECT_THROW(build_correlation(DiffArray::zeros({2, 3, 4}), DiffArray::zeros({2, 3, 5})), ShapeError);
}

TEST(CorrelationTest, PaddedWidth) {
  EXPECT_EQ(padded_width(16, 4), 16u);
  EXPECT_EQ(padded_width(13, 4), 16u);
  EXPECT_EQ(padded_width(13, 1), 13u);
  EXPECT_EQ(padded_width(5, 2), 6u);
}

class CorrelationOracleTest : public ::testing::TestWithParam<std::uint64_t> {};

TEST_P(CorrelationOracleTest, VolumePyramidAndLookupMatchLoops) {
  for (const auto& d : testing_support::correlation_case(GetParam())) EXPECT_LT(d.max_abs, 1e-10) << d.name;
}

INSTANTIATE_TEST_SUITE_P(Seeds, CorrelationOracleTest, ::testing::Range<std::uint64_t>(0, 20));

TEST(CorrelationTest, LookupAtIntegerDisparityReadsTheVolume) {
  std::mt19937_64 rng(11);
  const std::size_t c = 3, h = 2, w = 6;
  const auto corr = build_correlation(DiffArray::constant({c, h, w}, uniform(rng, c * h * w, -1, 1)),
                                      DiffArray::constant({c, h, w}, uniform(rng, c * h * w, -1, 1)));
  const LookupConfig cfg{1, 1};
  const auto out = lookup(build_pyramid(corr, cfg), DiffArray::full({h, w}, 2.0), cfg);
  // Center tap at j = 4 reads column 2.
  for (std::size_t i = 0; i < h; ++i) EXPECT_EQ(out.data()[(1 * h + i) * w + 4], corr.data()[(i * w + 4) * w + 2]);
}
