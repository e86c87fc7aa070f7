#include <gtest/gtest.h>

#include <random>

#include "helpers.hpp"
#include "stereolidar/gradcheck.hpp"
#include "stereolidar/ndgrad.hpp"

using namespace stereolidar;
using namespace stereolidar::ndgrad;
using testing_support::to_vec;
using testing_support::uniform;

namespace {

std::vector<double> conv_oracle(const std::vector<double>& x, std::size_t cin, std::size_t h, std::size_t w,
                                const std::vector<double>& k, std::size_t cout, std::size_t ks, std::size_t stride,
                                std::size_t pad, const std::vector<double>& bias, std::size_t& oh, std::size_t& ow) {
  oh = (h + 2 * pad - ks) / stride + 1;
  ow = (w + 2 * pad - ks) / stride + 1;
  std::vector<double> out(cout * oh * ow, 0.0);
  for (std::size_t o = 0; o < cout; ++o)
    for (std::size_t i = 0; i < oh; ++i)
      for (std::size_t j = 0; j < ow; ++j) {
        double s = bias.empty() ? 0.0 : bias[o];
        for (std::size_t c = 0; c < cin; ++c)
          for (std::size_t a = 0; a < ks; ++a)
            for (std::size_t b = 0; b < ks; ++b) {
              const long y = static_cast<long>(i * stride + a) - static_cast<long>(pad);
              const long x2 = static_cast<long>(j * stride + b) - static_cast<long>(pad);
              if (y < 0 || x2 < 0 || y >= static_cast<long>(h) || x2 >= static_cast<long>(w)) continue;
              s += k[((o * cin + c) * ks + a) * ks + b] * x[(c * h + y) * w + x2];
            }
        out[(o * oh + i) * ow + j] = s;
      }
  return out;
}

}  // namespace

TEST(NdgradTest, ElementwiseForwardValues) {
  const auto a = DiffArray::constant({3}, {-1.0, 0.5, 2.0});
  const auto b = DiffArray::constant({3}, {2.0, 4.0, -0.5});
  EXPECT_EQ(to_vec(add(a, b)), (std::vector<double>{1.0, 4.5, 1.5}));
  EXPECT_EQ(to_vec(mul(a, b)), (std::vector<double>{-2.0, 2.0, -1.0}));
  EXPECT_EQ(to_vec(relu(a)), (std::vector<double>{0.0, 0.5, 2.0}));
  EXPECT_EQ(to_vec(abs(a)), (std::vector<double>{1.0, 0.5, 2.0}));
  EXPECT_DOUBLE_EQ(sum(a).item(), 1.5);
  EXPECT_DOUBLE_EQ(mean(a).item(), 0.5);
}

TEST(NdgradTest, ScalarBroadcast) {
  const auto a = DiffArray::constant({2, 2}, {1, 2, 3, 4});
  EXPECT_EQ(to_vec(mul(a, DiffArray::scalar(2.0))), (std::vector<double>{2, 4, 6, 8}));
  EXPECT_THROW(add(a, DiffArray::constant({3}, {1, 2, 3})), ShapeError);
}

TEST(NdgradTest, BackwardOfProductAndSum) {
  Tape tape;
  const auto x = tape.leaf({2}, {3.0, -2.0});
  const auto y = tape.leaf({2}, {0.5, 4.0});
  tape.backward(sum(mul(x, y)));
  EXPECT_EQ(std::vector<double>(x.grad().begin(), x.grad().end()), (std::vector<double>{0.5, 4.0}));
  EXPECT_EQ(std::vector<double>(y.grad().begin(), y.grad().end()), (std::vector<double>{3.0, -2.0}));
}

TEST(NdgradTest, GradientAccumulatesOverReuse) {
  Tape tape;
  const auto x = tape.leaf({}, {1.5});
  tape.backward(add(mul(x, x), x));
  EXPECT_DOUBLE_EQ(x.grad()[0], 4.0);
}

TEST(NdgradTest, TapeReplayAndNonScalarRootAreRejected) {
  Tape tape;
  const auto x = tape.leaf({2}, {1.0, 2.0});
  EXPECT_THROW(tape.backward(x), TapeError);
  tape.backward(sum(x));
  EXPECT_THROW(tape.backward(sum(x)), TapeError);
}

TEST(NdgradTest, ConstantsDoNotRecord) {
  const auto a = DiffArray::constant({2}, {1.0, 2.0});
  const auto b = exp(a);
  EXPECT_FALSE(b.requires_grad());
  EXPECT_EQ(b.tape(), nullptr);
}

TEST(NdgradTest, Conv2dMatchesLoopOracle) {
  std::mt19937_64 rng(3);
  for (std::size_t stride : {1u, 2u})
    for (std::size_t pad : {0u, 1u}) {
      const std::size_t cin = 2, cout = 3, h = 5, w = 7, ks = 3;
      const auto x = uniform(rng, cin * h * w, -1, 1);
      const auto k = uniform(rng, cout * cin * ks * ks, -1, 1);
      const auto bias = uniform(rng, cout, -1, 1);
      std::size_t oh = 0, ow = 0;
      const auto expect = conv_oracle(x, cin, h, w, k, cout, ks, stride, pad, bias, oh, ow);
      const auto bias_arr = DiffArray::constant({cout}, bias);
      const auto got = conv2d(DiffArray::constant({cin, h, w}, x), DiffArray::constant({cout, cin, ks, ks}, k), stride,
                              pad, &bias_arr);
      ASSERT_EQ(got.shape(), (Shape{cout, oh, ow}));
      EXPECT_LT(testing_support::max_abs_diff(to_vec(got), expect), 1e-12);
    }
}

TEST(NdgradTest, Conv2dRejectsUnevenStride) {
  EXPECT_THROW(conv2d(DiffArray::zeros({2, 5, 6}), DiffArray::zeros({3, 2, 3, 3}), 2, 0), ShapeError);
}

TEST(NdgradTest, PoolingAndPadding) {
  const auto a = DiffArray::constant({1, 1, 4}, {1, 3, 5, 9});
  EXPECT_EQ(to_vec(avgpool_lastdim(a)), (std::vector<double>{2, 7}));
  EXPECT_EQ(to_vec(pad_lastdim_edge(DiffArray::constant({1, 3}, {1, 2, 3}), 5)), (std::vector<double>{1, 2, 3, 3, 3}));
  const auto p = avgpool2x2(DiffArray::constant({1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9}));
  EXPECT_EQ(p.shape(), (Shape{1, 2, 2}));
  EXPECT_EQ(to_vec(p), (std::vector<double>{3, 4.5, 7.5, 9}));
}

TEST(NdgradTest, OverwriteBlocksGradientAtMaskedEntries) {
  Tape tape;
  const auto x = tape.leaf({3}, {1, 2, 3});
  const std::vector<std::uint8_t> mask{0, 1, 0};
  const std::vector<double> values{0, 7, 0};
  const auto y = overwrite(x, mask, values);
  EXPECT_EQ(to_vec(y), (std::vector<double>{1, 7, 3}));
  tape.backward(sum(y));
  EXPECT_EQ(std::vector<double>(x.grad().begin(), x.grad().end()), (std::vector<double>{1, 0, 1}));
}

TEST(NdgradTest, SampleRowsClampsOutsideTheRow) {
  const auto src = DiffArray::constant({1, 4}, {10, 20, 30, 40});
  const std::vector<std::uint32_t> rows{0, 0, 0, 0};
  const auto out = sample_rows(src, rows, DiffArray::constant({4}, {-2.0, 0.25, 2.5, 7.0}), {4});
  EXPECT_EQ(to_vec(out), (std::vector<double>{10, 12.5, 35, 40}));
}

TEST(NdgradTest, SoftmaxRowsSumToOne) {
  std::mt19937_64 rng(5);
  const auto out = softmax_lastdim(DiffArray::constant({3, 5}, uniform(rng, 15, -4, 4)));
  for (std::size_t r = 0; r < 3; ++r) {
    double s = 0.0;
    for (std::size_t k = 0; k < 5; ++k) s += out.data()[r * 5 + k];
    EXPECT_NEAR(s, 1.0, 1e-15);
  }
}

class NdgradGradcheckTest : public ::testing::TestWithParam<std::uint64_t> {};

TEST_P(NdgradGradcheckTest, EveryOperationMatchesFiniteDifferences) {
  for (const auto& c : check_all_ops(GetParam())) {
    EXPECT_LE(c.result.max_rel_error, 1e-4) << c.name;
    EXPECT_GT(c.result.entries, 0u) << c.name;
  }
}

INSTANTIATE_TEST_SUITE_P(Seeds, NdgradGradcheckTest, ::testing::Values(0u, 1u, 2u));
