#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>

#include "stereolidar/io.hpp"

using namespace stereolidar;
using namespace stereolidar::io;
namespace fs = std::filesystem;

namespace {

class IoTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("stereolidar_io_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()) +
                                        "_" + ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  fs::path file(const std::string& name) const { return dir_ / name; }

  void write_raw(const fs::path& p, const std::string& bytes) const {
    std::ofstream f(p, std::ios::binary);
    f << bytes;
  }

  fs::path dir_;
};

}  // namespace

TEST_F(IoTest, PfmRoundTripIsBitExact) {
  std::mt19937 rng(1);
  std::uniform_real_distribution<float> dist(-100.f, 100.f);
  FloatMap m{5, 7, std::vector<float>(35)};
  for (auto& v : m.data) v = dist(rng);
  m.data[3] = std::numeric_limits<float>::infinity();
  write_pfm(file("a.pfm"), m);
  const FloatMap r = read_pfm(file("a.pfm"));
  ASSERT_EQ(r.height, 5u);
  ASSERT_EQ(r.width, 7u);
  EXPECT_EQ(std::memcmp(r.data.data(), m.data.data(), m.data.size() * sizeof(float)), 0);
}

TEST_F(IoTest, PfmRowsAreStoredBottomUp) {
  FloatMap m{2, 1, {1.0f, 2.0f}};
  write_pfm(file("b.pfm"), m);
  std::ifstream f(file("b.pfm"), std::ios::binary);
  const std::string bytes((std::istreambuf_iterator<char>(f)), {});
  float first = 0;
  std::memcpy(&first, bytes.data() + bytes.size() - 8, 4);
  EXPECT_EQ(first, 2.0f);
  EXPECT_EQ(bytes.substr(0, 3), "Pf\n");
}

TEST_F(IoTest, PfmBigEndianIsRead) {
  std::string bytes = "Pf\n1 1\n1.0\n";
  const float v = 3.5f;
  char raw[4];
  std::memcpy(raw, &v, 4);
  std::swap(raw[0], raw[3]);
  std::swap(raw[1], raw[2]);
  bytes.append(raw, 4);
  write_raw(file("be.pfm"), bytes);
  EXPECT_EQ(read_pfm(file("be.pfm")).data[0], 3.5f);
}

TEST_F(IoTest, PpmRoundTripQuantizes) {
  scenegen::RgbImage img{2, 3, std::vector<double>(18)};
  for (std::size_t k = 0; k < 18; ++k) img.data[k] = static_cast<double>(k) / 17.0;
  write_ppm(file("a.ppm"), img);
  const auto r = read_ppm(file("a.ppm"));
  ASSERT_EQ(r.height, 2u);
  ASSERT_EQ(r.width, 3u);
  for (std::size_t k = 0; k < 18; ++k) EXPECT_NEAR(r.data[k], img.data[k], 0.5 / 255.0 + 1e-12);
}

TEST_F(IoTest, PpmWrongMagicReportsOffset) {
  write_raw(file("bad.ppm"), "P3\n1 1\n255\n\0\0\0");
  try {
    read_ppm(file("bad.ppm"));
    FAIL() << "expected a parse error";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.offset(), 0u);
  }
}

TEST_F(IoTest, PpmTruncatedPayload) {
  write_raw(file("short.ppm"), std::string("P6\n2 1\n255\n\1\2\3", 14));
  EXPECT_THROW(read_ppm(file("short.ppm")), ParseError);
}

TEST_F(IoTest, SparseCsvRoundTrip) {
  auto sp = SparseDisparity::empty(3, 4);
  sp.set(0, 1, 2.5);
  sp.set(2, 3, 7.125);
  write_sparse_csv(file("s.csv"), sp);
  EXPECT_EQ(read_sparse_csv(file("s.csv"), 3, 4), sp);
}

TEST_F(IoTest, SparseCsvOutOfBoundsNamesTheLine) {
  write_raw(file("oob.csv"), "i,j,disparity\n0,1,2.0\n5,1,3.0\n");
  try {
    read_sparse_csv(file("oob.csv"), 3, 4);
    FAIL() << "expected a parse error";
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("row 3"), std::string::npos) << e.what();
  }
}

TEST_F(IoTest, SparseCsvRejectsNonpositiveAndDuplicates) {
  write_raw(file("neg.csv"), "i,j,disparity\n0,1,-2.0\n");
  EXPECT_THROW(read_sparse_csv(file("neg.csv"), 3, 4), ParseError);
  write_raw(file("dup.csv"), "i,j,disparity\n0,1,2.0\n0,1,3.0\n");
  EXPECT_THROW(read_sparse_csv(file("dup.csv"), 3, 4), ParseError);
}

TEST_F(IoTest, MaskRoundTrip) {
  const std::vector<std::uint8_t> mask{1, 0, 0, 1, 1, 0};
  write_mask_pgm(file("m.pgm"), 2, 3, mask);
  std::size_t h = 0, w = 0;
  EXPECT_EQ(read_mask_pgm(file("m.pgm"), h, w), mask);
  EXPECT_EQ(h, 2u);
  EXPECT_EQ(w, 3u);
}

TEST_F(IoTest, MissingFileIsAnError) { EXPECT_THROW(read_pfm(file("none.pfm")), Error); }
