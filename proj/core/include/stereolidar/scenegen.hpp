#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "stereolidar/ndgrad.hpp"
#include "stereolidar/sparse.hpp"

namespace stereolidar::scenegen {

/// Planar RGB image, channel-major [3,H,W], values in [0,1].
struct RgbImage {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> data;

  ndgrad::DiffArray array() const { return ndgrad::DiffArray::constant({3, height, width}, data); }
  bool operator==(const RgbImage&) const = default;
};

struct SceneConfig {
  std::size_t height = 32;
  std::size_t width = 64;
  double focal = 100.0;   ///< f, pixels
  double baseline = 0.5;  ///< B, meters
  std::size_t layers = 3;  ///< background plus layers-1 rectangles
  int d_min = 2;
  int d_max = 10;

  void validate() const;
};

struct StereoSample {
  RgbImage left;
  RgbImage right;
  std::vector<double> gt_disparity;   ///< [H,W], left view
  std::vector<std::uint8_t> gt_valid;  ///< false in the left-edge band and occlusions
  double focal = 0;
  double baseline = 0;

  std::size_t height() const { return left.height; }
  std::size_t width() const { return left.width; }
  std::size_t valid_count() const;
};

/// Fronto-parallel textured layers at distinct integer disparities; the
/// background takes d_min and nearer layers are drawn over farther ones.
/// Integer disparities make the right view an exact column shift of each layer.
StereoSample generate_scene(const SceneConfig& cfg, std::uint64_t seed);

/// n_points gt_valid pixels drawn uniformly without replacement.
SparseDisparity sample_lidar(const StereoSample& sample, std::size_t n_points, std::uint64_t seed);

enum class SplitStrategy { all_in, half1, half2 };

SplitStrategy parse_split(const std::string& name);
std::string to_string(SplitStrategy s);

struct SparseSplit {
  SparseDisparity input;
  SparseDisparity loss;
};

/// all_in: (sp, sp). half1: (random ⌊n/2⌋, sp). half2: (random ⌊n/2⌋, the rest).
SparseSplit split_sparse(const SparseDisparity& sp, SplitStrategy strategy, std::uint64_t seed);

double disparity_to_depth(double d, double focal, double baseline);
double depth_to_disparity(double depth, double focal, double baseline);

}  // namespace stereolidar::scenegen
