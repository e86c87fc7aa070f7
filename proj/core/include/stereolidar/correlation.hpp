#pragma once

#include <cstddef>
#include <vector>

#include "stereolidar/ndgrad.hpp"

namespace stereolidar::correlation {

using ndgrad::DiffArray;

struct LookupConfig {
  std::size_t radius = 4;  ///< r_L
  std::size_t levels = 4;  ///< L

  void validate() const;
  std::size_t channels() const { return levels * (2 * radius + 1); }
};

/// Level k has shape [H, W, Wp/2^k], where Wp is W right-padded (edge value)
/// to a multiple of 2^(L-1).
struct CorrelationPyramid {
  std::vector<DiffArray> levels;

  std::size_t height() const { return levels.at(0).dim(0); }
  std::size_t width() const { return levels.at(0).dim(1); }
};

/// out[i,j,k] = Σ_c left[c,i,j] · right[c,i,k].
DiffArray build_correlation(const DiffArray& left, const DiffArray& right);

/// Smallest width >= w that is divisible by 2^(levels-1).
std::size_t padded_width(std::size_t w, std::size_t levels);

CorrelationPyramid build_pyramid(const DiffArray& corr, const LookupConfig& cfg);

/// Samples every level around the match column of each pixel:
///   out[k·(2r+1) + (δ+r), i, j] = level_k[i, j, (j - d[i,j]) / 2^k + δ]
/// with clamped linear interpolation. Returns [L·(2r+1), H, W].
DiffArray lookup(const CorrelationPyramid& pyr, const DiffArray& disparity, const LookupConfig& cfg);

}  // namespace stereolidar::correlation
