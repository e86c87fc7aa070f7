#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <vector>

#include "stereolidar/errors.hpp"

namespace stereolidar {

/// Per-pixel disparity seeds with a validity mask. Invalid entries hold 0.
struct SparseDisparity {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> values;
  std::vector<std::uint8_t> valid;

  static SparseDisparity empty(std::size_t height, std::size_t width) {
    return {height, width, std::vector<double>(height * width, 0.0), std::vector<std::uint8_t>(height * width, 0)};
  }

  std::size_t count() const {
    std::size_t n = 0;
    for (auto v : valid) n += v ? 1 : 0;
    return n;
  }

  void set(std::size_t i, std::size_t j, double d) {
    values[i * width + j] = d;
    valid[i * width + j] = 1;
  }

  /// Invalid entries are exactly 0 and valid entries are > 0.
  void validate() const {
    if (values.size() != height * width || valid.size() != height * width) {
      throw ShapeError("sparse disparity buffers do not match " + std::to_string(height) + "x" + std::to_string(width));
    }
    for (std::size_t k = 0; k < values.size(); ++k) {
      if (valid[k] && !(values[k] > 0.0)) throw ArgumentError("sparse disparity must be > 0 at valid positions");
      if (!valid[k] && values[k] != 0.0) throw ArgumentError("sparse disparity must be 0 at invalid positions");
    }
  }

  bool operator==(const SparseDisparity&) const = default;
};

/// Mirrors the columns: (i, j) -> (i, W-1-j).
inline SparseDisparity flip_horizontal(const SparseDisparity& sp) {
  SparseDisparity out = SparseDisparity::empty(sp.height, sp.width);
  for (std::size_t i = 0; i < sp.height; ++i)
    for (std::size_t j = 0; j < sp.width; ++j) {
      const std::size_t src = i * sp.width + j;
      if (sp.valid[src]) out.set(i, sp.width - 1 - j, sp.values[src]);
    }
  return out;
}

/// Re-expresses left-view seeds in the right view: a point (i, j, d) lands at
/// column round(j - d). Points leaving the image are dropped; when two points
/// collide the larger disparity (the nearer surface) wins.
inline SparseDisparity to_right_view(const SparseDisparity& left) {
  SparseDisparity out = SparseDisparity::empty(left.height, left.width);
  for (std::size_t i = 0; i < left.height; ++i)
    for (std::size_t j = 0; j < left.width; ++j) {
      const std::size_t src = i * left.width + j;
      if (!left.valid[src]) continue;
      const double d = left.values[src];
      const long k = std::lround(static_cast<double>(j) - d);
      if (k < 0 || k >= static_cast<long>(left.width)) continue;
      const std::size_t dst = i * left.width + static_cast<std::size_t>(k);
      if (!out.valid[dst] || d > out.values[dst]) out.set(i, static_cast<std::size_t>(k), d);
    }
  return out;
}

}  // namespace stereolidar
