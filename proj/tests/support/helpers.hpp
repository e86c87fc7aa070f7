#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "stereolidar/ndgrad.hpp"
#include "stereolidar/sparse.hpp"

namespace testing_support {

inline std::vector<double> uniform(std::mt19937_64& rng, std::size_t n, double lo, double hi) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> v(n);
  for (auto& x : v) x = dist(rng);
  return v;
}

inline std::vector<double> to_vec(const stereolidar::ndgrad::DiffArray& a) {
  return {a.data().begin(), a.data().end()};
}

inline double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) return INFINITY;
  double m = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) m = std::max(m, std::fabs(a[k] - b[k]));
  return m;
}

/// Roughly `n` seeds with values in [lo, hi] at random positions.
inline stereolidar::SparseDisparity random_seeds(std::mt19937_64& rng, std::size_t h, std::size_t w, std::size_t n,
                                                 double lo, double hi) {
  auto sp = stereolidar::SparseDisparity::empty(h, w);
  std::uniform_int_distribution<std::size_t> pos(0, h * w - 1);
  std::uniform_real_distribution<double> val(lo, hi);
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t p = pos(rng);
    sp.set(p / w, p % w, val(rng));
  }
  return sp;
}

}  // namespace testing_support
