#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "stereolidar/ndgrad.hpp"

namespace stereolidar::ndgrad {

/// Builds a single-element result from leaves recorded on `tape`.
using ScalarFn = std::function<DiffArray(Tape& tape, const std::vector<DiffArray>& leaves)>;

struct GradCheckInput {
  Shape shape;
  std::vector<double> values;
};

struct GradCheckOptions {
  double step = 1e-6;
  /// Relative error is |tape - fd| / max(|tape|, |fd|, floor).
  double floor = 1e-4;
  /// Entries probed per input (chosen at random when smaller than the input).
  std::size_t max_entries_per_input = static_cast<std::size_t>(-1);
  std::uint64_t seed = 0;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::size_t entries = 0;
  std::size_t worst_input = 0;
  std::size_t worst_entry = 0;
};

/// Compares tape gradients with central finite differences.
GradCheckResult check_gradients(const ScalarFn& fn, const std::vector<GradCheckInput>& inputs,
                                const GradCheckOptions& options = {});

double relative_error(double a, double b, double floor);

/// Named finite-difference check over one registered operation; used by the
/// command-line `gradcheck` and the test suites.
struct OpCheck {
  std::string name;
  GradCheckResult result;
};

/// Runs every ndgrad operation against finite differences on random inputs
/// derived from `seed`.
std::vector<OpCheck> check_all_ops(std::uint64_t seed, const GradCheckOptions& options = {});

}  // namespace stereolidar::ndgrad
