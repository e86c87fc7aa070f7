#pragma once

#include <array>

#include "stereolidar/io.hpp"
#include "stereolidar/scenegen.hpp"

namespace stereolidar::cli {

/// Turbo colormap (polynomial fit), x in [0,1] → RGB in [0,1].
std::array<double, 3> turbo(double x);

/// Maps [lo, hi] linearly onto the colormap; values outside are clamped and
/// non-finite values render black.
scenegen::RgbImage colorize(const io::FloatMap& map, double lo, double hi);

}  // namespace stereolidar::cli
