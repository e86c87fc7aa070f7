#include "colormap.hpp"

#include <algorithm>
#include <cmath>

namespace stereolidar::cli {

std::array<double, 3> turbo(double x) {
  x = std::clamp(x, 0.0, 1.0);
  const double r =
      0.13572138 + x * (4.61539260 + x * (-42.66032258 + x * (132.13108234 + x * (-152.94239396 + x * 59.28637943))));
  const double g =
      0.09140261 + x * (2.19418839 + x * (4.84296658 + x * (-14.18503333 + x * (4.27729857 + x * 2.82956604))));
  const double b =
      0.10667330 + x * (12.64194608 + x * (-60.58204836 + x * (110.36276771 + x * (-89.90310912 + x * 27.34824973))));
  return {std::clamp(r, 0.0, 1.0), std::clamp(g, 0.0, 1.0), std::clamp(b, 0.0, 1.0)};
}

scenegen::RgbImage colorize(const io::FloatMap& map, double lo, double hi) {
  const std::size_t hw = map.height * map.width;
  scenegen::RgbImage img{map.height, map.width, std::vector<double>(3 * hw, 0.0)};
  const double span = hi > lo ? hi - lo : 1.0;
  for (std::size_t k = 0; k < hw; ++k) {
    const double v = map.data[k];
    if (!std::isfinite(v)) continue;
    const auto rgb = turbo((v - lo) / span);
    for (std::size_t c = 0; c < 3; ++c) img.data[c * hw + k] = rgb[c];
  }
  return img;
}

}  // namespace stereolidar::cli
