#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace stereolidar::metrics {

/// Predicted disparities are floored here before depth conversion so that
/// nonpositive predictions map to a finite (very far) depth.
inline constexpr double kMinDisparity = 1e-2;

struct Metrics {
  double epe = 0;    ///< px
  double d1 = 0;     ///< % of pixels with |error| > 1 px
  double rmse = 0;   ///< mm
  double mae = 0;    ///< mm
  double irmse = 0;  ///< 1/km
  double imae = 0;   ///< 1/km
  std::size_t count = 0;
};

struct MetricsReport {
  std::vector<Metrics> per_sample;
  Metrics aggregate;  ///< unweighted mean over samples
};

/// Metrics over the valid pixels. Depth = f·B/d in meters.
Metrics compute_metrics(std::span<const double> pred, std::span<const double> gt, std::span<const std::uint8_t> valid,
                        double focal, double baseline);

Metrics mean_metrics(std::span<const Metrics> samples);

}  // namespace stereolidar::metrics
