#include "stereolidar/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "stereolidar/errors.hpp"

namespace stereolidar::metrics {

Metrics compute_metrics(std::span<const double> pred, std::span<const double> gt, std::span<const std::uint8_t> valid,
                        double focal, double baseline) {
  if (pred.size() != gt.size() || gt.size() != valid.size()) throw ShapeError("compute_metrics: size mismatch");
  if (!(focal > 0.0) || !(baseline > 0.0)) throw ConfigError("compute_metrics: focal and baseline must be positive");
  const double fb = focal * baseline;
  double epe = 0, outliers = 0, se = 0, ae = 0, ise = 0, iae = 0;
  std::size_t n = 0;
  for (std::size_t k = 0; k < gt.size(); ++k) {
    if (!valid[k]) continue;
    if (!(gt[k] > 0.0)) throw DomainError("compute_metrics: ground-truth disparity must be positive where valid");
    const double err = std::fabs(pred[k] - gt[k]);
    epe += err;
    outliers += err > 1.0 ? 1.0 : 0.0;
    const double dp = std::max(pred[k], kMinDisparity);
    const double depth_err_mm = (fb / dp - fb / gt[k]) * 1000.0;
    const double inv_err_km = (dp / fb - gt[k] / fb) * 1000.0;
    se += depth_err_mm * depth_err_mm;
    ae += std::fabs(depth_err_mm);
    ise += inv_err_km * inv_err_km;
    iae += std::fabs(inv_err_km);
    ++n;
  }
  if (n == 0) throw DegenerateMaskError("compute_metrics: no valid pixels");
  const double dn = static_cast<double>(n);
  return {epe / dn, 100.0 * outliers / dn, std::sqrt(se / dn), ae / dn, std::sqrt(ise / dn), iae / dn, n};
}

Metrics mean_metrics(std::span<const Metrics> samples) {
  if (samples.empty()) throw ArgumentError("mean_metrics: no samples");
  Metrics m;
  for (const auto& s : samples) {
    m.epe += s.epe;
    m.d1 += s.d1;
    m.rmse += s.rmse;
    m.mae += s.mae;
    m.irmse += s.irmse;
    m.imae += s.imae;
    m.count += s.count;
  }
  const double n = static_cast<double>(samples.size());
  m.epe /= n;
  m.d1 /= n;
  m.rmse /= n;
  m.mae /= n;
  m.irmse /= n;
  m.imae /= n;
  return m;
}

}  // namespace stereolidar::metrics
