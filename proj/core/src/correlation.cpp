#include "stereolidar/correlation.hpp"

#include <algorithm>

#include <Eigen/Core>

namespace stereolidar::correlation {

using namespace ndgrad;

namespace {
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMatrix>;
}  // namespace

void LookupConfig::validate() const {
  if (radius < 1) throw ConfigError("lookup radius must be >= 1");
  if (levels < 1) throw ConfigError("pyramid needs at least one level");
}

DiffArray build_correlation(const DiffArray& left, const DiffArray& right) {
  if (left.rank() != 3 || left.shape() != right.shape()) {
    throw ShapeError("build_correlation: feature maps " + shape_str(left.shape()) + " and " +
                     shape_str(right.shape()) + " must be equal [C,H,W]");
  }
  const std::size_t c = left.dim(0), h = left.dim(1), w = left.dim(2);
  std::vector<double> out(h * w * w);
  // Row i: out[i] (W×W) = Lᵢᵀ · Rᵢ with Lᵢ, Rᵢ the C×W slices of row i.
  auto gather_row = [c, h, w](std::span<const double> f, std::size_t i) {
    RowMatrix m(c, w);
    for (std::size_t k = 0; k < c; ++k)
      for (std::size_t j = 0; j < w; ++j) m(k, j) = f[(k * h + i) * w + j];
    return m;
  };
  for (std::size_t i = 0; i < h; ++i) {
    const RowMatrix l = gather_row(left.data(), i);
    const RowMatrix r = gather_row(right.data(), i);
    // Products go through Eigen-owned storage: Eigen picks vectorized loop
    // boundaries from buffer addresses, which would make rounding vary
    // between runs.
    const RowMatrix prod = l.transpose() * r;
    std::copy(prod.data(), prod.data() + prod.size(), out.begin() + static_cast<std::ptrdiff_t>(i * w * w));
  }
  auto ln = left.node();
  auto rn = right.node();
  return Tape::record({h, w, w}, std::move(out), {left, right}, [=](std::span<const double> g, const ParentGrads& gi) {
    for (std::size_t i = 0; i < h; ++i) {
      const RowMatrix gr = ConstMap(g.data() + i * w * w, w, w);
      if (!gi[0].empty()) {
        const RowMatrix r = gather_row(rn->value, i);
        const RowMatrix gl = r * gr.transpose();  // C×W
        for (std::size_t k = 0; k < c; ++k)
          for (std::size_t j = 0; j < w; ++j) gi[0][(k * h + i) * w + j] += gl(k, j);
      }
      if (!gi[1].empty()) {
        const RowMatrix l = gather_row(ln->value, i);
        const RowMatrix grr = l * gr;  // C×W
        for (std::size_t k = 0; k < c; ++k)
          for (std::size_t j = 0; j < w; ++j) gi[1][(k * h + i) * w + j] += grr(k, j);
      }
    }
  });
}

std::size_t padded_width(std::size_t w, std::size_t levels) {
  const std::size_t m = std::size_t{1} << (levels - 1);
  return (w + m - 1) / m * m;
}

CorrelationPyramid build_pyramid(const DiffArray& corr, const LookupConfig& cfg) {
  cfg.validate();
  if (corr.rank() != 3) throw ShapeError("build_pyramid: expected [H,W,W], got " + shape_str(corr.shape()));
  CorrelationPyramid pyr;
  const std::size_t w = corr.dim(2);
  const std::size_t wp = padded_width(w, cfg.levels);
  pyr.levels.push_back(wp == w ? corr : pad_lastdim_edge(corr, wp));
  for (std::size_t k = 1; k < cfg.levels; ++k) pyr.levels.push_back(avgpool_lastdim(pyr.levels.back()));
  return pyr;
}

DiffArray lookup(const CorrelationPyramid& pyr, const DiffArray& disparity, const LookupConfig& cfg) {
  cfg.validate();
  if (pyr.levels.size() != cfg.levels) throw ShapeError("lookup: pyramid depth does not match config");
  const std::size_t h = pyr.height(), w = pyr.width();
  if (disparity.rank() != 2 || disparity.dim(0) != h || disparity.dim(1) != w) {
    throw ShapeError("lookup: disparity " + shape_str(disparity.shape()) + " does not match pyramid " +
                     shape_str({h, w}));
  }
  const std::size_t taps = 2 * cfg.radius + 1;
  const std::size_t nl = cfg.levels;
  const int r = static_cast<int>(cfg.radius);
  auto dv = disparity.data();

  std::vector<double> out(nl * taps * h * w);
  std::vector<LinearSample> samples(out.size());
  for (std::size_t k = 0; k < nl; ++k) {
    const std::size_t wk = pyr.levels[k].dim(2);
    const double inv = 1.0 / static_cast<double>(std::size_t{1} << k);
    auto lv = pyr.levels[k].data();
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 0; j < w; ++j) {
        const double center = (static_cast<double>(j) - dv[i * w + j]) * inv;
        const double* row = lv.data() + (i * w + j) * wk;
        for (int t = -r; t <= r; ++t) {
          const std::size_t o = ((k * taps + static_cast<std::size_t>(t + r)) * h + i) * w + j;
          const auto s = linear_sample_weights(center + t, wk);
          samples[o] = s;
          out[o] = s.w0 * row[s.i0] + (s.w1 != 0.0 ? s.w1 * row[s.i1] : 0.0);
        }
      }
  }

  std::vector<DiffArray> parents = pyr.levels;
  parents.push_back(disparity);
  std::vector<std::shared_ptr<detail::Node>> level_nodes;
  std::vector<std::size_t> widths;
  for (const auto& l : pyr.levels) {
    level_nodes.push_back(l.node());
    widths.push_back(l.dim(2));
  }
  return Tape::record(
      {nl * taps, h, w}, std::move(out), parents,
      [=, samples = std::move(samples)](std::span<const double> g, const ParentGrads& gi) {
        auto gd = gi[nl];
        for (std::size_t k = 0; k < nl; ++k) {
          const std::size_t wk = widths[k];
          const double inv = 1.0 / static_cast<double>(std::size_t{1} << k);
          const auto& lv = level_nodes[k]->value;
          auto gl = gi[k];
          for (std::size_t t = 0; t < taps; ++t)
            for (std::size_t i = 0; i < h; ++i)
              for (std::size_t j = 0; j < w; ++j) {
                const std::size_t o = ((k * taps + t) * h + i) * w + j;
                const auto& s = samples[o];
                const std::size_t base = (i * w + j) * wk;
                if (!gl.empty()) {
                  gl[base + s.i0] += g[o] * s.w0;
                  if (s.w1 != 0.0) gl[base + s.i1] += g[o] * s.w1;
                }
                // x = (j - d)/2^k + δ, so dx/dd = -1/2^k.
                if (!gd.empty() && s.inside) gd[i * w + j] -= g[o] * (lv[base + s.i1] - lv[base + s.i0]) * inv;
              }
        }
      });
}

}  // namespace stereolidar::correlation
