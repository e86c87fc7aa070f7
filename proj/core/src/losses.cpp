#include "stereolidar/losses.hpp"

#include <cmath>

namespace stereolidar::losses {

using namespace ndgrad;

namespace {

constexpr double kC1 = 0.01 * 0.01;
constexpr double kC2 = 0.03 * 0.03;

void require_map(const DiffArray& d, const char* what) {
  if (d.rank() != 2) throw ShapeError(std::string(what) + ": disparity must be [H,W], got " + shape_str(d.shape()));
}

void require_image(const DiffArray& img, std::size_t h, std::size_t w, const char* what) {
  if (img.rank() != 3 || img.dim(1) != h || img.dim(2) != w) {
    throw ShapeError(std::string(what) + ": image must be [C," + std::to_string(h) + "," + std::to_string(w) +
                     "], got " + shape_str(img.shape()));
  }
}

/// Match coordinates j − d(i,j) as a differentiable [H,W] array.
DiffArray match_columns(const DiffArray& d) {
  const std::size_t h = d.dim(0), w = d.dim(1);
  std::vector<double> cols(h * w);
  for (std::size_t k = 0; k < cols.size(); ++k) cols[k] = static_cast<double>(k % w);
  return sub(DiffArray::constant({h, w}, std::move(cols)), d);
}

/// Weights 1/N on visible pixels, 0 elsewhere.
std::vector<double> visible_weights(const OcclusionMap& mask, std::size_t h, std::size_t w, const char* what) {
  if (mask.height != h || mask.width != w) throw ShapeError(std::string(what) + ": mask size mismatch");
  const std::size_t n = mask.visible();
  if (n == 0) throw DegenerateMaskError(std::string(what) + ": every pixel is masked");
  std::vector<double> wts(h * w);
  for (std::size_t k = 0; k < wts.size(); ++k) wts[k] = mask.occluded[k] ? 0.0 : 1.0 / static_cast<double>(n);
  return wts;
}

OcclusionMap empty_mask(std::size_t h, std::size_t w) { return {h, w, std::vector<std::uint8_t>(h * w, 0)}; }

}  // namespace

void LossWeights::validate() const {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("alpha must be in [0,1]");
  if (appearance < 0 || sparse < 0 || lr < 0 || smooth < 0) throw ConfigError("loss weights must be >= 0");
}

std::size_t OcclusionMap::visible() const {
  std::size_t n = 0;
  for (auto o : occluded) n += o ? 0 : 1;
  return n;
}

DiffArray warp_right_to_left(const DiffArray& image_right, const DiffArray& disparity_left) {
  require_map(disparity_left, "warp_right_to_left");
  const std::size_t h = disparity_left.dim(0), w = disparity_left.dim(1);
  require_image(image_right, h, w, "warp_right_to_left");
  const std::size_t c = image_right.dim(0);
  const DiffArray cols = reshape(match_columns(disparity_left), {1, h, w});
  std::vector<std::uint32_t> rows(c * h * w);
  for (std::size_t q = 0; q < rows.size(); ++q) rows[q] = static_cast<std::uint32_t>(q / w);
  return sample_rows(image_right, rows, concat0(std::vector<DiffArray>(c, cols)), {c, h, w});
}

OcclusionMap occlusion_from_range(const DiffArray& disparity_left) {
  require_map(disparity_left, "occlusion_from_range");
  const std::size_t h = disparity_left.dim(0), w = disparity_left.dim(1);
  auto d = disparity_left.data();
  OcclusionMap m = empty_mask(h, w);
  for (std::size_t i = 0; i < h; ++i) {
    const std::size_t row = i * w;
    for (std::size_t j = 0; j < w; ++j) {
      const double target = static_cast<double>(j) - d[row + j];
      for (std::size_t k = 0; k < w; ++k) {
        if (d[row + k] > d[row + j] && std::fabs(static_cast<double>(k) - d[row + k] - target) < 0.5) {
          m.occluded[row + j] = 1;
          break;
        }
      }
    }
  }
  return m;
}

OcclusionMap out_of_view(const DiffArray& disparity_left) {
  require_map(disparity_left, "out_of_view");
  const std::size_t h = disparity_left.dim(0), w = disparity_left.dim(1);
  auto d = disparity_left.data();
  OcclusionMap m = empty_mask(h, w);
  for (std::size_t k = 0; k < h * w; ++k) {
    const double x = static_cast<double>(k % w) - d[k];
    m.occluded[k] = (x < 0.0 || x > static_cast<double>(w - 1)) ? 1 : 0;
  }
  return m;
}

OcclusionMap loss_mask(const DiffArray& disparity_left) {
  OcclusionMap m = occlusion_from_range(disparity_left);
  const OcclusionMap v = out_of_view(disparity_left);
  for (std::size_t k = 0; k < m.occluded.size(); ++k) m.occluded[k] |= v.occluded[k];
  return m;
}

DiffArray ssim(const DiffArray& x, const DiffArray& y) {
  if (x.shape() != y.shape() || x.rank() != 3) throw ShapeError("ssim: inputs must share a [C,H,W] shape");
  const DiffArray mx = box3x3_reflect(x);
  const DiffArray my = box3x3_reflect(y);
  const DiffArray mxx = mul(mx, mx);
  const DiffArray myy = mul(my, my);
  const DiffArray mxy = mul(mx, my);
  const DiffArray sxx = sub(box3x3_reflect(mul(x, x)), mxx);
  const DiffArray syy = sub(box3x3_reflect(mul(y, y)), myy);
  const DiffArray sxy = sub(box3x3_reflect(mul(x, y)), mxy);
  const DiffArray num = mul(add_scalar(scale(mxy, 2.0), kC1), add_scalar(scale(sxy, 2.0), kC2));
  const DiffArray den = mul(add_scalar(add(mxx, myy), kC1), add_scalar(add(sxx, syy), kC2));
  return div(num, den);
}

DiffArray appearance_loss(const DiffArray& image, const DiffArray& reconstructed, const OcclusionMap& mask,
                          double alpha) {
  if (image.shape() != reconstructed.shape() || image.rank() != 3) {
    throw ShapeError("appearance_loss: images must share a [C,H,W] shape");
  }
  const auto wts = visible_weights(mask, image.dim(1), image.dim(2), "appearance_loss");
  const DiffArray dssim = scale(add_scalar(neg(ssim(image, reconstructed)), 1.0), alpha / 2.0);
  const DiffArray l1 = scale(abs(sub(image, reconstructed)), 1.0 - alpha);
  return weighted_sum(mean_axis0(add(dssim, l1)), wts);
}

DiffArray sparse_loss(const SparseDisparity& seeds, const DiffArray& disparity) {
  require_map(disparity, "sparse_loss");
  if (seeds.height != disparity.dim(0) || seeds.width != disparity.dim(1)) {
    throw ShapeError("sparse_loss: seeds and disparity differ in size");
  }
  const std::size_t m = seeds.count();
  if (m == 0) throw DegenerateMaskError("sparse_loss: no valid seeds");
  std::vector<double> wts(seeds.valid.size());
  for (std::size_t k = 0; k < wts.size(); ++k) wts[k] = seeds.valid[k] ? 1.0 / static_cast<double>(m) : 0.0;
  const DiffArray target = DiffArray::constant(disparity.shape(), seeds.values);
  return weighted_sum(abs(sub(disparity, target)), wts);
}

DiffArray lr_consistency_loss(const DiffArray& disparity_left, const DiffArray& disparity_right,
                              const OcclusionMap& mask) {
  require_map(disparity_left, "lr_consistency_loss");
  if (disparity_right.shape() != disparity_left.shape()) throw ShapeError("lr_consistency_loss: size mismatch");
  const std::size_t h = disparity_left.dim(0), w = disparity_left.dim(1);
  const auto wts = visible_weights(mask, h, w, "lr_consistency_loss");
  std::vector<std::uint32_t> rows(h * w);
  for (std::size_t q = 0; q < rows.size(); ++q) rows[q] = static_cast<std::uint32_t>(q / w);
  const DiffArray r2l = sample_rows(disparity_right, rows, match_columns(disparity_left), {h, w});
  return weighted_sum(abs(sub(r2l, disparity_left)), wts);
}

DiffArray smooth_loss(const DiffArray& disparity, const DiffArray& image, const OcclusionMap& mask) {
  require_map(disparity, "smooth_loss");
  const std::size_t h = disparity.dim(0), w = disparity.dim(1);
  require_image(image, h, w, "smooth_loss");
  const auto wts = visible_weights(mask, h, w, "smooth_loss");
  const std::size_t c = image.dim(0);
  auto im = image.data();
  auto dv = disparity.data();

  // Edge-aware weights of each stencil; 0 where the stencil does not fit.
  std::vector<double> wx(h * w, 0.0), wy(h * w, 0.0);
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j) {
      const std::size_t p = i * w + j;
      if (j > 0 && j + 1 < w) {
        double curv = 0.0;
        for (std::size_t ch = 0; ch < c; ++ch) {
          const std::size_t q = ch * h * w + p;
          curv += std::fabs(im[q - 1] - 2.0 * im[q] + im[q + 1]);
        }
        wx[p] = std::exp(-curv / static_cast<double>(c));
      }
      if (i > 0 && i + 1 < h) {
        double curv = 0.0;
        for (std::size_t ch = 0; ch < c; ++ch) {
          const std::size_t q = ch * h * w + p;
          curv += std::fabs(im[q - w] - 2.0 * im[q] + im[q + w]);
        }
        wy[p] = std::exp(-curv / static_cast<double>(c));
      }
    }

  double total = 0.0;
  for (std::size_t p = 0; p < h * w; ++p) {
    if (wts[p] == 0.0) continue;
    if (wx[p] != 0.0) total += wts[p] * wx[p] * std::fabs(dv[p - 1] - 2.0 * dv[p] + dv[p + 1]);
    if (wy[p] != 0.0) total += wts[p] * wy[p] * std::fabs(dv[p - w] - 2.0 * dv[p] + dv[p + w]);
  }

  auto dn = disparity.node();
  return Tape::record({}, {total}, {disparity},
                      [=, wts = wts, wx = std::move(wx), wy = std::move(wy)](std::span<const double> g,
                                                                              const ParentGrads& gi) {
                        const auto& dv = dn->value;
                        auto sign = [](double v) { return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0); };
                        for (std::size_t p = 0; p < h * w; ++p) {
                          if (wts[p] == 0.0) continue;
                          if (wx[p] != 0.0) {
                            const double s = g[0] * wts[p] * wx[p] * sign(dv[p - 1] - 2.0 * dv[p] + dv[p + 1]);
                            gi[0][p - 1] += s;
                            gi[0][p] -= 2.0 * s;
                            gi[0][p + 1] += s;
                          }
                          if (wy[p] != 0.0) {
                            const double s = g[0] * wts[p] * wy[p] * sign(dv[p - w] - 2.0 * dv[p] + dv[p + w]);
                            gi[0][p - w] += s;
                            gi[0][p] -= 2.0 * s;
                            gi[0][p + w] += s;
                          }
                        }
                      });
}

DiffArray side_loss(const SideTerms& t, const LossWeights& w) {
  DiffArray out = add(scale(t.appearance, w.appearance), add(scale(t.lr, w.lr), scale(t.smooth, w.smooth)));
  if (t.sparse) out = add(out, scale(*t.sparse, w.sparse));
  return out;
}

DiffArray total_loss(const SideTerms& left, const SideTerms& right, const LossWeights& w) {
  return scale(add(side_loss(left, w), side_loss(right, w)), 0.5);
}

SideTerms side_terms(const DiffArray& image_self, const DiffArray& image_other, const DiffArray& d_self,
                     const DiffArray& d_other, const SparseDisparity& loss_seeds, double alpha,
                     const OcclusionMap* fixed_mask) {
  const OcclusionMap mask = fixed_mask ? *fixed_mask : loss_mask(d_self);
  SideTerms t;
  t.appearance = appearance_loss(image_self, warp_right_to_left(image_other, d_self), mask, alpha);
  if (loss_seeds.count() > 0) t.sparse = sparse_loss(loss_seeds, d_self);
  t.lr = lr_consistency_loss(d_self, d_other, mask);
  t.smooth = smooth_loss(d_self, image_self, mask);
  return t;
}

}  // namespace stereolidar::losses
