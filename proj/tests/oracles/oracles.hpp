#pragma once

// Brute-force reference implementations on flat row-major buffers. They are
// written directly from the operation definitions with plain loops and share
// no code with the library.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <vector>

namespace oracle {

using Vec = std::vector<double>;

/// Clamped linear interpolation of row[0..n) at x.
inline double lerp(const double* row, std::size_t n, double x) {
  if (n == 1) return row[0];
  if (x <= 0.0) return row[0];
  const double last = static_cast<double>(n - 1);
  if (x >= last) return row[n - 1];
  const double f = std::floor(x);
  const std::size_t a = static_cast<std::size_t>(f);
  const double t = x - f;
  return (1.0 - t) * row[a] + t * row[a + 1];
}

/// corr[i][j][k] = Σ_c L[c][i][j] · R[c][i][k]; inputs [C,H,W], output [H,W,W].
inline Vec correlation(const Vec& l, const Vec& r, std::size_t c, std::size_t h, std::size_t w) {
  Vec out(h * w * w, 0.0);
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j)
      for (std::size_t k = 0; k < w; ++k) {
        double s = 0.0;
        for (std::size_t ch = 0; ch < c; ++ch) s += l[(ch * h + i) * w + j] * r[(ch * h + i) * w + k];
        out[(i * w + j) * w + k] = s;
      }
  return out;
}

/// Pyramid levels of an [H,W,W] volume: the last axis is edge-padded to a
/// multiple of 2^(levels-1), then halved by pairwise means per level.
inline std::vector<Vec> pyramid(const Vec& corr, std::size_t h, std::size_t w, std::size_t levels,
                                std::vector<std::size_t>& widths) {
  const std::size_t m = std::size_t{1} << (levels - 1);
  std::size_t wp = w;
  while (wp % m != 0) ++wp;
  std::vector<Vec> out;
  Vec base(h * w * wp);
  for (std::size_t p = 0; p < h * w; ++p)
    for (std::size_t k = 0; k < wp; ++k) base[p * wp + k] = corr[p * w + std::min(k, w - 1)];
  out.push_back(base);
  widths = {wp};
  for (std::size_t lev = 1; lev < levels; ++lev) {
    const std::size_t wi = widths.back(), wo = wi / 2;
    const Vec& prev = out.back();
    Vec next(h * w * wo);
    for (std::size_t p = 0; p < h * w; ++p)
      for (std::size_t k = 0; k < wo; ++k) next[p * wo + k] = 0.5 * (prev[p * wi + 2 * k] + prev[p * wi + 2 * k + 1]);
    out.push_back(next);
    widths.push_back(wo);
  }
  return out;
}

/// out[lev·(2r+1) + t, i, j] = level_lev[i, j, (j − d)/2^lev + (t − r)].
inline Vec lookup(const std::vector<Vec>& levels, const std::vector<std::size_t>& widths, const Vec& d,
                  std::size_t h, std::size_t w, std::size_t radius) {
  const std::size_t taps = 2 * radius + 1;
  Vec out(levels.size() * taps * h * w);
  for (std::size_t lev = 0; lev < levels.size(); ++lev)
    for (std::size_t t = 0; t < taps; ++t)
      for (std::size_t i = 0; i < h; ++i)
        for (std::size_t j = 0; j < w; ++j) {
          const double x = (static_cast<double>(j) - d[i * w + j]) / std::pow(2.0, static_cast<double>(lev)) +
                           (static_cast<double>(t) - static_cast<double>(radius));
          out[((lev * taps + t) * h + i) * w + j] = lerp(&levels[lev][(i * w + j) * widths[lev]], widths[lev], x);
        }
  return out;
}

/// Offsets of the 8 raw affinity channels, row-major around the center.
inline constexpr int kOffsets[8][2] = {{-1, -1}, {-1, 0}, {-1, 1}, {0, -1}, {0, 1}, {1, -1}, {1, 0}, {1, 1}};

/// raw [8,H,W] → kernel [9,H,W]: neighbors raw/(Σ|raw|+eps) at channel
/// (a+1)·3+(b+1), center 1 − Σ neighbors at channel 4.
inline Vec affinity(const Vec& raw, std::size_t h, std::size_t w, double eps) {
  const std::size_t hw = h * w;
  Vec k(9 * hw, 0.0);
  for (std::size_t p = 0; p < hw; ++p) {
    double norm = eps;
    for (std::size_t n = 0; n < 8; ++n) norm += std::fabs(raw[n * hw + p]);
    double sum = 0.0;
    for (std::size_t n = 0; n < 8; ++n) {
      const double a = raw[n * hw + p] / norm;
      k[static_cast<std::size_t>((kOffsets[n][0] + 1) * 3 + kOffsets[n][1] + 1) * hw + p] = a;
      sum += a;
    }
    k[4 * hw + p] = 1.0 - sum;
  }
  return k;
}

inline std::size_t clampi(long v, std::size_t n) {
  return static_cast<std::size_t>(std::clamp<long>(v, 0, static_cast<long>(n) - 1));
}

/// One step: center·d0(p) + Σ_n kernel_n(p)·dt(p+n), replicate edges.
inline Vec cspn_step(const Vec& kernel, const Vec& d0, const Vec& dt, std::size_t h, std::size_t w) {
  const std::size_t hw = h * w;
  Vec out(hw);
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j) {
      const std::size_t p = i * w + j;
      double v = kernel[4 * hw + p] * d0[p];
      for (int a = -1; a <= 1; ++a)
        for (int b = -1; b <= 1; ++b) {
          if (a == 0 && b == 0) continue;
          const std::size_t q = clampi(static_cast<long>(i) + a, h) * w + clampi(static_cast<long>(j) + b, w);
          v += kernel[static_cast<std::size_t>((a + 1) * 3 + b + 1) * hw + p] * dt[q];
        }
      out[p] = v;
    }
  return out;
}

/// t steps from d_in, re-imposing `values` where `valid` after every step.
inline Vec cspn(const Vec& kernel, const Vec& d_in, const std::vector<std::uint8_t>& valid, const Vec& values,
                std::size_t h, std::size_t w, std::size_t t) {
  Vec d = d_in;
  for (std::size_t step = 0; step < t; ++step) {
    d = cspn_step(kernel, d_in, d, h, w);
    for (std::size_t p = 0; p < h * w; ++p)
      if (valid[p]) d[p] = values[p];
  }
  return d;
}

/// fine[(i·s+u)·W·s + j·s+v] = s · Σ_n softmax_n(mask[n·s²+u·s+v, i, j]) · d(clamp(i+a), clamp(j+b)).
inline Vec convex_upsample(const Vec& d, const Vec& mask, std::size_t h, std::size_t w, std::size_t s) {
  const std::size_t hw = h * w, ss = s * s;
  Vec out(hw * ss);
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j)
      for (std::size_t u = 0; u < s; ++u)
        for (std::size_t v = 0; v < s; ++v) {
          double m = -1e300;
          for (std::size_t n = 0; n < 9; ++n) m = std::max(m, mask[(n * ss + u * s + v) * hw + i * w + j]);
          double z = 0.0, acc = 0.0;
          for (std::size_t n = 0; n < 9; ++n) {
            const int a = static_cast<int>(n / 3) - 1, b = static_cast<int>(n % 3) - 1;
            const double e = std::exp(mask[(n * ss + u * s + v) * hw + i * w + j] - m);
            z += e;
            acc += e * d[clampi(static_cast<long>(i) + a, h) * w + clampi(static_cast<long>(j) + b, w)];
          }
          out[(i * s + u) * (w * s) + j * s + v] = static_cast<double>(s) * acc / z;
        }
  return out;
}

/// warped[c,i,j] = right[c,i, j − d(i,j)] with clamped linear interpolation.
inline Vec warp(const Vec& right, const Vec& d, std::size_t c, std::size_t h, std::size_t w) {
  Vec out(c * h * w);
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 0; j < w; ++j)
        out[(ch * h + i) * w + j] = lerp(&right[(ch * h + i) * w], w, static_cast<double>(j) - d[i * w + j]);
  return out;
}

/// Mirror index without repeating the edge: −1 → 1, n → n−2.
inline std::size_t reflect(long i, std::size_t n) {
  if (n == 1) return 0;
  if (i < 0) return static_cast<std::size_t>(-i);
  if (i >= static_cast<long>(n)) return static_cast<std::size_t>(2 * static_cast<long>(n) - 2 - i);
  return static_cast<std::size_t>(i);
}

/// SSIM over 3x3 reflect-padded windows with C1 = 0.01², C2 = 0.03².
inline Vec ssim(const Vec& x, const Vec& y, std::size_t c, std::size_t h, std::size_t w) {
  const double c1 = 1e-4, c2 = 9e-4;
  Vec out(c * h * w);
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 0; j < w; ++j) {
        double mx = 0, my = 0, mxx = 0, myy = 0, mxy = 0;
        for (long a = -1; a <= 1; ++a)
          for (long b = -1; b <= 1; ++b) {
            const std::size_t q = (ch * h + reflect(static_cast<long>(i) + a, h)) * w + reflect(static_cast<long>(j) + b, w);
            mx += x[q];
            my += y[q];
            mxx += x[q] * x[q];
            myy += y[q] * y[q];
            mxy += x[q] * y[q];
          }
        mx /= 9;
        my /= 9;
        const double vx = mxx / 9 - mx * mx, vy = myy / 9 - my * my, cxy = mxy / 9 - mx * my;
        out[(ch * h + i) * w + j] =
            ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
      }
  return out;
}

/// Mean over unmasked pixels of the channel mean of α(1−SSIM)/2 + (1−α)|I−Î|.
inline double appearance(const Vec& img, const Vec& rec, const std::vector<std::uint8_t>& masked, std::size_t c,
                         std::size_t h, std::size_t w, double alpha) {
  const Vec s = ssim(img, rec, c, h, w);
  double total = 0.0;
  std::size_t n = 0;
  for (std::size_t p = 0; p < h * w; ++p) {
    if (masked[p]) continue;
    double v = 0.0;
    for (std::size_t ch = 0; ch < c; ++ch) {
      const std::size_t q = ch * h * w + p;
      v += alpha * (1.0 - s[q]) / 2.0 + (1.0 - alpha) * std::fabs(img[q] - rec[q]);
    }
    total += v / static_cast<double>(c);
    ++n;
  }
  return total / static_cast<double>(n);
}

/// Mean |seed − d| over seeded pixels.
inline double sparse(const Vec& seeds, const std::vector<std::uint8_t>& valid, const Vec& d) {
  double total = 0.0;
  std::size_t n = 0;
  for (std::size_t p = 0; p < d.size(); ++p)
    if (valid[p]) {
      total += std::fabs(seeds[p] - d[p]);
      ++n;
    }
  return total / static_cast<double>(n);
}

/// Mean over unmasked pixels of |d_r(i, j − d_l(i,j)) − d_l(i,j)|.
inline double lr_consistency(const Vec& dl, const Vec& dr, const std::vector<std::uint8_t>& masked, std::size_t h,
                             std::size_t w) {
  double total = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j) {
      const std::size_t p = i * w + j;
      if (masked[p]) continue;
      total += std::fabs(lerp(&dr[i * w], w, static_cast<double>(j) - dl[p]) - dl[p]);
      ++n;
    }
  return total / static_cast<double>(n);
}

/// Σ over unmasked pixels of |∂²_x d|·e^{−mean_c|∂²_x I|} + |∂²_y d|·e^{−mean_c|∂²_y I|}
/// (each stencil only where both neighbors exist), divided by the unmasked count.
inline double smooth(const Vec& d, const Vec& img, const std::vector<std::uint8_t>& masked, std::size_t c,
                     std::size_t h, std::size_t w) {
  double total = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j) {
      const std::size_t p = i * w + j;
      if (masked[p]) continue;
      ++n;
      if (j >= 1 && j + 1 < w) {
        double ci = 0.0;
        for (std::size_t ch = 0; ch < c; ++ch) {
          const double* row = &img[(ch * h + i) * w];
          ci += std::fabs(row[j - 1] - 2 * row[j] + row[j + 1]);
        }
        total += std::fabs(d[p - 1] - 2 * d[p] + d[p + 1]) * std::exp(-ci / static_cast<double>(c));
      }
      if (i >= 1 && i + 1 < h) {
        double ci = 0.0;
        for (std::size_t ch = 0; ch < c; ++ch) {
          const double* plane = &img[ch * h * w];
          ci += std::fabs(plane[p - w] - 2 * plane[p] + plane[p + w]);
        }
        total += std::fabs(d[p - w] - 2 * d[p] + d[p + w]) * std::exp(-ci / static_cast<double>(c));
      }
    }
  return total / static_cast<double>(n);
}

struct MetricValues {
  double epe, d1, rmse, mae, irmse, imae;
};

/// EPE/D1 on disparity; depth f·B/d in meters reported in mm; inverse depth
/// reported in 1/km. Predictions below `min_disp` are raised to it.
inline MetricValues metrics(const Vec& pred, const Vec& gt, const std::vector<std::uint8_t>& valid, double f,
                            double baseline, double min_disp) {
  double epe = 0, out = 0, se = 0, ae = 0, ise = 0, iae = 0;
  std::size_t n = 0;
  for (std::size_t p = 0; p < gt.size(); ++p) {
    if (!valid[p]) continue;
    ++n;
    const double e = std::fabs(pred[p] - gt[p]);
    epe += e;
    if (e > 1.0) out += 1;
    const double dp = std::max(pred[p], min_disp);
    const double zp_mm = f * baseline / dp * 1000.0, zg_mm = f * baseline / gt[p] * 1000.0;
    se += (zp_mm - zg_mm) * (zp_mm - zg_mm);
    ae += std::fabs(zp_mm - zg_mm);
    const double ip = 1000.0 / (f * baseline / dp), ig = 1000.0 / (f * baseline / gt[p]);
    ise += (ip - ig) * (ip - ig);
    iae += std::fabs(ip - ig);
  }
  const double dn = static_cast<double>(n);
  return {epe / dn, 100.0 * out / dn, std::sqrt(se / dn), ae / dn, std::sqrt(ise / dn), iae / dn};
}

}  // namespace oracle
