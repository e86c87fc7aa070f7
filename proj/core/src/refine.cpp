#include "stereolidar/refine.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace stereolidar::refine {

using namespace ndgrad;

void RefineConfig::validate() const {
  if (gru_iters < 1) throw ConfigError("gru_iters must be >= 1");
  if (gru_levels < 1 || gru_levels > 3) throw ConfigError("gru_levels must be in 1..3");
  if (!(eps_norm > 0.0)) throw ConfigError("eps_norm must be positive");
}

namespace {

/// Raw 8-channel index -> 3x3 kernel channel.
constexpr std::size_t raw_to_kernel(std::size_t n) { return n < 4 ? n : n + 1; }

inline std::size_t clampi(std::ptrdiff_t v, std::size_t n) {
  return static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(v, 0, static_cast<std::ptrdiff_t>(n) - 1));
}

void require_hw(const DiffArray& a, std::size_t h, std::size_t w, const char* what) {
  if (a.rank() != 2 || a.dim(0) != h || a.dim(1) != w) {
    throw ShapeError(std::string(what) + ": expected [" + std::to_string(h) + "," + std::to_string(w) + "], got " +
                     shape_str(a.shape()));
  }
}

}  // namespace

DiffArray normalize_affinity(const features::AffinityMap& affinity, double eps) {
  const DiffArray& a = affinity.raw;
  if (a.rank() != 3 || a.dim(0) != 8) throw ShapeError("normalize_affinity: expected [8,H,W], got " + shape_str(a.shape()));
  const std::size_t hw = a.dim(1) * a.dim(2);
  auto av = a.data();
  std::vector<double> out(9 * hw);
  std::vector<double> denom(hw);
  for (std::size_t p = 0; p < hw; ++p) {
    double s = eps;
    for (std::size_t n = 0; n < 8; ++n) s += std::fabs(av[n * hw + p]);
    denom[p] = s;
    // Neighbor weights are rounded to multiples of 2^-48. Every partial sum
    // of the nine channels is then exact, so they add up to exactly 1 in any
    // order. The backward pass treats the rounding as the identity.
    double total = 0.0;
    for (std::size_t n = 0; n < 8; ++n) {
      const double v = std::ldexp(std::nearbyint(std::ldexp(av[n * hw + p] / s, 48)), -48);
      out[raw_to_kernel(n) * hw + p] = v;
      total += v;
    }
    out[kCenterChannel * hw + p] = 1.0 - total;
  }
  auto an = a.node();
  return Tape::record({9, a.dim(1), a.dim(2)}, std::move(out), {a},
                      [an, hw, denom = std::move(denom)](std::span<const double> g, const ParentGrads& gi) {
                        const auto& av = an->value;
                        for (std::size_t p = 0; p < hw; ++p) {
                          const double gc = g[kCenterChannel * hw + p];
                          const double d = denom[p];
                          double dot = 0.0;  // Σ_n (g_n − g_c)·A_n
                          for (std::size_t n = 0; n < 8; ++n) dot += (g[raw_to_kernel(n) * hw + p] - gc) * av[n * hw + p];
                          for (std::size_t n = 0; n < 8; ++n) {
                            const double x = av[n * hw + p];
                            const double sign = x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0);
                            gi[0][n * hw + p] += (g[raw_to_kernel(n) * hw + p] - gc) / d - sign * dot / (d * d);
                          }
                        }
                      });
}

DiffArray cspn_step(const DiffArray& kernel, const DiffArray& d0, const DiffArray& dt) {
  if (kernel.rank() != 3 || kernel.dim(0) != 9) throw ShapeError("cspn_step: kernel must be [9,H,W]");
  const std::size_t h = kernel.dim(1), w = kernel.dim(2), hw = h * w;
  require_hw(d0, h, w, "cspn_step d0");
  require_hw(dt, h, w, "cspn_step dt");
  auto kv = kernel.data();
  auto v0 = d0.data();
  auto vt = dt.data();
  std::vector<double> out(hw);
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j) {
      const std::size_t p = i * w + j;
      double acc = 0.0;
      for (int a = -1; a <= 1; ++a)
        for (int b = -1; b <= 1; ++b) {
          if (a == 0 && b == 0) continue;
          const std::size_t q = clampi(static_cast<std::ptrdiff_t>(i) + a, h) * w + clampi(static_cast<std::ptrdiff_t>(j) + b, w);
          acc += kv[kernel_channel(a, b) * hw + p] * (vt[q] - v0[p]);
        }
      out[p] = v0[p] + acc;
    }
  auto kn = kernel.node();
  auto n0 = d0.node();
  auto nt = dt.node();
  return Tape::record({h, w}, std::move(out), {kernel, d0, dt}, [=](std::span<const double> g, const ParentGrads& gi) {
    const auto& kv = kn->value;
    const auto& v0 = n0->value;
    const auto& vt = nt->value;
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 0; j < w; ++j) {
        const std::size_t p = i * w + j;
        double ksum = 0.0;
        for (int a = -1; a <= 1; ++a)
          for (int b = -1; b <= 1; ++b) {
            if (a == 0 && b == 0) continue;
            const std::size_t c = kernel_channel(a, b);
            const std::size_t q = clampi(static_cast<std::ptrdiff_t>(i) + a, h) * w + clampi(static_cast<std::ptrdiff_t>(j) + b, w);
            ksum += kv[c * hw + p];
            if (!gi[0].empty()) gi[0][c * hw + p] += g[p] * (vt[q] - v0[p]);
            if (!gi[2].empty()) gi[2][q] += g[p] * kv[c * hw + p];
          }
        if (!gi[1].empty()) gi[1][p] += g[p] * (1.0 - ksum);
      }
  });
}

DiffArray anchor(const DiffArray& d, const SparseDisparity& sparse) {
  require_hw(d, sparse.height, sparse.width, "anchor");
  return overwrite(d, sparse.valid, sparse.values);
}

DiffArray cspn_propagate(const DiffArray& d_in, const DiffArray& kernel, const SparseDisparity* sparse,
                         std::size_t t_max) {
  DiffArray d = d_in;
  for (std::size_t t = 0; t < t_max; ++t) {
    d = cspn_step(kernel, d_in, d);
    if (sparse) d = anchor(d, *sparse);
  }
  return d;
}

SparseDisparity project_sparse(const SparseDisparity& full, std::size_t s) {
  if (s == 0 || full.height % s != 0 || full.width % s != 0) {
    throw ShapeError("project_sparse: " + std::to_string(full.height) + "x" + std::to_string(full.width) +
                     " is not divisible by " + std::to_string(s));
  }
  const std::size_t h = full.height / s, w = full.width / s;
  std::vector<double> sum(h * w, 0.0);
  std::vector<std::size_t> cnt(h * w, 0);
  for (std::size_t i = 0; i < full.height; ++i)
    for (std::size_t j = 0; j < full.width; ++j) {
      const std::size_t k = i * full.width + j;
      if (!full.valid[k]) continue;
      const std::size_t c = (i / s) * w + j / s;
      sum[c] += full.values[k];
      ++cnt[c];
    }
  SparseDisparity out = SparseDisparity::empty(h, w);
  for (std::size_t c = 0; c < h * w; ++c)
    if (cnt[c]) {
      out.valid[c] = 1;
      out.values[c] = sum[c] / static_cast<double>(cnt[c]) / static_cast<double>(s);
    }
  return out;
}

DiffArray convex_upsample(const DiffArray& d, const DiffArray& mask_logits, std::size_t s) {
  if (d.rank() != 2) throw ShapeError("convex_upsample: disparity must be [H,W]");
  const std::size_t h = d.dim(0), w = d.dim(1), hw = h * w, ss = s * s;
  if (mask_logits.rank() != 3 || mask_logits.dim(0) != 9 * ss || mask_logits.dim(1) != h || mask_logits.dim(2) != w) {
    throw ShapeError("convex_upsample: mask must be [" + std::to_string(9 * ss) + "," + std::to_string(h) + "," +
                     std::to_string(w) + "], got " + shape_str(mask_logits.shape()));
  }
  const std::size_t fh = h * s, fw = w * s;
  auto dv = d.data();
  auto mv = mask_logits.data();
  const double fs = static_cast<double>(s);
  std::vector<double> out(fh * fw);
  // Softmax weights, saved for backward: weights[(n·ss + u·s + v)·hw + p].
  auto weights = std::make_shared<std::vector<double>>(9 * ss * hw);
  std::vector<std::size_t> nbr(9 * hw);
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j)
      for (int a = -1; a <= 1; ++a)
        for (int b = -1; b <= 1; ++b)
          nbr[kernel_channel(a, b) * hw + i * w + j] =
              clampi(static_cast<std::ptrdiff_t>(i) + a, h) * w + clampi(static_cast<std::ptrdiff_t>(j) + b, w);
  for (std::size_t p = 0; p < hw; ++p) {
    const std::size_t i = p / w, j = p % w;
    for (std::size_t sub = 0; sub < ss; ++sub) {
      double m = -std::numeric_limits<double>::infinity();
      for (std::size_t n = 0; n < 9; ++n) m = std::max(m, mv[(n * ss + sub) * hw + p]);
      double z = 0.0;
      for (std::size_t n = 0; n < 9; ++n) z += ((*weights)[(n * ss + sub) * hw + p] = std::exp(mv[(n * ss + sub) * hw + p] - m));
      double acc = 0.0, lo = dv[nbr[p]], hi = lo;
      for (std::size_t n = 0; n < 9; ++n) {
        double& wt = (*weights)[(n * ss + sub) * hw + p];
        wt /= z;
        const double dn = dv[nbr[n * hw + p]];
        acc += wt * dn;
        lo = std::min(lo, dn);
        hi = std::max(hi, dn);
      }
      // Rounding can leave the weighted sum an ulp outside the neighbor range.
      const std::size_t u = sub / s, v = sub % s;
      out[(i * s + u) * fw + j * s + v] = fs * std::clamp(acc, lo, hi);
    }
  }
  auto dn = d.node();
  return Tape::record({fh, fw}, std::move(out), {d, mask_logits},
                      [=, nbr = std::move(nbr)](std::span<const double> g, const ParentGrads& gi) {
                        const auto& dv = dn->value;
                        const auto& wts = *weights;
                        for (std::size_t p = 0; p < hw; ++p) {
                          const std::size_t i = p / w, j = p % w;
                          for (std::size_t sub = 0; sub < ss; ++sub) {
                            const std::size_t u = sub / s, v = sub % s;
                            const double go = g[(i * s + u) * fw + j * s + v] * fs;
                            double mean = 0.0;
                            for (std::size_t n = 0; n < 9; ++n) mean += wts[(n * ss + sub) * hw + p] * dv[nbr[n * hw + p]];
                            for (std::size_t n = 0; n < 9; ++n) {
                              const double wt = wts[(n * ss + sub) * hw + p];
                              if (!gi[0].empty()) gi[0][nbr[n * hw + p]] += go * wt;
                              if (!gi[1].empty()) gi[1][(n * ss + sub) * hw + p] += go * wt * (dv[nbr[n * hw + p]] - mean);
                            }
                          }
                        }
                      });
}

DiffArray ConvGru::operator()(const BoundParams& p, const DiffArray& h, const DiffArray& x) const {
  const DiffArray hx = concat0({h, x});
  const DiffArray zg = sigmoid(z(p, hx));
  const DiffArray rg = sigmoid(r(p, hx));
  const DiffArray cand = tanh(q(p, concat0({mul(rg, h), x})));
  return add(h, mul(zg, sub(cand, h)));
}

UpdateNet UpdateNet::create(ParamStore& store, std::size_t lookup_channels, std::size_t context_channels,
                            std::size_t hidden_channels, std::size_t levels, std::size_t upsample,
                            std::mt19937_64& rng) {
  if (levels < 1 || levels > 3) throw ConfigError("gru_levels must be in 1..3");
  UpdateNet n;
  const std::size_t ch = hidden_channels;
  n.hidden_channels = ch;
  n.upsample = upsample;
  n.levels = levels;
  n.corr_conv = make_conv(store, "update.motion.corr", lookup_channels, ch, 1, 1, rng);
  n.disp_conv = make_conv(store, "update.motion.disp", 1, 8, 3, 1, rng);
  n.mix_conv = make_conv(store, "update.motion.mix", ch + 8, ch - 1, 3, 1, rng);
  for (std::size_t l = 0; l < levels; ++l) {
    // hidden, motion features (or pooled finer state), context, upsampled coarser state
    const std::size_t in = 2 * ch + context_channels + ((l + 1 < levels) ? ch : 0);
    const std::string name = "update.gru" + std::to_string(l);
    ConvGru gru;
    gru.z = make_conv(store, name + ".z", in, ch, 3, 1, rng);
    gru.r = make_conv(store, name + ".r", in, ch, 3, 1, rng);
    gru.q = make_conv(store, name + ".q", in, ch, 3, 1, rng);
    n.grus.push_back(gru);
  }
  n.delta_a = make_conv(store, "update.delta.a", ch, ch, 3, 1, rng);
  n.delta_b = make_conv(store, "update.delta.b", ch, 1, 3, 1, rng);
  n.mask_a = make_conv(store, "update.mask.a", ch, ch, 3, 1, rng);
  n.mask_b = make_conv(store, "update.mask.b", ch, 9 * upsample * upsample, 1, 1, rng);
  return n;
}

DiffArray UpdateNet::mask(const BoundParams& p, const DiffArray& hidden) const {
  return scale(mask_b(p, relu(mask_a(p, hidden))), 0.25);
}

GruResult gru_update(const UpdateNet& net, const BoundParams& p, const DisparityState& state,
                     const DiffArray& lookup_feats, const std::vector<DiffArray>& context) {
  if (state.hidden.size() != net.levels || context.size() != net.levels) {
    throw ShapeError("gru_update: expected " + std::to_string(net.levels) + " hidden/context levels");
  }
  const std::size_t h = state.d.dim(0), w = state.d.dim(1);
  const DiffArray d3 = reshape(state.d, {1, h, w});
  const DiffArray cor = relu(net.corr_conv(p, lookup_feats));
  const DiffArray dis = relu(net.disp_conv(p, d3));
  const DiffArray motion = concat0({relu(net.mix_conv(p, concat0({cor, dis}))), d3});

  std::vector<DiffArray> hid = state.hidden;
  // Coarsest level first, each finer level sees the freshly updated coarser state.
  for (std::size_t l = net.levels; l-- > 0;) {
    std::vector<DiffArray> x;
    x.push_back(l == 0 ? motion : avgpool2x2(hid[l - 1]));
    x.push_back(context[l]);
    if (l + 1 < net.levels) x.push_back(upsample_nearest(hid[l + 1], hid[l].dim(1), hid[l].dim(2)));
    hid[l] = net.grus[l](p, hid[l], concat0(x));
  }
  GruResult res;
  res.delta = reshape(net.delta_b(p, relu(net.delta_a(p, hid[0]))), {h, w});
  res.hidden = std::move(hid);
  return res;
}

RefineOutput iterate(const UpdateNet& net, const BoundParams& p, const features::FeatureMaps& feats,
                     const features::ContextBundle& ctx, const SparseDisparity& sparse, const RefineConfig& cfg,
                     const correlation::LookupConfig& lookup_cfg, bool upsample_all) {
  cfg.validate();
  const std::size_t h = feats.left.dim(1), w = feats.left.dim(2);
  if (ctx.context.dim(1) != h || ctx.context.dim(2) != w) throw ShapeError("iterate: context resolution mismatch");
  if (cfg.use_sparse && (sparse.height != h || sparse.width != w)) {
    throw ShapeError("iterate: sparse seeds must be at the coarse resolution");
  }

  const auto pyr = correlation::build_pyramid(correlation::build_correlation(feats.left, feats.right), lookup_cfg);
  const SparseDisparity* seeds = cfg.use_sparse ? &sparse : nullptr;
  DiffArray kernel;
  if (cfg.use_cspn) kernel = normalize_affinity(ctx.affinity, cfg.eps_norm);

  std::vector<DiffArray> context{ctx.context};
  DisparityState state;
  state.hidden.push_back(ctx.hidden_init);
  for (std::size_t l = 1; l < net.levels; ++l) {
    context.push_back(avgpool2x2(context.back()));
    state.hidden.push_back(avgpool2x2(state.hidden.back()));
  }

  auto settle = [&](DiffArray d) {
    if (cfg.use_cspn) return cspn_propagate(d, kernel, seeds, cfg.cspn_iters);
    return seeds ? anchor(d, *seeds) : d;
  };

  RefineOutput out;
  state.d = DiffArray::zeros({h, w});
  if (seeds) state.d = anchor(state.d, *seeds);
  if (cfg.use_cspn) state.d = settle(state.d);
  out.coarse.push_back(state.d);
  if (upsample_all) out.upsampled.push_back(convex_upsample(state.d, net.mask(p, state.hidden[0]), net.upsample));

  for (std::size_t k = 1; k <= cfg.gru_iters; ++k) {
    const DiffArray feats_k = correlation::lookup(pyr, state.d, lookup_cfg);
    GruResult g = gru_update(net, p, state, feats_k, context);
    state.hidden = std::move(g.hidden);
    state.d = settle(add(state.d, g.delta));
    state.iteration = k;
    out.coarse.push_back(state.d);
    if (upsample_all) out.upsampled.push_back(convex_upsample(state.d, net.mask(p, state.hidden[0]), net.upsample));
  }
  if (!upsample_all) out.upsampled.push_back(convex_upsample(state.d, net.mask(p, state.hidden[0]), net.upsample));
  return out;
}

}  // namespace stereolidar::refine
