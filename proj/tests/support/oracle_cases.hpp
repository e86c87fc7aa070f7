#pragma once

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "helpers.hpp"
#include "oracles.hpp"
#include "stereolidar/correlation.hpp"
#include "stereolidar/losses.hpp"
#include "stereolidar/refine.hpp"

namespace testing_support {

/// Largest |implementation − oracle| of one quantity on one random instance.
struct Discrepancy {
  std::string name;
  double max_abs = 0.0;
};

/// Random C×H×W features (H, W ≤ 8) through the correlation volume, the
/// pyramid and a lookup at random fractional disparities.
inline std::vector<Discrepancy> correlation_case(std::uint64_t seed) {
  using namespace stereolidar::correlation;
  using stereolidar::ndgrad::DiffArray;
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> dim(1, 8), ch(1, 5), lev(1, 3), rad(1, 3);
  const std::size_t c = ch(rng), h = dim(rng), w = dim(rng);
  const LookupConfig cfg{rad(rng), lev(rng)};
  const auto lv = uniform(rng, c * h * w, -1, 1), rv = uniform(rng, c * h * w, -1, 1);

  std::vector<Discrepancy> out;
  const auto corr = build_correlation(DiffArray::constant({c, h, w}, lv), DiffArray::constant({c, h, w}, rv));
  const auto ref = oracle::correlation(lv, rv, c, h, w);
  out.push_back({"correlation", max_abs_diff(to_vec(corr), ref)});

  std::vector<std::size_t> widths;
  const auto ref_levels = oracle::pyramid(ref, h, w, cfg.levels, widths);
  const auto pyr = build_pyramid(corr, cfg);
  double pool = pyr.levels.size() == cfg.levels ? 0.0 : INFINITY;
  for (std::size_t k = 0; k < std::min(cfg.levels, pyr.levels.size()); ++k)
    pool = std::max(pool, max_abs_diff(to_vec(pyr.levels[k]), ref_levels[k]));
  out.push_back({"pyramid", pool});

  const auto d = uniform(rng, h * w, -2.0, static_cast<double>(w) + 2.0);
  const auto got = lookup(pyr, DiffArray::constant({h, w}, d), cfg);
  out.push_back({"lookup", max_abs_diff(to_vec(got), oracle::lookup(ref_levels, widths, d, h, w, cfg.radius))});
  return out;
}

/// Affinity normalization, one propagation step, anchored multi-step
/// propagation and convex upsampling on a random H×W field.
inline std::vector<Discrepancy> refine_case(std::uint64_t seed) {
  using namespace stereolidar::refine;
  using stereolidar::ndgrad::DiffArray;
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> dim(1, 8), steps(1, 6), up(1, 4);
  const std::size_t h = dim(rng), w = dim(rng), hw = h * w;
  const auto raw = uniform(rng, 8 * hw, -1, 1);

  std::vector<Discrepancy> out;
  const auto kernel = normalize_affinity({DiffArray::constant({8, h, w}, raw)}, 1e-8);
  const auto kref = oracle::affinity(raw, h, w, 1e-8);
  out.push_back({"affinity", max_abs_diff(to_vec(kernel), kref)});

  const auto d_in = uniform(rng, hw, 0, 5);
  const auto d_t = uniform(rng, hw, 0, 5);
  const auto step = cspn_step(kernel, DiffArray::constant({h, w}, d_in), DiffArray::constant({h, w}, d_t));
  out.push_back({"cspn_step", max_abs_diff(to_vec(step), oracle::cspn_step(kref, d_in, d_t, h, w))});

  const auto sp = random_seeds(rng, h, w, hw / 4, 0.5, 5);
  const std::size_t t = steps(rng);
  const auto prop = cspn_propagate(DiffArray::constant({h, w}, d_in), kernel, &sp, t);
  out.push_back({"cspn_propagate", max_abs_diff(to_vec(prop), oracle::cspn(kref, d_in, sp.valid, sp.values, h, w, t))});

  const std::size_t s = up(rng);
  const auto mask = uniform(rng, 9 * s * s * hw, -3, 3);
  const auto fine = convex_upsample(DiffArray::constant({h, w}, d_in), DiffArray::constant({9 * s * s, h, w}, mask), s);
  out.push_back({"convex_upsample", max_abs_diff(to_vec(fine), oracle::convex_upsample(d_in, mask, h, w, s))});
  return out;
}

/// Warping, SSIM and the four loss terms on random images, disparities and
/// occlusion masks.
inline std::vector<Discrepancy> loss_case(std::uint64_t seed) {
  using namespace stereolidar::losses;
  using stereolidar::ndgrad::DiffArray;
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> dim(1, 8);
  const std::size_t c = 3, h = dim(rng), w = dim(rng), hw = h * w;
  const auto left = uniform(rng, c * hw, 0, 1), right = uniform(rng, c * hw, 0, 1);
  const auto dl = uniform(rng, hw, -1.0, static_cast<double>(w));
  const auto dr = uniform(rng, hw, -1.0, static_cast<double>(w));
  OcclusionMap mask{h, w, std::vector<std::uint8_t>(hw, 0)};
  std::bernoulli_distribution occ(0.25);
  for (auto& o : mask.occluded) o = occ(rng) ? 1 : 0;
  mask.occluded[0] = 0;
  const auto L = DiffArray::constant({c, h, w}, left), R = DiffArray::constant({c, h, w}, right);
  const auto DL = DiffArray::constant({h, w}, dl), DR = DiffArray::constant({h, w}, dr);
  auto scalar = [](const std::string& name, double got, double want) {
    return Discrepancy{name, std::fabs(got - want)};
  };

  std::vector<Discrepancy> out;
  const auto warped = warp_right_to_left(R, DL);
  const auto warped_ref = oracle::warp(right, dl, c, h, w);
  out.push_back({"warp", max_abs_diff(to_vec(warped), warped_ref)});
  out.push_back({"ssim", max_abs_diff(to_vec(ssim(L, R)), oracle::ssim(left, right, c, h, w))});
  out.push_back(scalar("appearance", appearance_loss(L, warped, mask, 0.85).item(),
                       oracle::appearance(left, warped_ref, mask.occluded, c, h, w, 0.85)));
  const auto seeds = random_seeds(rng, h, w, hw / 3 + 1, 0.5, 6.0);
  out.push_back(scalar("sparse", sparse_loss(seeds, DL).item(), oracle::sparse(seeds.values, seeds.valid, dl)));
  out.push_back(scalar("lr_consistency", lr_consistency_loss(DL, DR, mask).item(),
                       oracle::lr_consistency(dl, dr, mask.occluded, h, w)));
  out.push_back(scalar("smooth", smooth_loss(DL, L, mask).item(), oracle::smooth(dl, left, mask.occluded, c, h, w)));
  return out;
}

}  // namespace testing_support
