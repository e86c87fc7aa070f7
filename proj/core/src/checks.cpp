#include "stereolidar/checks.hpp"

#include <cmath>
#include <random>

#include "stereolidar/correlation.hpp"
#include "stereolidar/losses.hpp"
#include "stereolidar/refine.hpp"
#include "stereolidar/train.hpp"

namespace stereolidar::checks {

using namespace ndgrad;

namespace {

std::vector<double> uniform(std::mt19937_64& rng, std::size_t n, double lo, double hi) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> v(n);
  for (auto& x : v) x = dist(rng);
  return v;
}

std::vector<double> signed_away_from_zero(std::mt19937_64& rng, std::size_t n) {
  auto v = uniform(rng, n, 0.1, 2.0);
  std::bernoulli_distribution flip(0.5);
  for (auto& x : v)
    if (flip(rng)) x = -x;
  return v;
}

/// Disparities d such that j − d has a fractional part in (0.1, 0.9) and stays
/// inside [lo, hi], so no sampling kink is straddled.
std::vector<double> offgrid_disparity(std::mt19937_64& rng, std::size_t h, std::size_t w, double lo, double hi) {
  std::uniform_real_distribution<double> frac(0.1, 0.9);
  std::vector<double> d(h * w);
  for (std::size_t k = 0; k < d.size(); ++k) {
    const double j = static_cast<double>(k % w);
    const double target = std::clamp(j - std::uniform_real_distribution<double>(lo, hi)(rng), 0.0,
                                      static_cast<double>(w) - 1.0);
    const double x = std::min(std::floor(target), static_cast<double>(w) - 2.0) + frac(rng);
    d[k] = j - x;
  }
  return d;
}

DiffArray project(const DiffArray& out, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return weighted_sum(out, uniform(rng, out.size(), -1.0, 1.0));
}

}  // namespace

std::vector<OpCheck> check_modules(std::uint64_t seed, const GradCheckOptions& options) {
  std::vector<OpCheck> checks;
  std::mt19937_64 rng(seed);
  auto run = [&](const std::string& name, const std::vector<GradCheckInput>& inputs,
                 const std::function<DiffArray(const std::vector<DiffArray>&)>& op) {
    const std::uint64_t proj_seed = rng();
    GradCheckOptions opt = options;
    opt.seed = rng();
    checks.push_back(
        {name, check_gradients([&](Tape&, const std::vector<DiffArray>& x) { return project(op(x), proj_seed); },
                               inputs, opt)});
  };

  run("build_correlation", {{{4, 3, 5}, uniform(rng, 60, -1, 1)}, {{4, 3, 5}, uniform(rng, 60, -1, 1)}},
      [](const auto& x) { return correlation::build_correlation(x[0], x[1]); });

  {
    const correlation::LookupConfig cfg{2, 3};
    run("build_pyramid", {{{2, 5, 5}, uniform(rng, 50, -1, 1)}}, [cfg](const auto& x) {
      const auto pyr = correlation::build_pyramid(x[0], cfg);
      std::vector<DiffArray> flat;
      for (const auto& l : pyr.levels) flat.push_back(reshape(l, {l.size()}));
      return concat0(flat);
    });
    // Pixel coordinates stay off the grid at every level because j − d does.
    run("lookup", {{{3, 6, 6}, uniform(rng, 108, -1, 1)}, {{3, 6}, offgrid_disparity(rng, 3, 6, 0.0, 3.0)}},
        [cfg](const auto& x) {
          return correlation::lookup(correlation::build_pyramid(x[0], cfg), x[1], cfg);
        });
  }

  run("normalize_affinity", {{{8, 3, 4}, signed_away_from_zero(rng, 96)}},
      [](const auto& x) { return refine::normalize_affinity({x[0]}, 1e-8); });

  run("cspn_step",
      {{{9, 3, 4}, uniform(rng, 108, -0.3, 0.3)}, {{3, 4}, uniform(rng, 12, 0, 3)}, {{3, 4}, uniform(rng, 12, 0, 3)}},
      [](const auto& x) { return refine::cspn_step(x[0], x[1], x[2]); });

  {
    SparseDisparity sp = SparseDisparity::empty(3, 4);
    sp.set(1, 2, 1.5);
    sp.set(0, 0, 0.75);
    run("cspn_propagate", {{{8, 3, 4}, signed_away_from_zero(rng, 96)}, {{3, 4}, uniform(rng, 12, 0, 3)}},
        [sp](const auto& x) {
          return refine::cspn_propagate(x[1], refine::normalize_affinity({x[0]}, 1e-8), &sp, 3);
        });
  }

  run("convex_upsample", {{{3, 4}, uniform(rng, 12, 0, 3)}, {{36, 3, 4}, uniform(rng, 432, -2, 2)}},
      [](const auto& x) { return refine::convex_upsample(x[0], x[1], 2); });

  run("warp_right_to_left", {{{3, 4, 7}, uniform(rng, 84, 0, 1)}, {{4, 7}, offgrid_disparity(rng, 4, 7, 0.0, 3.0)}},
      [](const auto& x) { return losses::warp_right_to_left(x[0], x[1]); });

  run("ssim", {{{3, 4, 5}, uniform(rng, 60, 0, 1)}, {{3, 4, 5}, uniform(rng, 60, 0, 1)}},
      [](const auto& x) { return losses::ssim(x[0], x[1]); });

  {
    losses::OcclusionMap mask{4, 5, std::vector<std::uint8_t>(20, 0)};
    mask.occluded[3] = mask.occluded[11] = 1;
    run("appearance_loss", {{{3, 4, 5}, uniform(rng, 60, 0, 1)}, {{3, 4, 5}, uniform(rng, 60, 0, 1)}},
        [mask](const auto& x) { return losses::appearance_loss(x[0], x[1], mask, 0.85); });
    run("lr_consistency_loss",
        {{{4, 5}, offgrid_disparity(rng, 4, 5, 0.0, 2.0)}, {{4, 5}, uniform(rng, 20, 3, 5)}},
        [mask](const auto& x) { return losses::lr_consistency_loss(x[0], x[1], mask); });
    const std::vector<double> image = uniform(rng, 60, 0, 1);
    run("smooth_loss", {{{4, 5}, uniform(rng, 20, 0, 4)}}, [mask, image](const auto& x) {
      return losses::smooth_loss(x[0], DiffArray::constant({3, 4, 5}, image), mask);
    });
  }

  {
    SparseDisparity sp = SparseDisparity::empty(4, 5);
    sp.set(0, 1, 9.0);
    sp.set(2, 3, 8.0);
    sp.set(3, 0, 7.5);
    run("sparse_loss", {{{4, 5}, uniform(rng, 20, 0, 4)}}, [sp](const auto& x) { return losses::sparse_loss(sp, x[0]); });
  }
  return checks;
}

OpCheck check_pipeline(std::uint64_t seed, std::size_t entries_per_tensor, const GradCheckOptions& options) {
  ModelConfig mc;
  mc.features.feature_channels = mc.features.trunk_channels = 8;
  mc.features.context_channels = mc.features.hidden_channels = 8;
  mc.refine.gru_iters = 2;
  mc.refine.cspn_iters = 2;
  const Model model(mc, seed);

  train::DataConfig data;
  data.scene.height = 16;
  data.scene.width = 24;
  data.scene.layers = 2;
  data.scene.d_min = 2;
  data.scene.d_max = 5;
  data.lidar_points = 12;
  data.seed = seed;
  const train::Example ex = train::make_example(data, 0);

  train::TrainConfig tc;
  tc.strategy = train::Strategy::self_half2;

  std::vector<GradCheckInput> inputs;
  const ParamStore& store = model.params();
  for (std::size_t k = 0; k < store.size(); ++k) inputs.push_back({store[k].shape, store[k].values});

  train::MaskCache masks;
  auto fn = [&](Tape&, const std::vector<DiffArray>& leaves) {
    return train::example_loss(model, BoundParams(leaves), ex, tc, seed, nullptr, &masks);
  };
  GradCheckOptions opt = options;
  opt.max_entries_per_input = entries_per_tensor;
  opt.seed = seed;
  return {"pipeline", check_gradients(fn, inputs, opt)};
}

}  // namespace stereolidar::checks
