#include "stereolidar/scenegen.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>

namespace stereolidar::scenegen {

namespace {

struct Wave {
  double amp, wx, wy, phase;
};

struct ChannelTexture {
  double base, gx, gy;
  std::array<Wave, 4> waves;
};

struct Layer {
  int disparity;
  std::size_t x0, x1, y0, y1;  // half-open; background spans everything
  bool background;
  std::array<ChannelTexture, 3> tex;

  bool covers(std::size_t i, long x) const {
    if (background) return true;
    return i >= y0 && i < y1 && x >= static_cast<long>(x0) && x < static_cast<long>(x1);
  }

  // The texture lives on the layer surface, addressed in left-view columns.
  double color(std::size_t c, double y, double x) const {
    const auto& t = tex[c];
    double v = t.base + t.gx * x + t.gy * y;
    for (const auto& w : t.waves) v += w.amp * std::sin(w.wx * x + w.wy * y + w.phase);
    return std::clamp(v, 0.0, 1.0);
  }
};

ChannelTexture random_texture(std::mt19937_64& rng, double w, double h) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  ChannelTexture t;
  t.base = 0.35 + 0.3 * unit(rng);
  t.gx = (unit(rng) - 0.5) * 0.3 / w;
  t.gy = (unit(rng) - 0.5) * 0.3 / h;
  for (auto& wave : t.waves) {
    const double omega = 0.15 + 0.85 * unit(rng);
    const double theta = 2.0 * std::numbers::pi * unit(rng);
    wave = {0.05 + 0.07 * unit(rng), omega * std::cos(theta), omega * std::sin(theta),
            2.0 * std::numbers::pi * unit(rng)};
  }
  return t;
}

/// Index of the nearest layer covering left-view column x of row i.
std::size_t top_layer(const std::vector<Layer>& layers, std::size_t i, long x) {
  for (std::size_t l = layers.size(); l-- > 0;)
    if (layers[l].covers(i, x)) return l;
  return 0;
}

}  // namespace

void SceneConfig::validate() const {
  if (height == 0 || width == 0) throw ConfigError("scene size must be positive");
  if (!(focal > 0.0) || !(baseline > 0.0)) throw ConfigError("focal and baseline must be positive");
  if (layers == 0) throw ConfigError("a scene needs at least the background layer");
  if (d_min < 1 || d_max < d_min) throw ConfigError("disparity range must satisfy 1 <= d_min <= d_max");
  if (2.0 * d_max >= static_cast<double>(width)) throw ConfigError("d_max must be below width/2");
  if (static_cast<std::size_t>(d_max - d_min) < layers - 1) {
    throw ConfigError("disparity range too narrow for " + std::to_string(layers) + " distinct layers");
  }
}

std::size_t StereoSample::valid_count() const {
  return static_cast<std::size_t>(std::count(gt_valid.begin(), gt_valid.end(), std::uint8_t{1}));
}

StereoSample generate_scene(const SceneConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  const std::size_t h = cfg.height, w = cfg.width;

  // Distinct foreground disparities above the background's d_min, ascending.
  std::vector<int> pool(static_cast<std::size_t>(cfg.d_max - cfg.d_min));
  std::iota(pool.begin(), pool.end(), cfg.d_min + 1);
  std::shuffle(pool.begin(), pool.end(), rng);
  pool.resize(cfg.layers - 1);
  std::sort(pool.begin(), pool.end());

  std::vector<Layer> layers;
  auto textured = [&](Layer l) {
    for (auto& t : l.tex) t = random_texture(rng, static_cast<double>(w), static_cast<double>(h));
    return l;
  };
  layers.push_back(textured({cfg.d_min, 0, w, 0, h, true, {}}));
  for (int d : pool) {
    std::uniform_int_distribution<std::size_t> rw(std::max<std::size_t>(1, w / 4), std::max<std::size_t>(1, w / 2));
    std::uniform_int_distribution<std::size_t> rh(std::max<std::size_t>(1, h / 4), std::max<std::size_t>(1, h / 2));
    const std::size_t lw = rw(rng), lh = rh(rng);
    const std::size_t x0 = std::uniform_int_distribution<std::size_t>(0, w - lw)(rng);
    const std::size_t y0 = std::uniform_int_distribution<std::size_t>(0, h - lh)(rng);
    layers.push_back(textured({d, x0, x0 + lw, y0, y0 + lh, false, {}}));
  }

  StereoSample s;
  s.left = {h, w, std::vector<double>(3 * h * w)};
  s.right = {h, w, std::vector<double>(3 * h * w)};
  s.gt_disparity.assign(h * w, 0.0);
  s.gt_valid.assign(h * w, 0);
  s.focal = cfg.focal;
  s.baseline = cfg.baseline;
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j) {
      const std::size_t p = i * w + j;
      const std::size_t l = top_layer(layers, i, static_cast<long>(j));
      const Layer& lay = layers[l];
      s.gt_disparity[p] = lay.disparity;
      for (std::size_t c = 0; c < 3; ++c) s.left.data[c * h * w + p] = lay.color(c, double(i), double(j));

      // Right pixel k shows the nearest layer whose surface sits at k + d.
      std::size_t best = 0;
      for (std::size_t m = layers.size(); m-- > 0;)
        if (layers[m].covers(i, static_cast<long>(j) + layers[m].disparity)) {
          best = m;
          break;
        }
      const Layer& rl = layers[best];
      for (std::size_t c = 0; c < 3; ++c) {
        s.right.data[c * h * w + p] = rl.color(c, double(i), double(static_cast<long>(j) + rl.disparity));
      }

      const long k = static_cast<long>(j) - lay.disparity;
      if (k >= 0) {
        std::size_t seen = 0;
        for (std::size_t m = layers.size(); m-- > 0;)
          if (layers[m].covers(i, k + layers[m].disparity)) {
            seen = m;
            break;
          }
        s.gt_valid[p] = seen == l ? 1 : 0;
      }
    }
  return s;
}

SparseDisparity sample_lidar(const StereoSample& sample, std::size_t n_points, std::uint64_t seed) {
  std::vector<std::size_t> candidates;
  for (std::size_t p = 0; p < sample.gt_valid.size(); ++p)
    if (sample.gt_valid[p]) candidates.push_back(p);
  if (n_points > candidates.size()) {
    throw ArgumentError("sample_lidar: requested " + std::to_string(n_points) + " points but only " +
                        std::to_string(candidates.size()) + " pixels are valid");
  }
  std::mt19937_64 rng(seed);
  // Partial Fisher-Yates: the first n entries become a uniform sample.
  for (std::size_t k = 0; k < n_points; ++k) {
    const std::size_t r = std::uniform_int_distribution<std::size_t>(k, candidates.size() - 1)(rng);
    std::swap(candidates[k], candidates[r]);
  }
  SparseDisparity sp = SparseDisparity::empty(sample.height(), sample.width());
  for (std::size_t k = 0; k < n_points; ++k) {
    const std::size_t p = candidates[k];
    sp.set(p / sp.width, p % sp.width, sample.gt_disparity[p]);
  }
  return sp;
}

SplitStrategy parse_split(const std::string& name) {
  if (name == "all-in") return SplitStrategy::all_in;
  if (name == "half1") return SplitStrategy::half1;
  if (name == "half2") return SplitStrategy::half2;
  throw ArgumentError("unknown split '" + name + "' (expected all-in, half1 or half2)");
}

std::string to_string(SplitStrategy s) {
  switch (s) {
    case SplitStrategy::all_in: return "all-in";
    case SplitStrategy::half1: return "half1";
    case SplitStrategy::half2: return "half2";
  }
  return "?";
}

SparseSplit split_sparse(const SparseDisparity& sp, SplitStrategy strategy, std::uint64_t seed) {
  if (strategy == SplitStrategy::all_in) return {sp, sp};
  std::vector<std::size_t> points;
  for (std::size_t p = 0; p < sp.valid.size(); ++p)
    if (sp.valid[p]) points.push_back(p);
  if (points.size() < 2) throw ArgumentError("split_sparse: half splits need at least 2 points");
  std::mt19937_64 rng(seed);
  const std::size_t half = points.size() / 2;
  for (std::size_t k = 0; k < half; ++k) {
    const std::size_t r = std::uniform_int_distribution<std::size_t>(k, points.size() - 1)(rng);
    std::swap(points[k], points[r]);
  }
  SparseSplit out{SparseDisparity::empty(sp.height, sp.width), SparseDisparity::empty(sp.height, sp.width)};
  for (std::size_t k = 0; k < points.size(); ++k) {
    const std::size_t p = points[k];
    SparseDisparity& dst = k < half ? out.input : out.loss;
    dst.set(p / sp.width, p % sp.width, sp.values[p]);
  }
  if (strategy == SplitStrategy::half1) out.loss = sp;
  return out;
}

double disparity_to_depth(double d, double focal, double baseline) {
  if (!(d > 0.0)) throw DomainError("disparity_to_depth: disparity must be positive");
  return focal * baseline / d;
}

double depth_to_disparity(double depth, double focal, double baseline) {
  if (!(depth > 0.0)) throw DomainError("depth_to_disparity: depth must be positive");
  return focal * baseline / depth;
}

}  // namespace stereolidar::scenegen
