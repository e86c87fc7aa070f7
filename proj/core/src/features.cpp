#include "stereolidar/features.hpp"

namespace stereolidar::features {

using namespace ndgrad;

void FeatureConfig::validate() const {
  if (downsample != 4 && downsample != 8) throw ConfigError("downsample factor must be 4 or 8");
  if (feature_channels == 0 || trunk_channels == 0 || context_channels == 0 || hidden_channels == 0) {
    throw ConfigError("channel counts must be positive");
  }
}

namespace {

Encoder make_encoder(ParamStore& store, const std::string& name, const FeatureConfig& cfg, std::size_t out_channels,
                     std::mt19937_64& rng) {
  Encoder e;
  const std::size_t c = cfg.trunk_channels;
  e.downs.push_back(make_conv(store, name + ".conv1", 3, c, 3, 2, rng));
  e.downs.push_back(make_conv(store, name + ".conv2", c, c, 3, 2, rng));
  if (cfg.downsample == 8) e.downs.push_back(make_conv(store, name + ".conv3", c, c, 3, 2, rng));
  e.res_a = make_conv(store, name + ".res.a", c, c, 3, 1, rng);
  e.res_b = make_conv(store, name + ".res.b", c, c, 3, 1, rng);
  e.out = make_conv(store, name + ".out", c, out_channels, 3, 1, rng);
  return e;
}

DiffArray residual(const BoundParams& p, const ConvLayer& a, const ConvLayer& b, const DiffArray& x) {
  return relu(add(x, b(p, relu(a(p, x)))));
}

void check_image(const DiffArray& image, std::size_t s) {
  if (image.rank() != 3 || image.dim(0) != 3) {
    throw ShapeError("expected an RGB image [3,H,W], got " + shape_str(image.shape()));
  }
  if (image.dim(1) % s != 0 || image.dim(2) % s != 0) {
    throw ShapeError("image " + shape_str(image.shape()) + " is not divisible by downsample factor " +
                     std::to_string(s));
  }
}

}  // namespace

std::pair<DiffArray, DiffArray> Encoder::operator()(const BoundParams& p, const DiffArray& image) const {
  DiffArray x = add_scalar(scale(image, 2.0), -1.0);
  for (const auto& d : downs) x = relu(d(p, x));
  x = residual(p, res_a, res_b, x);
  return {x, out(p, x)};
}

FeatureNets FeatureNets::create(ParamStore& store, const FeatureConfig& cfg, std::mt19937_64& rng) {
  cfg.validate();
  FeatureNets n;
  n.cfg = cfg;
  n.feature = make_encoder(store, "fnet", cfg, cfg.feature_channels, rng);
  n.context = make_encoder(store, "cnet", cfg, cfg.hidden_channels + cfg.context_channels, rng);
  n.aff_res_a = make_conv(store, "aff.res.a", cfg.trunk_channels, cfg.trunk_channels, 3, 1, rng);
  n.aff_res_b = make_conv(store, "aff.res.b", cfg.trunk_channels, cfg.trunk_channels, 3, 1, rng);
  n.aff_out = make_conv(store, "aff.out", cfg.trunk_channels, 8, 1, 1, rng);
  return n;
}

DiffArray extract_features(const FeatureNets& nets, const BoundParams& params, const DiffArray& image) {
  check_image(image, nets.cfg.downsample);
  return nets.feature(params, image).second;
}

ContextBundle extract_context(const FeatureNets& nets, const BoundParams& params, const DiffArray& image) {
  check_image(image, nets.cfg.downsample);
  auto [trunk, out] = nets.context(params, image);
  const std::size_t ch = nets.cfg.hidden_channels;
  ContextBundle b;
  b.hidden_init = tanh(slice0(out, 0, ch));
  b.context = relu(slice0(out, ch, out.dim(0)));
  // Affinities stay signed: normalization divides by their absolute sum.
  b.affinity.raw = nets.aff_out(params, residual(params, nets.aff_res_a, nets.aff_res_b, trunk));
  return b;
}

}  // namespace stereolidar::features
