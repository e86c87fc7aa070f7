#include "config.hpp"

#include "stereolidar/errors.hpp"

namespace stereolidar::cli {

void ConfigSchema::attach(CLI::App& app) {
  for (auto& f : fields_) f.option = f.attach(app);
}

void ConfigSchema::merge(const json& config) {
  const json& body = config.contains("subcommand") && config.contains("config") ? config.at("config") : config;
  if (!body.is_object()) throw ConfigError("config must be a JSON object");
  for (const auto& [key, value] : body.items()) {
    auto it = std::find_if(fields_.begin(), fields_.end(), [&](const Field& f) { return f.name == key; });
    if (it == fields_.end()) throw ConfigError("unknown config key '" + key + "'");
    if (it->option && it->option->count() > 0) continue;
    try {
      it->load(value);
    } catch (const json::exception& e) {
      throw ConfigError("config key '" + key + "': " + e.what());
    }
  }
}

json ConfigSchema::to_json() const {
  json j = json::object();
  for (const auto& f : fields_) j[f.name] = f.dump();
  return j;
}

void add_model_fields(ConfigSchema& s, ModelConfig& cfg) {
  s.add("feature_channels", cfg.features.feature_channels, "correlation feature channels C");
  s.add("trunk_channels", cfg.features.trunk_channels, "encoder backbone width");
  s.add("context_channels", cfg.features.context_channels, "context channels");
  s.add("hidden_channels", cfg.features.hidden_channels, "GRU hidden channels");
  s.add("downsample", cfg.features.downsample, "feature stride s (4 or 8)");
  s.add("radius", cfg.lookup.radius, "lookup radius per pyramid level");
  s.add("levels", cfg.lookup.levels, "correlation pyramid levels");
  s.add("gru_iters", cfg.refine.gru_iters, "GRU iterations K");
  s.add("cspn_iters", cfg.refine.cspn_iters, "propagation steps per iteration");
  s.add("gru_levels", cfg.refine.gru_levels, "resolutions of the recurrent update (1-3)");
  s.add("eps_norm", cfg.refine.eps_norm, "affinity normalization epsilon");
  s.add("use_cspn", cfg.refine.use_cspn, "enable spatial propagation");
  s.add("use_sparse", cfg.refine.use_sparse, "feed sparse seeds as input");
}

void add_scene_fields(ConfigSchema& s, scenegen::SceneConfig& scene) {
  s.add("height", scene.height, "image height");
  s.add("width", scene.width, "image width");
  s.add("focal", scene.focal, "focal length in pixels");
  s.add("baseline", scene.baseline, "stereo baseline in meters");
  s.add("layers", scene.layers, "depth layers including the background");
  s.add("d_min", scene.d_min, "background disparity");
  s.add("d_max", scene.d_max, "largest foreground disparity");
}

void add_train_fields(ConfigSchema& s, train::TrainConfig& cfg, std::string& strategy) {
  s.add("steps", cfg.steps, "optimizer steps");
  s.add("batch", cfg.batch, "examples per step");
  s.add("max_lr", cfg.max_lr, "peak learning rate");
  s.add("pct_start", cfg.pct_start, "fraction of steps spent warming up");
  s.add("div_factor", cfg.div_factor, "initial lr = max_lr / div_factor");
  s.add("final_div_factor", cfg.final_div_factor, "final lr = initial lr / final_div_factor");
  s.add("beta1", cfg.beta1, "Adam first-moment decay");
  s.add("beta2", cfg.beta2, "Adam second-moment decay");
  s.add("adam_eps", cfg.adam_eps, "Adam epsilon");
  s.add("grad_clip", cfg.grad_clip, "global gradient norm bound (0 disables)");
  s.add("strategy", strategy, "supervised | self-all-in | self-half1 | self-half2");
  s.add("sequence_loss", cfg.sequence_loss, "supervise every iteration");
  s.add("sequence_gamma", cfg.sequence_gamma, "per-iteration loss decay");
  s.add("alpha", cfg.weights.alpha, "SSIM share of the appearance term");
  s.add("w_appearance", cfg.weights.appearance, "appearance loss weight");
  s.add("w_sparse", cfg.weights.sparse, "sparse loss weight");
  s.add("w_lr", cfg.weights.lr, "left-right consistency weight");
  s.add("w_smooth", cfg.weights.smooth, "smoothness weight");
}

json model_config_json(const ModelConfig& cfg) {
  ModelConfig copy = cfg;
  ConfigSchema s;
  add_model_fields(s, copy);
  return s.to_json();
}

ModelConfig model_config_from_json(const json& j) {
  ModelConfig cfg;
  ConfigSchema s;
  add_model_fields(s, cfg);
  s.merge(j);
  cfg.validate();
  return cfg;
}

}  // namespace stereolidar::cli
