#pragma once

#include "stereolidar/model.hpp"
#include "stereolidar/train.hpp"

namespace testing_support {

/// 8 channels, two GRU iterations, two propagation steps.
inline stereolidar::ModelConfig tiny_model() {
  stereolidar::ModelConfig mc;
  mc.features.feature_channels = mc.features.trunk_channels = 8;
  mc.features.context_channels = mc.features.hidden_channels = 8;
  mc.lookup.levels = 2;
  mc.lookup.radius = 2;
  mc.refine.gru_iters = 2;
  mc.refine.cspn_iters = 2;
  return mc;
}

/// 16x24 two-layer scenes with 12 LiDAR points.
inline stereolidar::train::DataConfig tiny_data(std::uint64_t seed = 1) {
  stereolidar::train::DataConfig data;
  data.scene.height = 16;
  data.scene.width = 24;
  data.scene.layers = 2;
  data.scene.d_min = 2;
  data.scene.d_max = 5;
  data.lidar_points = 12;
  data.seed = seed;
  return data;
}

/// Gradient of the sparse term alone under `strategy`, flattened in store order.
inline std::vector<double> sparse_only_gradient(stereolidar::train::Strategy strategy, std::uint64_t seed) {
  const stereolidar::Model model(tiny_model(), seed);
  const auto ex = stereolidar::train::make_example(tiny_data(seed), 0);
  stereolidar::train::TrainConfig cfg;
  cfg.strategy = strategy;
  cfg.weights.appearance = cfg.weights.lr = cfg.weights.smooth = 0.0;
  cfg.weights.sparse = 1.0;
  stereolidar::ndgrad::Tape tape;
  const stereolidar::BoundParams p(model.params(), &tape);
  tape.backward(stereolidar::train::example_loss(model, p, ex, cfg, seed));
  return p.flat_grad();
}

}  // namespace testing_support
