#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "stereolidar/losses.hpp"
#include "stereolidar/metrics.hpp"
#include "stereolidar/model.hpp"
#include "stereolidar/scenegen.hpp"

namespace stereolidar::train {

enum class Strategy { supervised, self_all_in, self_half1, self_half2 };

Strategy parse_strategy(const std::string& name);
std::string to_string(Strategy s);

/// Scene distribution plus simulated LiDAR. Example k is a pure function of
/// (seed, k).
struct DataConfig {
  scenegen::SceneConfig scene;
  std::size_t lidar_points = 24;
  std::uint64_t seed = 1;
};

struct Example {
  scenegen::StereoSample sample;
  SparseDisparity lidar;
};

Example make_example(const DataConfig& data, std::uint64_t index);
std::vector<Example> make_examples(const DataConfig& data, std::size_t count, std::size_t jobs = 1);

struct TrainConfig {
  std::size_t steps = 2000;
  std::size_t batch = 1;
  double max_lr = 2e-4;
  double pct_start = 0.3;
  double div_factor = 25.0;
  double final_div_factor = 1e4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double grad_clip = 1.0;  ///< global L2 norm; 0 disables
  Strategy strategy = Strategy::self_half2;
  bool sequence_loss = false;  ///< supervise every d_k with weight gamma^(K-k)
  double sequence_gamma = 0.8;
  losses::LossWeights weights;
  std::uint64_t seed = 0;
  std::size_t jobs = 1;

  void validate() const;
};

/// Cosine one-cycle: max_lr/div_factor → max_lr over the first pct_start of
/// the steps, then down to max_lr/(div_factor·final_div_factor).
double one_cycle_lr(std::size_t step, std::size_t total_steps, const TrainConfig& cfg);

class Adam {
 public:
  Adam(std::size_t n, double beta1, double beta2, double eps);
  void step(std::vector<double>& params, const std::vector<double>& grads, double lr);
  std::size_t steps() const { return t_; }

 private:
  std::vector<double> m_, v_;
  double beta1_, beta2_, eps_;
  std::size_t t_ = 0;
};

/// Occlusion masks of one loss evaluation, in evaluation order. Passing an
/// empty cache records them; passing a filled one reuses them, which keeps the
/// loss smooth under the small perturbations of a finite-difference check.
using MaskCache = std::vector<losses::OcclusionMap>;

/// Training loss of one example under a strategy. `split_seed` drives the
/// half splits.
DiffArray example_loss(const Model& model, const BoundParams& p, const Example& ex, const TrainConfig& cfg,
                       std::uint64_t split_seed, ForwardOutput* prediction = nullptr, MaskCache* masks = nullptr);

struct CurveRow {
  std::size_t step = 0;
  double loss = 0;
  metrics::Metrics metrics;  ///< of the batch predictions against ground truth
};

struct TrainResult {
  std::vector<CurveRow> curve;
};

using ProgressFn = std::function<void(const CurveRow&)>;

/// Step t consumes training examples t·batch … t·batch+batch−1. Per-example
/// gradients are computed on independent tapes and averaged in a fixed order.
TrainResult train(Model& model, const DataConfig& data, const TrainConfig& cfg, const ProgressFn& progress = {});

std::string curve_csv(const std::vector<CurveRow>& curve);

/// Prediction with every LiDAR point as input.
std::vector<double> predict(const Model& model, const Example& ex, std::optional<std::size_t> gru_iters = {});

metrics::MetricsReport evaluate(const Model& model, const std::vector<Example>& examples,
                                std::optional<std::size_t> gru_iters = {}, std::size_t jobs = 1);

struct AblationRow {
  std::size_t iters = 0;
  metrics::Metrics metrics;
};

/// The model truncated after each iteration count, evaluated on `examples`.
std::vector<AblationRow> ablate_iterations(const Model& model, const std::vector<Example>& examples,
                                           const std::vector<std::size_t>& iters, std::size_t jobs = 1);

std::string ablation_csv(const std::vector<AblationRow>& rows);

/// Runs fn(i) for i in [0, n) on up to `jobs` threads.
void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& fn);

}  // namespace stereolidar::train
