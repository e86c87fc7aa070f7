#include "stereolidar/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <sstream>
#include <thread>

namespace stereolidar::train {

using namespace ndgrad;

namespace {

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t mix(std::uint64_t a, std::uint64_t b) { return splitmix(splitmix(a) ^ (b + 0x632be59bd9b4e019ULL)); }

/// Seeds valid in `seeds` but not in `exclude`.
SparseDisparity minus(const SparseDisparity& seeds, const SparseDisparity& exclude) {
  SparseDisparity out = seeds;
  for (std::size_t k = 0; k < out.valid.size(); ++k)
    if (exclude.valid[k]) {
      out.valid[k] = 0;
      out.values[k] = 0.0;
    }
  return out;
}

DiffArray supervised_term(const DiffArray& pred, const scenegen::StereoSample& s) {
  std::vector<double> wts(s.gt_valid.size(), 0.0);
  const double n = static_cast<double>(s.valid_count());
  if (n == 0) throw DegenerateMaskError("supervised loss: scene has no valid ground truth");
  for (std::size_t k = 0; k < wts.size(); ++k) wts[k] = s.gt_valid[k] ? 1.0 / n : 0.0;
  const DiffArray gt = DiffArray::constant(pred.shape(), s.gt_disparity);
  return weighted_sum(abs(sub(pred, gt)), wts);
}

/// gamma^(K-k) for k = 1..K, or just the final term.
std::vector<std::pair<std::size_t, double>> supervision_weights(std::size_t count, const TrainConfig& cfg) {
  std::vector<std::pair<std::size_t, double>> w;
  if (!cfg.sequence_loss || count == 1) return {{count - 1, 1.0}};
  for (std::size_t k = 1; k < count; ++k) w.emplace_back(k, std::pow(cfg.sequence_gamma, double(count - 1 - k)));
  return w;
}

}  // namespace

Strategy parse_strategy(const std::string& name) {
  if (name == "supervised") return Strategy::supervised;
  if (name == "self-all-in") return Strategy::self_all_in;
  if (name == "self-half1") return Strategy::self_half1;
  if (name == "self-half2") return Strategy::self_half2;
  throw ArgumentError("unknown strategy '" + name + "' (expected supervised, self-all-in, self-half1, self-half2)");
}

std::string to_string(Strategy s) {
  switch (s) {
    case Strategy::supervised: return "supervised";
    case Strategy::self_all_in: return "self-all-in";
    case Strategy::self_half1: return "self-half1";
    case Strategy::self_half2: return "self-half2";
  }
  return "?";
}

Example make_example(const DataConfig& data, std::uint64_t index) {
  Example ex;
  ex.sample = scenegen::generate_scene(data.scene, mix(data.seed, 2 * index));
  ex.lidar = scenegen::sample_lidar(ex.sample, data.lidar_points, mix(data.seed, 2 * index + 1));
  return ex;
}

std::vector<Example> make_examples(const DataConfig& data, std::size_t count, std::size_t jobs) {
  std::vector<Example> out(count);
  parallel_for(count, jobs, [&](std::size_t k) { out[k] = make_example(data, k); });
  return out;
}

void TrainConfig::validate() const {
  if (batch == 0) throw ConfigError("batch must be positive");
  if (!(max_lr > 0.0)) throw ConfigError("max_lr must be positive");
  if (!(pct_start > 0.0 && pct_start <= 1.0)) throw ConfigError("pct_start must be in (0,1]");
  if (!(div_factor > 0.0) || !(final_div_factor > 0.0)) throw ConfigError("lr divisors must be positive");
  if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1)) throw ConfigError("Adam betas must be in [0,1)");
  if (grad_clip < 0.0) throw ConfigError("grad_clip must be >= 0");
  if (!(sequence_gamma > 0.0 && sequence_gamma <= 1.0)) throw ConfigError("sequence_gamma must be in (0,1]");
  weights.validate();
}

double one_cycle_lr(std::size_t step, std::size_t total_steps, const TrainConfig& cfg) {
  const double initial = cfg.max_lr / cfg.div_factor;
  const double final_lr = initial / cfg.final_div_factor;
  if (total_steps <= 1) return cfg.max_lr;
  const std::size_t last = total_steps - 1;
  const auto peak = static_cast<std::size_t>(std::floor(cfg.pct_start * static_cast<double>(last)));
  auto anneal = [](double from, double to, double pct) { return to + (from - to) / 2.0 * (1.0 + std::cos(std::numbers::pi * pct)); };
  step = std::min(step, last);
  if (step <= peak) return peak == 0 ? cfg.max_lr : anneal(initial, cfg.max_lr, double(step) / double(peak));
  return anneal(cfg.max_lr, final_lr, double(step - peak) / double(last - peak));
}

Adam::Adam(std::size_t n, double beta1, double beta2, double eps)
    : m_(n, 0.0), v_(n, 0.0), beta1_(beta1), beta2_(beta2), eps_(eps) {}

void Adam::step(std::vector<double>& params, const std::vector<double>& grads, double lr) {
  if (params.size() != m_.size() || grads.size() != m_.size()) throw ShapeError("Adam: size mismatch");
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, double(t_));
  const double c2 = 1.0 - std::pow(beta2_, double(t_));
  for (std::size_t k = 0; k < params.size(); ++k) {
    m_[k] = beta1_ * m_[k] + (1.0 - beta1_) * grads[k];
    v_[k] = beta2_ * v_[k] + (1.0 - beta2_) * grads[k] * grads[k];
    params[k] -= lr * (m_[k] / c1) / (std::sqrt(v_[k] / c2) + eps_);
  }
}

DiffArray example_loss(const Model& model, const BoundParams& p, const Example& ex, const TrainConfig& cfg,
                       std::uint64_t split_seed, ForwardOutput* prediction, MaskCache* masks) {
  const auto& s = ex.sample;
  const DiffArray left = s.left.array();
  const DiffArray right = s.right.array();
  ForwardOptions opt;
  opt.all_iterations = cfg.sequence_loss;

  if (cfg.strategy == Strategy::supervised) {
    ForwardOutput out = model.forward(p, left, right, ex.lidar, opt);
    DiffArray loss = DiffArray::scalar(0.0);
    for (auto [k, w] : supervision_weights(out.disparities.size(), cfg))
      loss = add(loss, scale(supervised_term(out.disparities[k], s), w));
    if (prediction) *prediction = std::move(out);
    return loss;
  }

  const auto split_kind = cfg.strategy == Strategy::self_all_in  ? scenegen::SplitStrategy::all_in
                          : cfg.strategy == Strategy::self_half1 ? scenegen::SplitStrategy::half1
                                                                 : scenegen::SplitStrategy::half2;
  const scenegen::SparseSplit split = scenegen::split_sparse(ex.lidar, split_kind, split_seed);
  StereoOutput out = model.forward_stereo(p, left, right, split.input, opt);

  // Seeds of the mirrored right view; half2 keeps its loss points disjoint
  // from the input points after projection as well.
  const SparseDisparity right_input = flip_horizontal(to_right_view(split.input));
  SparseDisparity right_loss = flip_horizontal(to_right_view(split.loss));
  if (split_kind == scenegen::SplitStrategy::half2) right_loss = minus(right_loss, right_input);

  const DiffArray left_m = flip_lastdim(left);
  const DiffArray right_m = flip_lastdim(right);
  const bool reuse = masks && !masks->empty();
  std::size_t next_mask = 0;
  auto mask_for = [&](const DiffArray& d) {
    if (reuse) return masks->at(next_mask++);
    losses::OcclusionMap m = losses::loss_mask(d);
    if (masks) masks->push_back(m);
    return m;
  };

  DiffArray loss = DiffArray::scalar(0.0);
  for (auto [k, w] : supervision_weights(out.left.disparities.size(), cfg)) {
    const DiffArray& dl = out.left.disparities[k];
    const DiffArray& dr = out.right_mirrored.disparities[k];
    const losses::OcclusionMap ml = mask_for(dl);
    const losses::OcclusionMap mr = mask_for(dr);
    const losses::SideTerms lt =
        losses::side_terms(left, right, dl, flip_lastdim(dr), split.loss, cfg.weights.alpha, &ml);
    const losses::SideTerms rt =
        losses::side_terms(right_m, left_m, dr, flip_lastdim(dl), right_loss, cfg.weights.alpha, &mr);
    loss = add(loss, scale(losses::total_loss(lt, rt, cfg.weights), w));
  }
  if (prediction) *prediction = std::move(out.left);
  return loss;
}

void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& fn) {
  jobs = std::max<std::size_t>(1, std::min(jobs, n));
  if (jobs == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(jobs);
  for (std::size_t t = 0; t < jobs; ++t) {
    pool.emplace_back([&, t] {
      try {
        for (std::size_t i = t; i < n; i += jobs) fn(i);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

TrainResult train(Model& model, const DataConfig& data, const TrainConfig& cfg, const ProgressFn& progress) {
  cfg.validate();
  ParamStore& store = model.params();
  std::vector<double> theta = store.flatten();
  Adam adam(theta.size(), cfg.beta1, cfg.beta2, cfg.adam_eps);
  TrainResult result;

  for (std::size_t step = 0; step < cfg.steps; ++step) {
    std::vector<std::vector<double>> grads(cfg.batch);
    std::vector<double> losses_v(cfg.batch);
    std::vector<metrics::Metrics> mets(cfg.batch);
    parallel_for(cfg.batch, cfg.jobs, [&](std::size_t b) {
      const std::uint64_t index = step * cfg.batch + b;
      const Example ex = make_example(data, index);
      Tape tape;
      BoundParams p(store, &tape);
      ForwardOutput pred;
      const DiffArray loss = example_loss(model, p, ex, cfg, mix(cfg.seed, index), &pred);
      losses_v[b] = loss.item();
      if (!std::isfinite(losses_v[b])) return;
      if (loss.requires_grad()) tape.backward(loss);
      grads[b] = p.flat_grad();
      mets[b] = metrics::compute_metrics(pred.final().data(), ex.sample.gt_disparity, ex.sample.gt_valid,
                                         ex.sample.focal, ex.sample.baseline);
    });

    std::vector<double> g(theta.size(), 0.0);
    double loss_mean = 0.0;
    for (std::size_t b = 0; b < cfg.batch; ++b) {
      if (!std::isfinite(losses_v[b])) {
        throw NumericError("loss is not finite at step " + std::to_string(step) + " (example " +
                           std::to_string(step * cfg.batch + b) + ")");
      }
      loss_mean += losses_v[b] / double(cfg.batch);
      for (std::size_t k = 0; k < g.size(); ++k) g[k] += grads[b][k] / double(cfg.batch);
    }
    double norm = 0.0;
    for (double x : g) norm += x * x;
    norm = std::sqrt(norm);
    if (!std::isfinite(norm)) throw NumericError("gradient is not finite at step " + std::to_string(step));
    if (cfg.grad_clip > 0.0 && norm > cfg.grad_clip)
      for (double& x : g) x *= cfg.grad_clip / norm;

    adam.step(theta, g, one_cycle_lr(step, cfg.steps, cfg));
    store.assign_flat(theta);

    CurveRow row{step, loss_mean, metrics::mean_metrics(mets)};
    result.curve.push_back(row);
    if (progress) progress(row);
  }
  return result;
}

std::string curve_csv(const std::vector<CurveRow>& curve) {
  std::ostringstream os;
  os.precision(17);
  os << "step,loss,epe,d1,rmse,mae,irmse,imae\n";
  for (const auto& r : curve) {
    os << r.step << ',' << r.loss << ',' << r.metrics.epe << ',' << r.metrics.d1 << ',' << r.metrics.rmse << ','
       << r.metrics.mae << ',' << r.metrics.irmse << ',' << r.metrics.imae << '\n';
  }
  return os.str();
}

std::vector<double> predict(const Model& model, const Example& ex, std::optional<std::size_t> gru_iters) {
  BoundParams p(model.params(), nullptr);
  ForwardOptions opt;
  opt.gru_iters = gru_iters;
  const ForwardOutput out = model.forward(p, ex.sample.left.array(), ex.sample.right.array(), ex.lidar, opt);
  return {out.final().data().begin(), out.final().data().end()};
}

metrics::MetricsReport evaluate(const Model& model, const std::vector<Example>& examples,
                                std::optional<std::size_t> gru_iters, std::size_t jobs) {
  metrics::MetricsReport report;
  report.per_sample.resize(examples.size());
  parallel_for(examples.size(), jobs, [&](std::size_t k) {
    const auto& ex = examples[k];
    report.per_sample[k] = metrics::compute_metrics(predict(model, ex, gru_iters), ex.sample.gt_disparity,
                                                    ex.sample.gt_valid, ex.sample.focal, ex.sample.baseline);
  });
  report.aggregate = metrics::mean_metrics(report.per_sample);
  return report;
}

std::vector<AblationRow> ablate_iterations(const Model& model, const std::vector<Example>& examples,
                                           const std::vector<std::size_t>& iters, std::size_t jobs) {
  if (iters.empty()) throw ArgumentError("ablate_iterations: empty iteration list");
  const std::size_t kmax = *std::max_element(iters.begin(), iters.end());
  std::vector<std::vector<metrics::Metrics>> per(iters.size(), std::vector<metrics::Metrics>(examples.size()));
  parallel_for(examples.size(), jobs, [&](std::size_t e) {
    const auto& ex = examples[e];
    BoundParams p(model.params(), nullptr);
    ForwardOptions opt;
    opt.all_iterations = true;
    opt.gru_iters = kmax;
    const ForwardOutput out = model.forward(p, ex.sample.left.array(), ex.sample.right.array(), ex.lidar, opt);
    for (std::size_t r = 0; r < iters.size(); ++r) {
      per[r][e] = metrics::compute_metrics(out.disparities[iters[r]].data(), ex.sample.gt_disparity,
                                           ex.sample.gt_valid, ex.sample.focal, ex.sample.baseline);
    }
  });
  std::vector<AblationRow> rows;
  for (std::size_t r = 0; r < iters.size(); ++r) rows.push_back({iters[r], metrics::mean_metrics(per[r])});
  return rows;
}

std::string ablation_csv(const std::vector<AblationRow>& rows) {
  std::ostringstream os;
  os.precision(17);
  os << "iters,epe,d1,rmse,mae,irmse,imae\n";
  for (const auto& r : rows) {
    os << r.iters << ',' << r.metrics.epe << ',' << r.metrics.d1 << ',' << r.metrics.rmse << ',' << r.metrics.mae
       << ',' << r.metrics.irmse << ',' << r.metrics.imae << '\n';
  }
  return os.str();
}

}  // namespace stereolidar::train
