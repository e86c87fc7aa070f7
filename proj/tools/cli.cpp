#include "cli.hpp"

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <memory>
#include <ostream>
#include <thread>

#include "colormap.hpp"
#include "config.hpp"
#include "stereolidar/checks.hpp"
#include "stereolidar/errors.hpp"
#include "stereolidar/io.hpp"

namespace stereolidar::cli {

namespace {

namespace fs = std::filesystem;

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

json metrics_json(const metrics::Metrics& m) {
  return {{"epe", m.epe},     {"d1", m.d1},       {"rmse", m.rmse}, {"mae", m.mae},
          {"irmse", m.irmse}, {"imae", m.imae}, {"count", m.count}};
}

json report_json(const metrics::MetricsReport& r) {
  json per = json::array();
  for (const auto& m : r.per_sample) per.push_back(metrics_json(m));
  return {{"per_sample", per}, {"aggregate", metrics_json(r.aggregate)}};
}

Model load_model(const fs::path& dir) {
  const fs::path path = dir / "model_config.json";
  json j;
  try {
    j = json::parse(io::read_text(path));
  } catch (const json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what(), e.byte);
  }
  const ModelConfig cfg = model_config_from_json(j);
  Model model(cfg, 0);
  model.load(dir / "model.bin", dir / "model.json");
  return model;
}

/// Output directory plus the artifact list that ends up in the manifest.
class RunContext {
 public:
  RunContext(fs::path out, std::ostream& log) : out_(std::move(out)), log_(log) { fs::create_directories(out_); }

  fs::path path(const std::string& rel) {
    artifacts_.push_back(rel);
    const fs::path p = out_ / rel;
    fs::create_directories(p.parent_path());
    return p;
  }

  std::ostream& log() { return log_; }

  /// Extra top-level manifest entry.
  void annotate(const std::string& key, json value) { extra_[key] = std::move(value); }

  void finish(const std::string& subcommand, const json& config, std::uint64_t seed) {
    json m = {{"subcommand", subcommand}, {"config", config},           {"seed", seed},
              {"artifacts", artifacts_},  {"timestamp", utc_timestamp()}};
    for (auto& [k, v] : extra_.items()) m[k] = v;
    io::write_text(out_ / "manifest.json", m.dump(2) + "\n");
  }

 private:
  fs::path out_;
  std::ostream& log_;
  std::vector<std::string> artifacts_;
  json extra_ = json::object();
};

/// One subcommand: its schema-backed options and the action run after the
/// command line and any `--config` file are merged.
struct Command {
  std::string name;
  CLI::App* app = nullptr;
  ConfigSchema schema;
  std::string out;
  std::string config;
  std::uint64_t seed = 0;
  std::size_t jobs = 1;
  std::function<int(RunContext&)> action;
};

Command& add_command(std::vector<std::unique_ptr<Command>>& cmds, CLI::App& app, const std::string& name,
                     const std::string& description, std::uint64_t default_seed) {
  auto cmd = std::make_unique<Command>();
  cmd->name = name;
  cmd->app = app.add_subcommand(name, description);
  cmd->out = "out/" + name;
  cmd->seed = default_seed;
  cmd->jobs = std::max(1u, std::thread::hardware_concurrency());
  cmd->app->add_option("--out", cmd->out, "output directory")->capture_default_str();
  cmd->app->add_option("--config", cmd->config, "JSON config or run manifest; flags take precedence");
  cmd->app->add_option("--jobs", cmd->jobs, "worker threads")->capture_default_str();
  cmd->schema.add("seed", cmd->seed, "random seed");
  cmds.push_back(std::move(cmd));
  return *cmds.back();
}

void register_generate(std::vector<std::unique_ptr<Command>>& cmds, CLI::App& app) {
  struct State {
    train::DataConfig data;
    std::size_t count = 4;
  };
  auto st = std::make_shared<State>();
  Command& cmd = add_command(cmds, app, "generate", "Render synthetic stereo scenes with simulated LiDAR", 1);
  add_scene_fields(cmd.schema, st->data.scene);
  cmd.schema.add("lidar_points", st->data.lidar_points, "LiDAR points per scene");
  cmd.schema.add("count", st->count, "number of scenes");
  cmd.action = [st, &cmd](RunContext& run) {
    st->data.seed = cmd.seed;
    st->data.scene.validate();
    const auto examples = train::make_examples(st->data, st->count, cmd.jobs);
    for (std::size_t k = 0; k < examples.size(); ++k) {
      char dir[32];
      std::snprintf(dir, sizeof dir, "scene_%04zu/", k);
      const auto& s = examples[k].sample;
      io::write_ppm(run.path(std::string(dir) + "left.ppm"), s.left);
      io::write_ppm(run.path(std::string(dir) + "right.ppm"), s.right);
      io::write_pfm(run.path(std::string(dir) + "disparity.pfm"),
                    io::to_float_map(s.height(), s.width(), s.gt_disparity));
      io::write_mask_pgm(run.path(std::string(dir) + "valid.pgm"), s.height(), s.width(), s.gt_valid);
      io::write_sparse_csv(run.path(std::string(dir) + "lidar.csv"), examples[k].lidar);
    }
    run.log() << "wrote " << examples.size() << " scenes\n";
    return kOk;
  };
}

void register_train(std::vector<std::unique_ptr<Command>>& cmds, CLI::App& app) {
  struct State {
    ModelConfig model;
    train::DataConfig data;
    train::TrainConfig train;
    std::string strategy = "self-half2";
    std::size_t eval_scenes = 50;
    std::uint64_t eval_seed = 99991;
    std::size_t log_every = 100;
  };
  auto st = std::make_shared<State>();
  Command& cmd = add_command(cmds, app, "train", "Train a model on synthetic scenes", 0);
  add_model_fields(cmd.schema, st->model);
  add_scene_fields(cmd.schema, st->data.scene);
  cmd.schema.add("lidar_points", st->data.lidar_points, "LiDAR points per scene");
  cmd.schema.add("data_seed", st->data.seed, "seed of the training scene stream");
  add_train_fields(cmd.schema, st->train, st->strategy);
  cmd.schema.add("eval_scenes", st->eval_scenes, "held-out scenes evaluated after training (0 skips)");
  cmd.schema.add("eval_seed", st->eval_seed, "seed of the held-out scenes");
  cmd.app->add_option("--log_every", st->log_every, "progress line interval in steps")->capture_default_str();
  cmd.action = [st, &cmd](RunContext& run) {
    st->train.strategy = train::parse_strategy(st->strategy);
    st->train.seed = cmd.seed;
    st->train.jobs = cmd.jobs;
    Model model(st->model, cmd.seed);
    const std::size_t every = std::max<std::size_t>(1, st->log_every);
    const auto result = train::train(model, st->data, st->train, [&](const train::CurveRow& row) {
      if (row.step % every == 0 || row.step + 1 == st->train.steps) {
        run.log() << "step " << row.step << " loss " << row.loss << " epe " << row.metrics.epe << '\n';
      }
    });
    model.save(run.path("model.bin"), run.path("model.json"));
    io::write_text(run.path("model_config.json"), model_config_json(model.config()).dump(2) + "\n");
    io::write_text(run.path("curves.csv"), train::curve_csv(result.curve));
    if (st->eval_scenes > 0) {
      train::DataConfig held = st->data;
      held.seed = st->eval_seed;
      const auto report = train::evaluate(model, train::make_examples(held, st->eval_scenes, cmd.jobs), {}, cmd.jobs);
      io::write_text(run.path("metrics.json"), report_json(report).dump(2) + "\n");
      run.log() << "held-out epe " << report.aggregate.epe << " d1 " << report.aggregate.d1 << '\n';
    }
    return kOk;
  };
}

void register_infer(std::vector<std::unique_ptr<Command>>& cmds, CLI::App& app) {
  struct State {
    std::string model, left, right, sparse;
    std::size_t gru_iters = 0;
    bool colormap = true;
    double vis_min = 0, vis_max = 0;
  };
  auto st = std::make_shared<State>();
  Command& cmd = add_command(cmds, app, "infer", "Predict a disparity map for one stereo pair", 0);
  cmd.schema.add("model", st->model, "trained model directory");
  cmd.schema.add("left", st->left, "left image (P6)");
  cmd.schema.add("right", st->right, "right image (P6)");
  cmd.schema.add("sparse", st->sparse, "sparse seeds CSV (optional)");
  cmd.schema.add("gru_iters", st->gru_iters, "iterations (0 uses the model's)");
  cmd.schema.add("colormap", st->colormap, "also write a color-mapped PPM");
  cmd.schema.add("vis_min", st->vis_min, "colormap lower bound (auto when vis_min >= vis_max)");
  cmd.schema.add("vis_max", st->vis_max, "colormap upper bound");
  cmd.action = [st](RunContext& run) {
    if (st->model.empty() || st->left.empty() || st->right.empty())
      throw ConfigError("infer needs --model, --left and --right");
    const Model model = load_model(st->model);
    train::Example ex;
    ex.sample.left = io::read_ppm(st->left);
    ex.sample.right = io::read_ppm(st->right);
    const std::size_t h = ex.sample.left.height, w = ex.sample.left.width;
    ex.lidar = st->sparse.empty() ? SparseDisparity::empty(h, w) : io::read_sparse_csv(st->sparse, h, w);
    std::optional<std::size_t> iters;
    if (st->gru_iters > 0) iters = st->gru_iters;
    const auto map = io::to_float_map(h, w, train::predict(model, ex, iters));
    io::write_pfm(run.path("disparity.pfm"), map);
    if (st->colormap) {
      double lo = st->vis_min, hi = st->vis_max;
      if (!(lo < hi)) {
        const auto [mn, mx] = std::minmax_element(map.data.begin(), map.data.end());
        lo = *mn;
        hi = *mx;
      }
      io::write_ppm(run.path("disparity.ppm"), colorize(map, lo, hi));
      run.annotate("colormap", {{"name", "turbo"}, {"min", lo}, {"max", hi}});
    }
    return kOk;
  };
}

void register_eval(std::vector<std::unique_ptr<Command>>& cmds, CLI::App& app) {
  struct State {
    std::vector<std::string> pred, gt, valid;
    double focal = 100.0, baseline = 0.5;
  };
  auto st = std::make_shared<State>();
  Command& cmd = add_command(cmds, app, "eval", "Score predicted disparity maps against ground truth", 0);
  cmd.schema.add("pred", st->pred, "predicted disparity PFM files");
  cmd.schema.add("gt", st->gt, "ground-truth disparity PFM files");
  cmd.schema.add("valid", st->valid, "validity masks (P5); default: finite gt > 0");
  cmd.schema.add("focal", st->focal, "focal length in pixels");
  cmd.schema.add("baseline", st->baseline, "stereo baseline in meters");
  cmd.action = [st](RunContext& run) {
    if (st->pred.empty() || st->pred.size() != st->gt.size())
      throw ConfigError("eval needs matching, nonempty --pred and --gt lists");
    if (!st->valid.empty() && st->valid.size() != st->gt.size())
      throw ConfigError("eval: --valid must list one mask per ground-truth map");
    metrics::MetricsReport report;
    for (std::size_t k = 0; k < st->pred.size(); ++k) {
      const io::FloatMap pred = io::read_pfm(st->pred[k]);
      const io::FloatMap gt = io::read_pfm(st->gt[k]);
      if (pred.height != gt.height || pred.width != gt.width)
        throw ShapeError("eval: " + st->pred[k] + " and " + st->gt[k] + " differ in size");
      std::vector<std::uint8_t> valid(gt.data.size());
      if (st->valid.empty()) {
        for (std::size_t i = 0; i < valid.size(); ++i) valid[i] = std::isfinite(gt.data[i]) && gt.data[i] > 0;
      } else {
        std::size_t mh = 0, mw = 0;
        valid = io::read_mask_pgm(st->valid[k], mh, mw);
        if (mh != gt.height || mw != gt.width) throw ShapeError("eval: " + st->valid[k] + " differs in size");
      }
      const std::vector<double> p(pred.data.begin(), pred.data.end()), g(gt.data.begin(), gt.data.end());
      report.per_sample.push_back(metrics::compute_metrics(p, g, valid, st->focal, st->baseline));
    }
    report.aggregate = metrics::mean_metrics(report.per_sample);
    io::write_text(run.path("metrics.json"), report_json(report).dump(2) + "\n");
    run.log() << "epe " << report.aggregate.epe << " d1 " << report.aggregate.d1 << '\n';
    return kOk;
  };
}

void register_gradcheck(std::vector<std::unique_ptr<Command>>& cmds, CLI::App& app) {
  struct State {
    std::size_t entries_per_tensor = 4;
    bool pipeline = true;
    double step = 1e-6;
  };
  auto st = std::make_shared<State>();
  Command& cmd = add_command(cmds, app, "gradcheck", "Finite-difference check of every differentiable operation", 0);
  cmd.schema.add("entries_per_tensor", st->entries_per_tensor, "pipeline entries probed per parameter tensor");
  cmd.schema.add("pipeline", st->pipeline, "include the end-to-end pipeline check");
  cmd.schema.add("step", st->step, "central-difference step");
  cmd.action = [st, &cmd](RunContext& run) {
    ndgrad::GradCheckOptions opt;
    opt.step = st->step;
    json rows = json::array();
    bool ok = true;
    auto report = [&](const ndgrad::OpCheck& c, double tol) {
      const bool pass = c.result.max_rel_error <= tol;
      ok = ok && pass;
      char line[128];
      std::snprintf(line, sizeof line, "%-28s %.3e  %s\n", c.name.c_str(), c.result.max_rel_error,
                    pass ? "ok" : "FAIL");
      run.log() << line;
      rows.push_back({{"name", c.name},
                      {"max_rel_error", c.result.max_rel_error},
                      {"max_abs_error", c.result.max_abs_error},
                      {"entries", c.result.entries},
                      {"tolerance", tol},
                      {"pass", pass}});
    };
    for (const auto& c : ndgrad::check_all_ops(cmd.seed, opt)) report(c, checks::kOpTolerance);
    for (const auto& c : checks::check_modules(cmd.seed, opt)) report(c, checks::kOpTolerance);
    if (st->pipeline) report(checks::check_pipeline(cmd.seed, st->entries_per_tensor, opt), checks::kPipelineTolerance);
    io::write_text(run.path("gradcheck.json"), rows.dump(2) + "\n");
    return ok ? kOk : kNumeric;
  };
}

void register_ablate(std::vector<std::unique_ptr<Command>>& cmds, CLI::App& app) {
  struct State {
    std::string model;
    std::vector<std::size_t> iters;
    train::DataConfig data;
    std::size_t scenes = 50;
  };
  auto st = std::make_shared<State>();
  Command& cmd = add_command(cmds, app, "ablate", "Evaluate a trained model truncated at each iteration count", 99991);
  cmd.schema.add("model", st->model, "trained model directory");
  cmd.schema.add("iters", st->iters, "iteration counts (default 1..K)");
  add_scene_fields(cmd.schema, st->data.scene);
  cmd.schema.add("lidar_points", st->data.lidar_points, "LiDAR points per scene");
  cmd.schema.add("scenes", st->scenes, "held-out scenes");
  cmd.action = [st, &cmd](RunContext& run) {
    if (st->model.empty()) throw ConfigError("ablate needs --model");
    const Model model = load_model(st->model);
    if (st->iters.empty())
      for (std::size_t k = 1; k <= model.config().refine.gru_iters; ++k) st->iters.push_back(k);
    st->data.seed = cmd.seed;
    const auto examples = train::make_examples(st->data, st->scenes, cmd.jobs);
    const auto rows = train::ablate_iterations(model, examples, st->iters, cmd.jobs);
    io::write_text(run.path("ablation.csv"), train::ablation_csv(rows));
    for (const auto& r : rows) run.log() << "iters " << r.iters << " epe " << r.metrics.epe << " d1 " << r.metrics.d1 << '\n';
    return kOk;
  };
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Stereo disparity estimation with sparse LiDAR guidance"};
  app.require_subcommand(1);
  std::vector<std::unique_ptr<Command>> cmds;
  register_generate(cmds, app);
  register_train(cmds, app);
  register_infer(cmds, app);
  register_eval(cmds, app);
  register_gradcheck(cmds, app);
  register_ablate(cmds, app);
  for (auto& c : cmds) c->schema.attach(*c->app);

  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  Command* cmd = nullptr;
  for (auto& c : cmds)
    if (c->app->parsed()) cmd = c.get();

  try {
    if (!cmd->config.empty()) {
      const json file = json::parse(io::read_text(cmd->config));
      if (file.contains("subcommand") && file.at("subcommand") != cmd->name)
        throw ConfigError(cmd->config + " is a manifest of '" + file.at("subcommand").get<std::string>() + "'");
      cmd->schema.merge(file);
    }
    RunContext run(cmd->out, out);
    const int code = cmd->action(run);
    run.finish(cmd->name, cmd->schema.to_json(), cmd->seed);
    return code;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const ArgumentError& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const json::exception& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const NumericError& e) {
    err << "numeric failure: " << e.what() << '\n';
    return kNumeric;
  } catch (const std::exception& e) {
    err << "data error: " << e.what() << '\n';
    return kData;
  }
}

}  // namespace stereolidar::cli
