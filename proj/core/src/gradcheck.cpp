#include "stereolidar/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace stereolidar::ndgrad {

double relative_error(double a, double b, double floor) {
  const double denom = std::max({std::fabs(a), std::fabs(b), floor});
  return std::fabs(a - b) / denom;
}

GradCheckResult check_gradients(const ScalarFn& fn, const std::vector<GradCheckInput>& inputs,
                                const GradCheckOptions& options) {
  // Tape gradient at the unperturbed point.
  std::vector<std::vector<double>> tape_grads;
  {
    Tape tape;
    std::vector<DiffArray> leaves;
    for (const auto& in : inputs) leaves.push_back(tape.leaf(in.shape, in.values));
    const DiffArray out = fn(tape, leaves);
    if (out.size() != 1) throw TapeError("check_gradients: function must return a single element");
    if (!out.requires_grad()) {
      for (const auto& l : leaves) tape_grads.emplace_back(l.size(), 0.0);
    } else {
      tape.backward(out);
      for (const auto& l : leaves) {
        auto g = l.grad();
        tape_grads.emplace_back(g.empty() ? std::vector<double>(l.size(), 0.0) : std::vector<double>(g.begin(), g.end()));
      }
    }
  }

  auto evaluate = [&](const std::vector<GradCheckInput>& point) {
    std::vector<DiffArray> consts;
    for (const auto& in : point) consts.push_back(DiffArray::constant(in.shape, in.values));
    Tape scratch;
    return fn(scratch, consts).item();
  };

  GradCheckResult result;
  std::mt19937_64 rng(options.seed);
  std::vector<GradCheckInput> point = inputs;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const std::size_t n = inputs[k].values.size();
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    if (options.max_entries_per_input < n) {
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(options.max_entries_per_input);
      std::sort(idx.begin(), idx.end());
    }
    for (std::size_t i : idx) {
      const double x0 = inputs[k].values[i];
      point[k].values[i] = x0 + options.step;
      const double fp = evaluate(point);
      point[k].values[i] = x0 - options.step;
      const double fm = evaluate(point);
      point[k].values[i] = x0;
      const double fd = (fp - fm) / (2.0 * options.step);
      const double tg = tape_grads[k][i];
      const double rel = relative_error(tg, fd, options.floor);
      result.max_abs_error = std::max(result.max_abs_error, std::fabs(tg - fd));
      if (rel > result.max_rel_error) {
        result.max_rel_error = rel;
        result.worst_input = k;
        result.worst_entry = i;
      }
      ++result.entries;
    }
  }
  return result;
}

namespace {

std::vector<double> random_values(std::mt19937_64& rng, std::size_t n, double lo, double hi) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> v(n);
  for (auto& x : v) x = dist(rng);
  return v;
}

/// Values bounded away from zero so kinks (abs, relu) are not straddled by
/// the finite-difference step.
std::vector<double> away_from_zero(std::mt19937_64& rng, std::size_t n) {
  auto v = random_values(rng, n, 0.1, 2.0);
  std::bernoulli_distribution sign(0.5);
  for (auto& x : v)
    if (sign(rng)) x = -x;
  return v;
}

/// Σ w·f(x) with fixed random weights, so every output element matters.
DiffArray project(const DiffArray& out, std::uint64_t seed) {
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  return weighted_sum(out, random_values(rng, out.size(), -1.0, 1.0));
}

/// Coordinates whose fractional part stays inside (0.1, 0.9), so the
/// floor() switch of linear interpolation is never crossed.
std::vector<double> off_grid_coords(std::mt19937_64& rng, std::size_t n, double lo, double hi) {
  auto v = random_values(rng, n, lo, hi);
  std::uniform_real_distribution<double> frac(0.1, 0.9);
  for (auto& x : v) x = std::floor(x) + frac(rng);
  return v;
}

}  // namespace

std::vector<OpCheck> check_all_ops(std::uint64_t seed, const GradCheckOptions& options) {
  std::vector<OpCheck> checks;
  std::mt19937_64 rng(seed);
  auto run = [&](const std::string& name, const std::vector<GradCheckInput>& inputs,
                 const std::function<DiffArray(const std::vector<DiffArray>&)>& op) {
    const std::uint64_t proj_seed = rng();
    auto fn = [&](Tape&, const std::vector<DiffArray>& x) { return project(op(x), proj_seed); };
    GradCheckOptions opt = options;
    opt.seed = rng();
    checks.push_back({name, check_gradients(fn, inputs, opt)});
  };

  const Shape v6{2, 3};
  run("add", {{v6, random_values(rng, 6, -2, 2)}, {v6, random_values(rng, 6, -2, 2)}},
      [](const auto& x) { return add(x[0], x[1]); });
  run("add_broadcast", {{v6, random_values(rng, 6, -2, 2)}, {{}, random_values(rng, 1, -2, 2)}},
      [](const auto& x) { return add(x[0], x[1]); });
  run("sub", {{v6, random_values(rng, 6, -2, 2)}, {v6, random_values(rng, 6, -2, 2)}},
      [](const auto& x) { return sub(x[0], x[1]); });
  run("mul", {{v6, random_values(rng, 6, -2, 2)}, {v6, random_values(rng, 6, -2, 2)}},
      [](const auto& x) { return mul(x[0], x[1]); });
  run("mul_broadcast", {{{}, random_values(rng, 1, -2, 2)}, {v6, random_values(rng, 6, -2, 2)}},
      [](const auto& x) { return mul(x[0], x[1]); });
  run("div", {{v6, random_values(rng, 6, -2, 2)}, {v6, away_from_zero(rng, 6)}},
      [](const auto& x) { return div(x[0], x[1]); });
  run("abs", {{v6, away_from_zero(rng, 6)}}, [](const auto& x) { return abs(x[0]); });
  run("exp", {{v6, random_values(rng, 6, -2, 2)}}, [](const auto& x) { return exp(x[0]); });
  run("sigmoid", {{v6, random_values(rng, 6, -4, 4)}}, [](const auto& x) { return sigmoid(x[0]); });
  run("tanh", {{v6, random_values(rng, 6, -3, 3)}}, [](const auto& x) { return tanh(x[0]); });
  run("relu", {{v6, away_from_zero(rng, 6)}}, [](const auto& x) { return relu(x[0]); });
  run("scale", {{v6, random_values(rng, 6, -2, 2)}}, [](const auto& x) { return scale(x[0], -1.7); });
  run("add_scalar", {{v6, random_values(rng, 6, -2, 2)}}, [](const auto& x) { return add_scalar(x[0], 0.3); });
  run("sum", {{v6, random_values(rng, 6, -2, 2)}}, [](const auto& x) { return sum(x[0]); });
  run("mean_axis0", {{{3, 2, 2}, random_values(rng, 12, -2, 2)}}, [](const auto& x) { return mean_axis0(x[0]); });
  run("reshape", {{v6, random_values(rng, 6, -2, 2)}}, [](const auto& x) { return reshape(x[0], {3, 2}); });
  run("concat0", {{{1, 3}, random_values(rng, 3, -2, 2)}, {v6, random_values(rng, 6, -2, 2)}},
      [](const auto& x) { return concat0({x[0], x[1]}); });
  run("slice0", {{{4, 3}, random_values(rng, 12, -2, 2)}}, [](const auto& x) { return slice0(x[0], 1, 3); });
  run("flip_lastdim", {{{2, 5}, random_values(rng, 10, -2, 2)}}, [](const auto& x) { return flip_lastdim(x[0]); });
  {
    std::vector<std::uint8_t> mask{1, 0, 0, 1, 0, 0};
    std::vector<double> vals{3, 0, 0, -1, 0, 0};
    run("overwrite", {{v6, random_values(rng, 6, -2, 2)}},
        [mask, vals](const auto& x) { return overwrite(x[0], mask, vals); });
  }
  run("pad2d_zero", {{{2, 3, 4}, random_values(rng, 24, -2, 2)}},
      [](const auto& x) { return pad2d_zero(x[0], 0, 1, 2, 1); });
  run("pad_lastdim_edge", {{{2, 3}, random_values(rng, 6, -2, 2)}},
      [](const auto& x) { return pad_lastdim_edge(x[0], 5); });
  run("conv2d",
      {{{2, 5, 5}, random_values(rng, 50, -1, 1)},
       {{3, 2, 3, 3}, random_values(rng, 54, -1, 1)},
       {{3}, random_values(rng, 3, -1, 1)}},
      [](const auto& x) { return conv2d(x[0], x[1], 1, 1, &x[2]); });
  run("conv2d_stride2", {{{2, 5, 7}, random_values(rng, 70, -1, 1)}, {{2, 2, 3, 3}, random_values(rng, 36, -1, 1)}},
      [](const auto& x) { return conv2d(x[0], x[1], 2, 1); });
  run("avgpool_lastdim", {{{3, 4}, random_values(rng, 12, -2, 2)}}, [](const auto& x) { return avgpool_lastdim(x[0]); });
  run("avgpool2x2", {{{2, 3, 5}, random_values(rng, 30, -2, 2)}}, [](const auto& x) { return avgpool2x2(x[0]); });
  run("upsample_nearest", {{{2, 2, 3}, random_values(rng, 12, -2, 2)}},
      [](const auto& x) { return upsample_nearest(x[0], 4, 5); });
  run("box3x3_reflect", {{{2, 4, 5}, random_values(rng, 40, -2, 2)}}, [](const auto& x) { return box3x3_reflect(x[0]); });
  run("softmax_lastdim", {{{9}, random_values(rng, 9, -3, 3)}}, [](const auto& x) { return softmax_lastdim(x[0]); });
  run("bilinear_sample_1d", {{{6}, random_values(rng, 6, -2, 2)}, {{}, off_grid_coords(rng, 1, 0.0, 4.9)}},
      [](const auto& x) { return bilinear_sample_1d(x[0], x[1]); });
  {
    std::vector<std::uint32_t> rows{0, 2, 1, 1, 2};
    run("sample_rows", {{{3, 7}, random_values(rng, 21, -2, 2)}, {{5}, off_grid_coords(rng, 5, -0.0, 5.9)}},
        [rows](const auto& x) { return sample_rows(x[0], rows, x[1], {5}); });
  }
  return checks;
}

}  // namespace stereolidar::ndgrad
