#include "stereolidar/ndgrad.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include <Eigen/Core>

namespace stereolidar::ndgrad {

using detail::Node;

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMatMap = Eigen::Map<const RowMatrix>;

/// Eigen-owned copy of a row-major buffer. Eigen chooses where vectorized
/// loops start from buffer addresses, so products over arbitrary std::vector
/// storage can round differently between otherwise identical runs; owned
/// storage has a fixed alignment.
RowMatrix owned(const double* p, std::size_t rows, std::size_t cols) { return ConstMatMap(p, rows, cols); }

std::shared_ptr<Node> make_node(Shape shape, std::vector<double> value) {
  if (shape_size(shape) != value.size()) {
    throw ShapeError("data length " + std::to_string(value.size()) + " does not match shape " + shape_str(shape));
  }
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  return node;
}

void require_rank(const DiffArray& a, std::size_t rank, const char* op) {
  if (a.rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " + shape_str(a.shape()));
  }
}

}  // namespace

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

// ---------------------------------------------------------------------------
// DiffArray / Tape

DiffArray::DiffArray() : node_(make_node({}, {0.0})) {}

DiffArray DiffArray::constant(Shape shape, std::vector<double> values) {
  return DiffArray(make_node(std::move(shape), std::move(values)));
}

DiffArray DiffArray::full(Shape shape, double value) {
  const auto n = shape_size(shape);
  return constant(std::move(shape), std::vector<double>(n, value));
}

std::size_t DiffArray::dim(std::size_t axis) const {
  if (axis >= rank()) throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_str(shape()));
  return node_->shape[axis];
}

double DiffArray::item() const {
  if (size() != 1) throw ShapeError("item() on array of shape " + shape_str(shape()));
  return node_->value[0];
}

DiffArray DiffArray::detach() const { return constant(node_->shape, node_->value); }

DiffArray Tape::leaf(Shape shape, std::vector<double> values) {
  if (consumed_) throw TapeError("cannot record on a tape that has already been replayed");
  auto node = make_node(std::move(shape), std::move(values));
  node->requires_grad = true;
  node->tape = this;
  nodes_.push_back(node);
  return DiffArray(node);
}

DiffArray Tape::record(Shape shape, std::vector<double> value, const std::vector<DiffArray>& parents,
                       BackwardFn backward) {
  Tape* tape = nullptr;
  for (const auto& p : parents) {
    if (!p.requires_grad()) continue;
    if (tape && p.tape() != tape) throw TapeError("operands belong to different tapes");
    tape = p.tape();
  }
  auto node = make_node(std::move(shape), std::move(value));
  if (!tape) return DiffArray(node);
  if (tape->consumed_) throw TapeError("cannot record on a tape that has already been replayed");
  node->requires_grad = true;
  node->tape = tape;
  node->parents.reserve(parents.size());
  for (const auto& p : parents) node->parents.push_back(p.node_);
  node->backward = std::move(backward);
  tape->nodes_.push_back(node);
  return DiffArray(node);
}

void Tape::backward(const DiffArray& root) {
  if (consumed_) throw TapeError("tape has already been replayed; record a new forward pass");
  if (root.tape() != this) throw TapeError("backward root is not recorded on this tape");
  if (root.size() != 1) throw TapeError("backward root must have a single element, got " + shape_str(root.shape()));
  consumed_ = true;

  root.node_->grad.assign(1, 1.0);
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    Node& node = **it;
    if (node.grad.empty() || !node.backward) continue;
    ParentGrads grads;
    grads.reserve(node.parents.size());
    for (const auto& parent : node.parents) {
      if (!parent->requires_grad) {
        grads.emplace_back();
        continue;
      }
      if (parent->grad.empty()) parent->grad.assign(parent->value.size(), 0.0);
      grads.emplace_back(parent->grad);
    }
    node.backward(node.grad, grads);
  }
  // Interior buffers and closures are no longer needed; leaves keep their grads.
  for (auto& node : nodes_) {
    if (node->backward) {
      node->backward = nullptr;
      node->parents.clear();
    }
  }
}

// ---------------------------------------------------------------------------
// Elementwise

namespace {

bool is_single(const DiffArray& a) { return a.size() == 1; }

DiffArray binary(OpKind kind, const DiffArray& a, const DiffArray& b) {
  const bool same = a.shape() == b.shape();
  if (!same && !is_single(a) && !is_single(b)) {
    throw ShapeError("elementwise: shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()) +
                     " are not broadcast-compatible");
  }
  const Shape out_shape = (same || is_single(b)) ? a.shape() : b.shape();
  const std::size_t n = shape_size(out_shape);
  const std::size_t sa = a.size() == n ? 1 : 0;
  const std::size_t sb = b.size() == n ? 1 : 0;
  auto av = a.data();
  auto bv = b.data();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double x = av[i * sa];
    const double y = bv[i * sb];
    switch (kind) {
      case OpKind::add: out[i] = x + y; break;
      case OpKind::sub: out[i] = x - y; break;
      case OpKind::mul: out[i] = x * y; break;
      case OpKind::div: out[i] = x / y; break;
      default: throw ArgumentError("elementwise: unary kind passed two operands");
    }
  }
  auto an = a.node();
  auto bn = b.node();
  return Tape::record(out_shape, std::move(out), {a, b},
                      [kind, an, bn, n, sa, sb](std::span<const double> g, const ParentGrads& gi) {
                        const auto& av = an->value;
                        const auto& bv = bn->value;
                        auto ga = gi[0];
                        auto gb = gi[1];
                        for (std::size_t i = 0; i < n; ++i) {
                          const double x = av[i * sa];
                          const double y = bv[i * sb];
                          double da = 0.0, db = 0.0;
                          switch (kind) {
                            case OpKind::add: da = g[i]; db = g[i]; break;
                            case OpKind::sub: da = g[i]; db = -g[i]; break;
                            case OpKind::mul: da = g[i] * y; db = g[i] * x; break;
                            case OpKind::div: da = g[i] / y; db = -g[i] * x / (y * y); break;
                            default: break;
                          }
                          if (!ga.empty()) ga[i * sa] += da;
                          if (!gb.empty()) gb[i * sb] += db;
                        }
                      });
}

double sigmoid_value(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

DiffArray unary(OpKind kind, const DiffArray& a) {
  const std::size_t n = a.size();
  auto av = a.data();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double x = av[i];
    switch (kind) {
      case OpKind::abs: out[i] = std::fabs(x); break;
      case OpKind::exp: out[i] = std::exp(x); break;
      case OpKind::sigmoid: out[i] = sigmoid_value(x); break;
      case OpKind::tanh: out[i] = std::tanh(x); break;
      case OpKind::relu: out[i] = x > 0 ? x : 0.0; break;
      default: throw ArgumentError("elementwise: binary kind needs a second operand");
    }
  }
  auto an = a.node();
  // The output values double as saved activations for exp/sigmoid/tanh.
  auto saved = std::make_shared<std::vector<double>>(out);
  return Tape::record(a.shape(), std::move(out), {a},
                      [kind, an, saved](std::span<const double> g, const ParentGrads& gi) {
                        const auto& x = an->value;
                        const auto& y = *saved;
                        auto ga = gi[0];
                        for (std::size_t i = 0; i < g.size(); ++i) {
                          double d = 0.0;
                          switch (kind) {
                            case OpKind::abs: d = x[i] > 0 ? 1.0 : (x[i] < 0 ? -1.0 : 0.0); break;
                            case OpKind::exp: d = y[i]; break;
                            case OpKind::sigmoid: d = y[i] * (1.0 - y[i]); break;
                            case OpKind::tanh: d = 1.0 - y[i] * y[i]; break;
                            case OpKind::relu: d = x[i] > 0 ? 1.0 : 0.0; break;
                            default: break;
                          }
                          ga[i] += g[i] * d;
                        }
                      });
}

}  // namespace

DiffArray elementwise(OpKind kind, const DiffArray& a, const DiffArray* b) {
  switch (kind) {
    case OpKind::add:
    case OpKind::sub:
    case OpKind::mul:
    case OpKind::div:
      if (!b) throw ArgumentError("elementwise: binary kind needs a second operand");
      return binary(kind, a, *b);
    default:
      return unary(kind, a);
  }
}

DiffArray add(const DiffArray& a, const DiffArray& b) { return binary(OpKind::add, a, b); }
DiffArray sub(const DiffArray& a, const DiffArray& b) { return binary(OpKind::sub, a, b); }
DiffArray mul(const DiffArray& a, const DiffArray& b) { return binary(OpKind::mul, a, b); }
DiffArray div(const DiffArray& a, const DiffArray& b) { return binary(OpKind::div, a, b); }
DiffArray abs(const DiffArray& a) { return unary(OpKind::abs, a); }
DiffArray exp(const DiffArray& a) { return unary(OpKind::exp, a); }
DiffArray sigmoid(const DiffArray& a) { return unary(OpKind::sigmoid, a); }
DiffArray tanh(const DiffArray& a) { return unary(OpKind::tanh, a); }
DiffArray relu(const DiffArray& a) { return unary(OpKind::relu, a); }

DiffArray scale(const DiffArray& a, double factor) {
  std::vector<double> out(a.data().begin(), a.data().end());
  for (auto& v : out) v *= factor;
  return Tape::record(a.shape(), std::move(out), {a}, [factor](std::span<const double> g, const ParentGrads& gi) {
    for (std::size_t i = 0; i < g.size(); ++i) gi[0][i] += factor * g[i];
  });
}

DiffArray add_scalar(const DiffArray& a, double offset) {
  std::vector<double> out(a.data().begin(), a.data().end());
  for (auto& v : out) v += offset;
  return Tape::record(a.shape(), std::move(out), {a}, [](std::span<const double> g, const ParentGrads& gi) {
    for (std::size_t i = 0; i < g.size(); ++i) gi[0][i] += g[i];
  });
}

DiffArray neg(const DiffArray& a) { return scale(a, -1.0); }

DiffArray square(const DiffArray& a) { return mul(a, a); }

// ---------------------------------------------------------------------------
// Reductions and structure

DiffArray sum(const DiffArray& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  return Tape::record({}, {s}, {a}, [](std::span<const double> g, const ParentGrads& gi) {
    for (auto& v : gi[0]) v += g[0];
  });
}

DiffArray mean(const DiffArray& a) { return scale(sum(a), 1.0 / static_cast<double>(a.size())); }

DiffArray weighted_sum(const DiffArray& a, std::span<const double> weights) {
  if (weights.size() != a.size()) {
    throw ShapeError("weighted_sum: " + std::to_string(weights.size()) + " weights for " + shape_str(a.shape()));
  }
  auto av = a.data();
  double s = 0.0;
  for (std::size_t i = 0; i < av.size(); ++i) {
    if (weights[i] != 0.0) s += av[i] * weights[i];
  }
  std::vector<double> w(weights.begin(), weights.end());
  return Tape::record({}, {s}, {a}, [w = std::move(w)](std::span<const double> g, const ParentGrads& gi) {
    for (std::size_t i = 0; i < w.size(); ++i) gi[0][i] += g[0] * w[i];
  });
}

DiffArray mean_axis0(const DiffArray& a) {
  if (a.rank() < 1) throw ShapeError("mean_axis0 on a scalar");
  const std::size_t c = a.dim(0);
  const std::size_t inner = a.size() / c;
  Shape out_shape(a.shape().begin() + 1, a.shape().end());
  std::vector<double> out(inner, 0.0);
  auto av = a.data();
  for (std::size_t k = 0; k < c; ++k)
    for (std::size_t i = 0; i < inner; ++i) out[i] += av[k * inner + i];
  const double inv = 1.0 / static_cast<double>(c);
  for (auto& v : out) v *= inv;
  return Tape::record(out_shape, std::move(out), {a}, [c, inner, inv](std::span<const double> g, const ParentGrads& gi) {
    for (std::size_t k = 0; k < c; ++k)
      for (std::size_t i = 0; i < inner; ++i) gi[0][k * inner + i] += g[i] * inv;
  });
}

DiffArray reshape(const DiffArray& a, Shape shape) {
  if (shape_size(shape) != a.size()) {
    throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  }
  std::vector<double> out(a.data().begin(), a.data().end());
  return Tape::record(std::move(shape), std::move(out), {a}, [](std::span<const double> g, const ParentGrads& gi) {
    for (std::size_t i = 0; i < g.size(); ++i) gi[0][i] += g[i];
  });
}

DiffArray concat0(const std::vector<DiffArray>& parts) {
  if (parts.empty()) throw ShapeError("concat0: no operands");
  Shape tail(parts[0].shape().begin() + 1, parts[0].shape().end());
  std::size_t rows = 0;
  std::vector<std::size_t> offsets;
  for (const auto& p : parts) {
    if (p.rank() < 1 || Shape(p.shape().begin() + 1, p.shape().end()) != tail) {
      throw ShapeError("concat0: trailing shape mismatch " + shape_str(p.shape()) + " vs " + shape_str(parts[0].shape()));
    }
    offsets.push_back(rows * shape_size(tail));
    rows += p.dim(0);
  }
  Shape out_shape = tail;
  out_shape.insert(out_shape.begin(), rows);
  std::vector<double> out;
  out.reserve(shape_size(out_shape));
  for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
  return Tape::record(std::move(out_shape), std::move(out), parts,
                      [offsets](std::span<const double> g, const ParentGrads& gi) {
                        for (std::size_t k = 0; k < gi.size(); ++k) {
                          auto dst = gi[k];
                          for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += g[offsets[k] + i];
                        }
                      });
}

DiffArray slice0(const DiffArray& a, std::size_t begin, std::size_t end) {
  if (a.rank() < 1 || begin > end || end > a.dim(0)) {
    throw ShapeError("slice0: range [" + std::to_string(begin) + "," + std::to_string(end) + ") invalid for " +
                     shape_str(a.shape()));
  }
  const std::size_t inner = a.size() / a.dim(0);
  Shape out_shape = a.shape();
  out_shape[0] = end - begin;
  std::vector<double> out(a.data().begin() + begin * inner, a.data().begin() + end * inner);
  const std::size_t off = begin * inner;
  return Tape::record(std::move(out_shape), std::move(out), {a}, [off](std::span<const double> g, const ParentGrads& gi) {
    for (std::size_t i = 0; i < g.size(); ++i) gi[0][off + i] += g[i];
  });
}

DiffArray flip_lastdim(const DiffArray& a) {
  if (a.rank() < 1) throw ShapeError("flip_lastdim on a scalar");
  const std::size_t w = a.shape().back();
  const std::size_t rows = a.size() / w;
  auto av = a.data();
  std::vector<double> out(a.size());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < w; ++j) out[r * w + j] = av[r * w + (w - 1 - j)];
  return Tape::record(a.shape(), std::move(out), {a}, [w, rows](std::span<const double> g, const ParentGrads& gi) {
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < w; ++j) gi[0][r * w + (w - 1 - j)] += g[r * w + j];
  });
}

DiffArray overwrite(const DiffArray& a, std::span<const std::uint8_t> mask, std::span<const double> values) {
  if (mask.size() != a.size() || values.size() != a.size()) {
    throw ShapeError("overwrite: mask/values size does not match " + shape_str(a.shape()));
  }
  std::vector<double> out(a.data().begin(), a.data().end());
  for (std::size_t i = 0; i < out.size(); ++i)
    if (mask[i]) out[i] = values[i];
  std::vector<std::uint8_t> m(mask.begin(), mask.end());
  return Tape::record(a.shape(), std::move(out), {a}, [m = std::move(m)](std::span<const double> g, const ParentGrads& gi) {
    for (std::size_t i = 0; i < g.size(); ++i)
      if (!m[i]) gi[0][i] += g[i];
  });
}

DiffArray pad2d_zero(const DiffArray& a, std::size_t top, std::size_t bottom, std::size_t left, std::size_t right) {
  require_rank(a, 3, "pad2d_zero");
  const std::size_t c = a.dim(0), h = a.dim(1), w = a.dim(2);
  const std::size_t ho = h + top + bottom, wo = w + left + right;
  auto av = a.data();
  std::vector<double> out(c * ho * wo, 0.0);
  for (std::size_t k = 0; k < c; ++k)
    for (std::size_t i = 0; i < h; ++i)
      std::copy_n(av.data() + (k * h + i) * w, w, out.data() + (k * ho + i + top) * wo + left);
  return Tape::record({c, ho, wo}, std::move(out), {a}, [=](std::span<const double> g, const ParentGrads& gi) {
    for (std::size_t k = 0; k < c; ++k)
      for (std::size_t i = 0; i < h; ++i)
        for (std::size_t j = 0; j < w; ++j) gi[0][(k * h + i) * w + j] += g[(k * ho + i + top) * wo + left + j];
  });
}

DiffArray pad_lastdim_edge(const DiffArray& a, std::size_t width) {
  if (a.rank() < 1) throw ShapeError("pad_lastdim_edge on a scalar");
  const std::size_t w = a.shape().back();
  if (width < w || w == 0) throw ShapeError("pad_lastdim_edge: cannot pad width " + std::to_string(w) + " to " + std::to_string(width));
  const std::size_t rows = a.size() / w;
  Shape out_shape = a.shape();
  out_shape.back() = width;
  auto av = a.data();
  std::vector<double> out(rows * width);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < width; ++j) out[r * width + j] = av[r * w + std::min(j, w - 1)];
  return Tape::record(std::move(out_shape), std::move(out), {a},
                      [w, width, rows](std::span<const double> g, const ParentGrads& gi) {
                        for (std::size_t r = 0; r < rows; ++r)
                          for (std::size_t j = 0; j < width; ++j) gi[0][r * w + std::min(j, w - 1)] += g[r * width + j];
                      });
}

// ---------------------------------------------------------------------------
// Network primitives

DiffArray conv2d(const DiffArray& input, const DiffArray& kernels, std::size_t stride, std::size_t padding,
                 const DiffArray* bias) {
  require_rank(input, 3, "conv2d input");
  require_rank(kernels, 4, "conv2d kernels");
  const std::size_t cin = input.dim(0), h = input.dim(1), w = input.dim(2);
  const std::size_t cout = kernels.dim(0), kh = kernels.dim(2), kw = kernels.dim(3);
  if (kernels.dim(1) != cin) {
    throw ShapeError("conv2d: kernel " + shape_str(kernels.shape()) + " expects " + std::to_string(kernels.dim(1)) +
                     " input channels, got " + std::to_string(cin));
  }
  if (kh % 2 == 0 || kw % 2 == 0) throw ShapeError("conv2d: kernel size must be odd, got " + shape_str(kernels.shape()));
  if (stride == 0) throw ShapeError("conv2d: stride must be >= 1");
  const std::size_t ph = h + 2 * padding, pw = w + 2 * padding;
  if (ph < kh || pw < kw || (ph - kh) % stride != 0 || (pw - kw) % stride != 0) {
    throw ShapeError("conv2d: input " + shape_str(input.shape()) + " with kernel " + shape_str(kernels.shape()) +
                     ", stride " + std::to_string(stride) + ", padding " + std::to_string(padding) +
                     " gives a non-integer output size");
  }
  if (bias && (bias->size() != cout)) throw ShapeError("conv2d: bias size must equal output channels");
  const std::size_t ho = (ph - kh) / stride + 1, wo = (pw - kw) / stride + 1;
  const std::size_t patch = cin * kh * kw, npix = ho * wo;

  // im2col: cols[patch, npix]
  auto cols = std::make_shared<RowMatrix>(RowMatrix::Zero(patch, npix));
  auto iv = input.data();
  const bool unit = (kh == 1 && kw == 1 && stride == 1 && padding == 0);
  if (unit) {
    std::copy(iv.begin(), iv.end(), cols->data());
  } else {
    for (std::size_t c = 0; c < cin; ++c)
      for (std::size_t u = 0; u < kh; ++u)
        for (std::size_t v = 0; v < kw; ++v) {
          double* row = cols->data() + ((c * kh + u) * kw + v) * npix;
          for (std::size_t y = 0; y < ho; ++y) {
            const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(y * stride + u) - static_cast<std::ptrdiff_t>(padding);
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
            for (std::size_t x = 0; x < wo; ++x) {
              const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(x * stride + v) - static_cast<std::ptrdiff_t>(padding);
              if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
              row[y * wo + x] = iv[(c * h + iy) * w + ix];
            }
          }
        }
  }

  std::vector<double> out(cout * npix);
  {
    const RowMatrix o = owned(kernels.data().data(), cout, patch) * *cols;
    std::copy(o.data(), o.data() + o.size(), out.begin());
    if (bias) {
      auto bv = bias->data();
      for (std::size_t oc = 0; oc < cout; ++oc)
        for (std::size_t q = 0; q < npix; ++q) out[oc * npix + q] += bv[oc];
    }
  }

  std::vector<DiffArray> parents{input, kernels};
  if (bias) parents.push_back(*bias);
  auto kn = kernels.node();
  return Tape::record(
      {cout, ho, wo}, std::move(out), parents,
      [=](std::span<const double> g, const ParentGrads& gi) {
        const RowMatrix go = owned(g.data(), cout, npix);
        if (!gi[1].empty()) {
          const RowMatrix gk = go * cols->transpose();
          for (std::size_t i = 0; i < gi[1].size(); ++i) gi[1][i] += gk.data()[i];
        }
        if (gi.size() > 2 && !gi[2].empty()) {
          for (std::size_t oc = 0; oc < cout; ++oc) {
            double acc = 0.0;
            for (std::size_t q = 0; q < npix; ++q) acc += g[oc * npix + q];
            gi[2][oc] += acc;
          }
        }
        if (!gi[0].empty()) {
          const RowMatrix gcols = owned(kn->value.data(), cout, patch).transpose() * go;
          auto gin = gi[0];
          if (unit) {
            for (std::size_t i = 0; i < gin.size(); ++i) gin[i] += gcols.data()[i];
            return;
          }
          for (std::size_t c = 0; c < cin; ++c)
            for (std::size_t u = 0; u < kh; ++u)
              for (std::size_t v = 0; v < kw; ++v) {
                const double* row = gcols.data() + ((c * kh + u) * kw + v) * npix;
                for (std::size_t y = 0; y < ho; ++y) {
                  const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(y * stride + u) - static_cast<std::ptrdiff_t>(padding);
                  if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
                  for (std::size_t x = 0; x < wo; ++x) {
                    const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(x * stride + v) - static_cast<std::ptrdiff_t>(padding);
                    if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
                    gin[(c * h + iy) * w + ix] += row[y * wo + x];
                  }
                }
              }
        }
      });
}

DiffArray avgpool_lastdim(const DiffArray& a) {
  if (a.rank() < 1) throw ShapeError("avgpool_lastdim on a scalar");
  const std::size_t w = a.shape().back();
  if (w % 2 != 0) throw ShapeError("avgpool_lastdim: last dimension " + std::to_string(w) + " is odd");
  const std::size_t rows = a.size() / w, wo = w / 2;
  Shape out_shape = a.shape();
  out_shape.back() = wo;
  auto av = a.data();
  std::vector<double> out(rows * wo);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t k = 0; k < wo; ++k) out[r * wo + k] = (av[r * w + 2 * k] + av[r * w + 2 * k + 1]) / 2.0;
  return Tape::record(std::move(out_shape), std::move(out), {a}, [w, wo, rows](std::span<const double> g, const ParentGrads& gi) {
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t k = 0; k < wo; ++k) {
        gi[0][r * w + 2 * k] += 0.5 * g[r * wo + k];
        gi[0][r * w + 2 * k + 1] += 0.5 * g[r * wo + k];
      }
  });
}

DiffArray avgpool2x2(const DiffArray& a) {
  require_rank(a, 3, "avgpool2x2");
  const std::size_t c = a.dim(0), h = a.dim(1), w = a.dim(2);
  const std::size_t ho = (h + 1) / 2, wo = (w + 1) / 2;
  auto av = a.data();
  std::vector<double> out(c * ho * wo, 0.0);
  std::vector<double> inv_count(ho * wo);
  for (std::size_t y = 0; y < ho; ++y)
    for (std::size_t x = 0; x < wo; ++x) {
      const std::size_t ny = std::min<std::size_t>(2, h - 2 * y), nx = std::min<std::size_t>(2, w - 2 * x);
      inv_count[y * wo + x] = 1.0 / static_cast<double>(ny * nx);
    }
  for (std::size_t k = 0; k < c; ++k)
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 0; j < w; ++j) out[(k * ho + i / 2) * wo + j / 2] += av[(k * h + i) * w + j];
  for (std::size_t k = 0; k < c; ++k)
    for (std::size_t p = 0; p < ho * wo; ++p) out[k * ho * wo + p] *= inv_count[p];
  return Tape::record({c, ho, wo}, std::move(out), {a}, [=](std::span<const double> g, const ParentGrads& gi) {
    for (std::size_t k = 0; k < c; ++k)
      for (std::size_t i = 0; i < h; ++i)
        for (std::size_t j = 0; j < w; ++j) {
          const std::size_t o = (i / 2) * wo + j / 2;
          gi[0][(k * h + i) * w + j] += g[k * ho * wo + o] * inv_count[o];
        }
  });
}

DiffArray upsample_nearest(const DiffArray& a, std::size_t height, std::size_t width) {
  require_rank(a, 3, "upsample_nearest");
  const std::size_t c = a.dim(0), h = a.dim(1), w = a.dim(2);
  if (h == 0 || w == 0) throw ShapeError("upsample_nearest: empty input");
  std::vector<std::size_t> ys(height), xs(width);
  for (std::size_t i = 0; i < height; ++i) ys[i] = std::min(h - 1, i * h / height);
  for (std::size_t j = 0; j < width; ++j) xs[j] = std::min(w - 1, j * w / width);
  auto av = a.data();
  std::vector<double> out(c * height * width);
  for (std::size_t k = 0; k < c; ++k)
    for (std::size_t i = 0; i < height; ++i)
      for (std::size_t j = 0; j < width; ++j) out[(k * height + i) * width + j] = av[(k * h + ys[i]) * w + xs[j]];
  return Tape::record({c, height, width}, std::move(out), {a}, [=](std::span<const double> g, const ParentGrads& gi) {
    for (std::size_t k = 0; k < c; ++k)
      for (std::size_t i = 0; i < height; ++i)
        for (std::size_t j = 0; j < width; ++j) gi[0][(k * h + ys[i]) * w + xs[j]] += g[(k * height + i) * width + j];
  });
}

namespace {
inline std::size_t reflect_index(std::ptrdiff_t i, std::size_t n) {
  if (n == 1) return 0;
  if (i < 0) return static_cast<std::size_t>(-i);
  if (i >= static_cast<std::ptrdiff_t>(n)) return 2 * n - 2 - static_cast<std::size_t>(i);
  return static_cast<std::size_t>(i);
}
}  // namespace

DiffArray box3x3_reflect(const DiffArray& a) {
  require_rank(a, 3, "box3x3_reflect");
  const std::size_t c = a.dim(0), h = a.dim(1), w = a.dim(2);
  auto av = a.data();
  std::vector<double> out(a.size(), 0.0);
  constexpr double inv9 = 1.0 / 9.0;
  for (std::size_t k = 0; k < c; ++k)
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 0; j < w; ++j) {
        double s = 0.0;
        for (int di = -1; di <= 1; ++di)
          for (int dj = -1; dj <= 1; ++dj)
            s += av[(k * h + reflect_index(static_cast<std::ptrdiff_t>(i) + di, h)) * w +
                    reflect_index(static_cast<std::ptrdiff_t>(j) + dj, w)];
        out[(k * h + i) * w + j] = s * inv9;
      }
  return Tape::record(a.shape(), std::move(out), {a}, [=](std::span<const double> g, const ParentGrads& gi) {
    for (std::size_t k = 0; k < c; ++k)
      for (std::size_t i = 0; i < h; ++i)
        for (std::size_t j = 0; j < w; ++j) {
          const double gv = g[(k * h + i) * w + j] * inv9;
          for (int di = -1; di <= 1; ++di)
            for (int dj = -1; dj <= 1; ++dj)
              gi[0][(k * h + reflect_index(static_cast<std::ptrdiff_t>(i) + di, h)) * w +
                    reflect_index(static_cast<std::ptrdiff_t>(j) + dj, w)] += gv;
        }
  });
}

DiffArray softmax_lastdim(const DiffArray& a) {
  if (a.rank() < 1) throw ShapeError("softmax_lastdim on a scalar");
  const std::size_t w = a.shape().back();
  const std::size_t rows = a.size() / w;
  auto av = a.data();
  std::vector<double> out(a.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = av.data() + r * w;
    double* y = out.data() + r * w;
    const double m = *std::max_element(x, x + w);
    double s = 0.0;
    for (std::size_t j = 0; j < w; ++j) s += (y[j] = std::exp(x[j] - m));
    for (std::size_t j = 0; j < w; ++j) y[j] /= s;
  }
  auto saved = std::make_shared<std::vector<double>>(out);
  return Tape::record(a.shape(), std::move(out), {a}, [w, rows, saved](std::span<const double> g, const ParentGrads& gi) {
    const auto& y = *saved;
    for (std::size_t r = 0; r < rows; ++r) {
      double dot = 0.0;
      for (std::size_t j = 0; j < w; ++j) dot += g[r * w + j] * y[r * w + j];
      for (std::size_t j = 0; j < w; ++j) gi[0][r * w + j] += y[r * w + j] * (g[r * w + j] - dot);
    }
  });
}

LinearSample linear_sample_weights(double x, std::size_t width) {
  LinearSample s;
  if (width <= 1) return s;
  const double hi = static_cast<double>(width - 1);
  if (!(x >= 0.0)) {  // also catches NaN
    s.i0 = 0;
    s.i1 = 1;
    return s;
  }
  if (x > hi) {
    s.i0 = width - 2;
    s.i1 = width - 1;
    s.w0 = 0.0;
    s.w1 = 1.0;
    return s;
  }
  const std::size_t i0 = std::min(static_cast<std::size_t>(x), width - 2);
  const double t = x - static_cast<double>(i0);
  s.i0 = i0;
  s.i1 = i0 + 1;
  s.w0 = 1.0 - t;
  s.w1 = t;
  s.inside = true;
  return s;
}

DiffArray sample_rows(const DiffArray& src, std::span<const std::uint32_t> rows, const DiffArray& coords,
                      Shape out_shape) {
  if (src.rank() < 1) throw ShapeError("sample_rows: source must have rank >= 1");
  const std::size_t w = src.shape().back();
  const std::size_t nrows = src.size() / w;
  const std::size_t q = rows.size();
  if (coords.size() != q || shape_size(out_shape) != q) {
    throw ShapeError("sample_rows: " + std::to_string(q) + " queries, " + std::to_string(coords.size()) +
                     " coordinates, output " + shape_str(out_shape));
  }
  auto sv = src.data();
  auto cv = coords.data();
  std::vector<double> out(q);
  std::vector<LinearSample> taps(q);
  for (std::size_t k = 0; k < q; ++k) {
    if (rows[k] >= nrows) throw ShapeError("sample_rows: row index out of range");
    taps[k] = linear_sample_weights(cv[k], w);
    const double* row = sv.data() + static_cast<std::size_t>(rows[k]) * w;
    out[k] = taps[k].w0 * row[taps[k].i0] + (taps[k].w1 != 0.0 ? taps[k].w1 * row[taps[k].i1] : 0.0);
  }
  std::vector<std::uint32_t> rowv(rows.begin(), rows.end());
  auto sn = src.node();
  return Tape::record(std::move(out_shape), std::move(out), {src, coords},
                      [w, sn, rowv = std::move(rowv), taps = std::move(taps)](std::span<const double> g,
                                                                               const ParentGrads& gi) {
                        const auto& sv = sn->value;
                        for (std::size_t k = 0; k < taps.size(); ++k) {
                          const std::size_t base = static_cast<std::size_t>(rowv[k]) * w;
                          const auto& t = taps[k];
                          if (!gi[0].empty()) {
                            gi[0][base + t.i0] += g[k] * t.w0;
                            if (t.w1 != 0.0) gi[0][base + t.i1] += g[k] * t.w1;
                          }
                          if (!gi[1].empty() && t.inside) gi[1][k] += g[k] * (sv[base + t.i1] - sv[base + t.i0]);
                        }
                      });
}

DiffArray bilinear_sample_1d(const DiffArray& row, const DiffArray& x) {
  if (row.rank() != 1) throw ShapeError("bilinear_sample_1d: row must be 1-D, got " + shape_str(row.shape()));
  if (x.size() != 1) throw ShapeError("bilinear_sample_1d: coordinate must be a single element");
  const std::uint32_t r0 = 0;
  return sample_rows(row, std::span<const std::uint32_t>(&r0, 1), x, {});
}

}  // namespace stereolidar::ndgrad
