#pragma once

// Minimal reverse-mode differentiable array engine.
//
// Arrays are dense, row-major, 64-bit. Every operation that touches an array
// which requires a gradient is recorded on that array's Tape; Tape::backward
// replays the recorded rules in reverse creation order, which is a valid
// topological order because a node can only depend on older nodes.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "stereolidar/errors.hpp"

namespace stereolidar::ndgrad {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_str(const Shape& shape);

class Tape;

/// Gradient buffers handed to a backward rule, one per parent. A span is
/// empty when the corresponding parent does not require a gradient.
using ParentGrads = std::vector<std::span<double>>;

/// Backward rule: receives the output gradient and accumulates (+=) into the
/// parent gradient buffers.
using BackwardFn = std::function<void(std::span<const double> grad_out, const ParentGrads& grad_in)>;

namespace detail {
struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  Tape* tape = nullptr;
  std::vector<std::shared_ptr<Node>> parents;
  BackwardFn backward;
};
}  // namespace detail

/// Dense N-dimensional array, optionally attached to a gradient tape.
///
/// Copies are shallow handles to the same node; values are immutable once
/// created.
class DiffArray {
 public:
  DiffArray();

  static DiffArray constant(Shape shape, std::vector<double> values);
  static DiffArray full(Shape shape, double value);
  static DiffArray zeros(Shape shape) { return full(std::move(shape), 0.0); }
  static DiffArray scalar(double value) { return full({}, value); }

  const Shape& shape() const { return node_->shape; }
  std::size_t dim(std::size_t axis) const;
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t size() const { return node_->value.size(); }
  std::span<const double> data() const { return node_->value; }
  double item() const;

  bool requires_grad() const { return node_->requires_grad; }
  Tape* tape() const { return node_->tape; }

  /// Accumulated gradient after Tape::backward; empty if none reached this node.
  std::span<const double> grad() const { return node_->grad; }

  /// Same values, detached from any tape.
  DiffArray detach() const;

  const std::shared_ptr<detail::Node>& node() const { return node_; }

 private:
  explicit DiffArray(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::Node> node_;

  friend class Tape;
};

/// Ordered record of operations for one forward/backward pass.
///
/// Single-threaded. Independent tapes share no mutable state and may be used
/// on separate threads.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf that requires a gradient.
  DiffArray leaf(Shape shape, std::vector<double> values);

  /// Extension point for fused operations. If no parent requires a gradient
  /// the result is a plain constant and `backward` is dropped.
  static DiffArray record(Shape shape, std::vector<double> value, const std::vector<DiffArray>& parents,
                          BackwardFn backward);

  /// Reverse pass from a single-element root. A tape can be replayed once.
  void backward(const DiffArray& root);

  bool consumed() const { return consumed_; }
  std::size_t num_nodes() const { return nodes_.size(); }

 private:
  std::vector<std::shared_ptr<detail::Node>> nodes_;
  bool consumed_ = false;
};

// ---------------------------------------------------------------------------
// Elementwise

enum class OpKind { add, sub, mul, div, abs, exp, sigmoid, tanh, relu };

/// Binary kinds need `b`; unary kinds ignore it. Broadcasting is limited to
/// equal shapes and single-element operands.
DiffArray elementwise(OpKind kind, const DiffArray& a, const DiffArray* b = nullptr);

DiffArray add(const DiffArray& a, const DiffArray& b);
DiffArray sub(const DiffArray& a, const DiffArray& b);
DiffArray mul(const DiffArray& a, const DiffArray& b);
DiffArray div(const DiffArray& a, const DiffArray& b);
DiffArray abs(const DiffArray& a);
DiffArray exp(const DiffArray& a);
DiffArray sigmoid(const DiffArray& a);
DiffArray tanh(const DiffArray& a);
DiffArray relu(const DiffArray& a);

DiffArray scale(const DiffArray& a, double factor);
DiffArray add_scalar(const DiffArray& a, double offset);
DiffArray neg(const DiffArray& a);
DiffArray square(const DiffArray& a);

inline DiffArray operator+(const DiffArray& a, const DiffArray& b) { return add(a, b); }
inline DiffArray operator-(const DiffArray& a, const DiffArray& b) { return sub(a, b); }
inline DiffArray operator*(const DiffArray& a, const DiffArray& b) { return mul(a, b); }
inline DiffArray operator/(const DiffArray& a, const DiffArray& b) { return div(a, b); }
inline DiffArray operator*(double c, const DiffArray& a) { return scale(a, c); }
inline DiffArray operator-(const DiffArray& a) { return neg(a); }

// ---------------------------------------------------------------------------
// Reductions and structure

DiffArray sum(const DiffArray& a);
DiffArray mean(const DiffArray& a);

/// Σ a[i]·weights[i] with constant weights.
DiffArray weighted_sum(const DiffArray& a, std::span<const double> weights);

/// Mean over the leading axis: [C, ...] -> [...].
DiffArray mean_axis0(const DiffArray& a);

DiffArray reshape(const DiffArray& a, Shape shape);

/// Concatenation along the leading axis; trailing dims must agree.
DiffArray concat0(const std::vector<DiffArray>& parts);

/// Rows [begin, end) of the leading axis.
DiffArray slice0(const DiffArray& a, std::size_t begin, std::size_t end);

/// Reverses the last axis.
DiffArray flip_lastdim(const DiffArray& a);

/// out = mask ? values : a. Masked positions carry no gradient back to `a`.
DiffArray overwrite(const DiffArray& a, std::span<const std::uint8_t> mask, std::span<const double> values);

/// Zero padding of the two trailing (spatial) axes of [C,H,W].
DiffArray pad2d_zero(const DiffArray& a, std::size_t top, std::size_t bottom, std::size_t left, std::size_t right);

/// Right-pads the last axis to `width` by repeating the final column.
DiffArray pad_lastdim_edge(const DiffArray& a, std::size_t width);

// ---------------------------------------------------------------------------
// Network primitives

/// 2-D cross-correlation with zero padding. input [C_in,H,W], kernels
/// [C_out,C_in,kh,kw], optional bias [C_out].
DiffArray conv2d(const DiffArray& input, const DiffArray& kernels, std::size_t stride, std::size_t padding,
                 const DiffArray* bias = nullptr);

/// Stride-2 pairwise mean over the last axis, which must be even.
DiffArray avgpool_lastdim(const DiffArray& a);

/// 2x2 spatial average of [C,H,W] -> [C,ceil(H/2),ceil(W/2)]; partial
/// windows at odd borders average the pixels they cover.
DiffArray avgpool2x2(const DiffArray& a);

/// Nearest-neighbour resize of [C,h,w] to [C,H,W].
DiffArray upsample_nearest(const DiffArray& a, std::size_t height, std::size_t width);

/// Per-channel 3x3 mean over [C,H,W] with reflection padding.
DiffArray box3x3_reflect(const DiffArray& a);

DiffArray softmax_lastdim(const DiffArray& a);

/// Linear interpolation of a 1-D row at fractional position x (single
/// element). Positions are clamped to [0, W-1]; the gradient with respect to
/// x vanishes outside that interval.
DiffArray bilinear_sample_1d(const DiffArray& row, const DiffArray& x);

/// Batched form of bilinear_sample_1d. `src` is viewed as R rows of its last
/// dimension; query q samples row `rows[q]` at `coords[q]`. The result has
/// shape `out_shape` (whose size must equal the number of queries).
DiffArray sample_rows(const DiffArray& src, std::span<const std::uint32_t> rows, const DiffArray& coords,
                      Shape out_shape);

/// Forward value and derivatives of clamped linear interpolation; shared by
/// every sampling op so their conventions cannot drift apart.
struct LinearSample {
  std::size_t i0 = 0;
  std::size_t i1 = 0;
  double w0 = 1.0;  ///< weight of row[i0]
  double w1 = 0.0;  ///< weight of row[i1]
  bool inside = false;  ///< false when x was clamped (zero d/dx)
};
LinearSample linear_sample_weights(double x, std::size_t width);

}  // namespace stereolidar::ndgrad
