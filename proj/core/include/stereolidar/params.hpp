#pragma once

#include <cstddef>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "stereolidar/ndgrad.hpp"

namespace stereolidar {

struct ParamTensor {
  std::string name;
  ndgrad::Shape shape;
  std::vector<double> values;
};

/// Ordered, named collection of model parameters.
///
/// Checkpoints are a flat little-endian float64 blob plus a JSON sidecar
/// listing `{name, shape}` in blob order.
class ParamStore {
 public:
  std::size_t add(std::string name, ndgrad::Shape shape, std::vector<double> values);

  /// Conv kernel [cout,cin,k,k] and bias [cout], centered-uniform in
  /// ±1/sqrt(fan_in) unless `zero` is set. Returns the kernel index; the bias
  /// immediately follows it.
  std::size_t add_conv(const std::string& name, std::size_t cin, std::size_t cout, std::size_t k, std::mt19937_64& rng,
                       bool zero = false);

  std::size_t size() const { return tensors_.size(); }
  const ParamTensor& operator[](std::size_t i) const { return tensors_.at(i); }
  ParamTensor& operator[](std::size_t i) { return tensors_.at(i); }
  std::size_t index_of(const std::string& name) const;

  std::size_t num_values() const;
  std::vector<double> flatten() const;
  void assign_flat(std::span<const double> flat);

  void save(const std::filesystem::path& blob, const std::filesystem::path& sidecar) const;
  /// Loads values into an already-structured store; names and shapes must match.
  void load(const std::filesystem::path& blob, const std::filesystem::path& sidecar);

  bool operator==(const ParamStore& other) const;

 private:
  std::vector<ParamTensor> tensors_;
};

/// Parameters bound for one forward pass: leaves on `tape`, or constants
/// when `tape` is null.
class BoundParams {
 public:
  BoundParams(const ParamStore& store, ndgrad::Tape* tape);
  /// Arrays supplied directly, in store order.
  explicit BoundParams(std::vector<ndgrad::DiffArray> arrays) : arrays_(std::move(arrays)) {}

  const ndgrad::DiffArray& operator[](std::size_t i) const { return arrays_.at(i); }
  std::size_t size() const { return arrays_.size(); }

  /// Flattened gradients in store order (zeros where none reached).
  std::vector<double> flat_grad() const;

 private:
  std::vector<ndgrad::DiffArray> arrays_;
};

/// A conv layer referencing its kernel and bias inside a ParamStore.
/// Stride-2 layers pad asymmetrically (bottom/right) so that even inputs
/// halve exactly.
struct ConvLayer {
  std::size_t weight = 0;
  std::size_t stride = 1;
  std::size_t padding = 0;

  ndgrad::DiffArray operator()(const BoundParams& params, const ndgrad::DiffArray& x) const;
};

ConvLayer make_conv(ParamStore& store, const std::string& name, std::size_t cin, std::size_t cout, std::size_t k,
                    std::size_t stride, std::mt19937_64& rng, bool zero = false);

}  // namespace stereolidar
