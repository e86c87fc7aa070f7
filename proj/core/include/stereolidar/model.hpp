#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "stereolidar/correlation.hpp"
#include "stereolidar/features.hpp"
#include "stereolidar/params.hpp"
#include "stereolidar/refine.hpp"
#include "stereolidar/sparse.hpp"

namespace stereolidar {

using ndgrad::DiffArray;

struct ModelConfig {
  features::FeatureConfig features;
  correlation::LookupConfig lookup;
  refine::RefineConfig refine;

  void validate() const;
};

struct ForwardOptions {
  bool all_iterations = false;          ///< upsample every d_k, not just the last
  std::optional<std::size_t> gru_iters;  ///< overrides refine.gru_iters
};

struct ForwardOutput {
  std::vector<DiffArray> coarse;        ///< d_0 … d_K at 1/s
  std::vector<DiffArray> disparities;   ///< full resolution; last entry is the prediction
  const DiffArray& final() const { return disparities.back(); }
};

/// Left-view prediction and the right-view prediction produced by running the
/// same weights on the mirrored, swapped pair. The right result stays in the
/// mirrored frame, where it plays the role of a left disparity.
struct StereoOutput {
  ForwardOutput left;
  ForwardOutput right_mirrored;
};

/// Feature, context and update networks over one parameter store.
class Model {
 public:
  Model(const ModelConfig& cfg, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  ParamStore& params() { return store_; }
  const ParamStore& params() const { return store_; }

  /// left/right [3,H0,W0] in [0,1]; `sparse` at H0×W0 in the left view. When
  /// sparse input is enabled the full-resolution output is re-anchored to the
  /// seeds after upsampling.
  ForwardOutput forward(const BoundParams& p, const DiffArray& left, const DiffArray& right,
                        const SparseDisparity& sparse, const ForwardOptions& opt = {}) const;

  StereoOutput forward_stereo(const BoundParams& p, const DiffArray& left, const DiffArray& right,
                              const SparseDisparity& sparse, const ForwardOptions& opt = {}) const;

  void save(const std::filesystem::path& blob, const std::filesystem::path& sidecar) const {
    store_.save(blob, sidecar);
  }
  void load(const std::filesystem::path& blob, const std::filesystem::path& sidecar) { store_.load(blob, sidecar); }

 private:
  ModelConfig cfg_;
  ParamStore store_;
  features::FeatureNets nets_;
  refine::UpdateNet update_;
};

}  // namespace stereolidar
