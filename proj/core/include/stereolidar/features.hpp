#pragma once

#include <array>
#include <cstddef>
#include <random>

#include "stereolidar/ndgrad.hpp"
#include "stereolidar/params.hpp"

namespace stereolidar::features {

using ndgrad::DiffArray;

struct FeatureConfig {
  std::size_t feature_channels = 32;  ///< C of the correlation features
  std::size_t trunk_channels = 32;    ///< width of the shared backbone layers
  std::size_t context_channels = 32;  ///< C_ctx
  std::size_t hidden_channels = 32;   ///< C_h, GRU state width
  std::size_t downsample = 4;         ///< s, 4 or 8

  void validate() const;
};

/// Left/right feature maps [C,H,W] at 1/s resolution.
struct FeatureMaps {
  DiffArray left;
  DiffArray right;
};

/// Raw affinities [8,H,W]. Channel n holds the offset (a,b) at position n of
/// the row-major scan of {-1,0,1}^2 with (0,0) removed:
///   0:(-1,-1) 1:(-1,0) 2:(-1,1) 3:(0,-1) 4:(0,1) 5:(1,-1) 6:(1,0) 7:(1,1)
struct AffinityMap {
  DiffArray raw;
};

inline constexpr std::array<std::array<int, 2>, 8> kAffinityOffsets{{
    {-1, -1}, {-1, 0}, {-1, 1}, {0, -1}, {0, 1}, {1, -1}, {1, 0}, {1, 1}}};

struct ContextBundle {
  DiffArray context;      ///< [C_ctx,H,W], relu
  DiffArray hidden_init;  ///< [C_h,H,W], tanh-bounded
  AffinityMap affinity;
};

/// Backbone shared by the feature and context networks: strided convs with
/// relu, one residual block, and a linear output conv.
struct Encoder {
  std::vector<ConvLayer> downs;  ///< relu after each
  ConvLayer res_a;
  ConvLayer res_b;
  ConvLayer out;

  /// Returns {trunk activations, output}.
  std::pair<DiffArray, DiffArray> operator()(const BoundParams& p, const DiffArray& image) const;
};

/// Parameter layout of the feature, context and affinity networks.
struct FeatureNets {
  FeatureConfig cfg;
  Encoder feature;
  Encoder context;
  ConvLayer aff_res_a;
  ConvLayer aff_res_b;
  ConvLayer aff_out;

  static FeatureNets create(ParamStore& store, const FeatureConfig& cfg, std::mt19937_64& rng);
};

/// Maps [0,1] RGB [3,H0,W0] to C×(H0/s)×(W0/s). Raises ShapeError when H0 or
/// W0 is not divisible by s.
DiffArray extract_features(const FeatureNets& nets, const BoundParams& params, const DiffArray& image);

ContextBundle extract_context(const FeatureNets& nets, const BoundParams& params, const DiffArray& image);

}  // namespace stereolidar::features
