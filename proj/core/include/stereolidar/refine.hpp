#pragma once

#include <cstddef>
#include <random>
#include <vector>

#include "stereolidar/correlation.hpp"
#include "stereolidar/features.hpp"
#include "stereolidar/ndgrad.hpp"
#include "stereolidar/params.hpp"
#include "stereolidar/sparse.hpp"

namespace stereolidar::refine {

using ndgrad::DiffArray;

struct RefineConfig {
  std::size_t gru_iters = 10;
  std::size_t cspn_iters = 10;  ///< t_max per propagation
  std::size_t gru_levels = 2;   ///< 1..3 resolutions of the recurrent update
  double eps_norm = 1e-8;
  bool use_cspn = true;
  bool use_sparse = true;

  void validate() const;
};

/// Normalized 3x3 kernel [9,H,W], channels in row-major offset order with the
/// center at channel 4:
///   neighbors = raw / (Σ|raw| + eps), center = 1 - Σ neighbors.
DiffArray normalize_affinity(const features::AffinityMap& affinity, double eps);

/// Index of the 3x3 channel holding offset (a,b).
constexpr std::size_t kernel_channel(int a, int b) { return static_cast<std::size_t>((a + 1) * 3 + (b + 1)); }
inline constexpr std::size_t kCenterChannel = 4;

/// One propagation step with replicate-edge neighbors:
///   out(p) = Â_c(p)·d0(p) + Σ_n Â_n(p)·dt(p+n)
/// evaluated as d0(p) + Σ_n Â_n(p)·(dt(p+n) − d0(p)), which is the same
/// quantity when the channels sum to one and keeps constant fields exact.
DiffArray cspn_step(const DiffArray& kernel, const DiffArray& d0, const DiffArray& dt);

/// t_max propagation steps from d_in; sparse values are re-imposed after every
/// step at valid positions.
DiffArray cspn_propagate(const DiffArray& d_in, const DiffArray& kernel, const SparseDisparity* sparse,
                         std::size_t t_max);

/// out = valid ? sparse value : d.
DiffArray anchor(const DiffArray& d, const SparseDisparity& sparse);

/// Full-resolution seeds to the 1/s grid: a cell is valid when at least one
/// seed falls in its s×s block; its value is the mean seed disparity / s.
SparseDisparity project_sparse(const SparseDisparity& full, std::size_t s);

/// Fine pixel = s · Σ_n softmax(mask)_n · d(neighbor n), replicate-edge.
/// mask_logits channel n·s² + u·s + v weights neighbor n for sub-pixel (u,v).
DiffArray convex_upsample(const DiffArray& d, const DiffArray& mask_logits, std::size_t s);

struct ConvGru {
  ConvLayer z;
  ConvLayer r;
  ConvLayer q;

  DiffArray operator()(const BoundParams& p, const DiffArray& h, const DiffArray& x) const;
};

/// Motion encoder, multi-resolution ConvGRU and the Δ / mask heads.
struct UpdateNet {
  std::size_t hidden_channels = 0;
  std::size_t upsample = 4;
  std::size_t levels = 2;
  ConvLayer corr_conv;
  ConvLayer disp_conv;
  ConvLayer mix_conv;
  std::vector<ConvGru> grus;  ///< index 0 = finest
  ConvLayer delta_a;
  ConvLayer delta_b;
  ConvLayer mask_a;
  ConvLayer mask_b;

  static UpdateNet create(ParamStore& store, std::size_t lookup_channels, std::size_t context_channels,
                          std::size_t hidden_channels, std::size_t levels, std::size_t upsample,
                          std::mt19937_64& rng);

  /// Upsampling logits [9·s², H, W] from the finest hidden state.
  DiffArray mask(const BoundParams& p, const DiffArray& hidden) const;
};

struct DisparityState {
  DiffArray d;                   ///< [H,W] coarse disparity
  std::vector<DiffArray> hidden;  ///< per GRU level, finest first
  std::size_t iteration = 0;
};

struct GruResult {
  DiffArray delta;
  std::vector<DiffArray> hidden;
};

/// One recurrent update. `context` holds the per-level context maps.
GruResult gru_update(const UpdateNet& net, const BoundParams& p, const DisparityState& state,
                     const DiffArray& lookup_feats, const std::vector<DiffArray>& context);

struct RefineOutput {
  std::vector<DiffArray> coarse;     ///< d_0 … d_K
  std::vector<DiffArray> upsampled;  ///< convex-upsampled d_k, same indexing
};

/// d_0 = seeds (zeros elsewhere), propagated once; then K rounds of
/// lookup → GRU → d += Δ → propagate. With `upsample_all` every d_k is
/// upsampled, otherwise only the last one (upsampled.size() == 1).
RefineOutput iterate(const UpdateNet& net, const BoundParams& p, const features::FeatureMaps& feats,
                     const features::ContextBundle& ctx, const SparseDisparity& sparse, const RefineConfig& cfg,
                     const correlation::LookupConfig& lookup_cfg, bool upsample_all = false);

}  // namespace stereolidar::refine
