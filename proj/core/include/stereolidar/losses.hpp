#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

#include "stereolidar/ndgrad.hpp"
#include "stereolidar/sparse.hpp"

namespace stereolidar::losses {

using ndgrad::DiffArray;

struct LossWeights {
  double alpha = 0.85;
  double appearance = 1.0;
  double sparse = 0.5;
  double lr = 0.01;
  double smooth = 0.01;

  void validate() const;
};

/// Boolean [H,W] mask; true marks a pixel excluded from the photometric and
/// consistency terms.
struct OcclusionMap {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> occluded;

  std::size_t visible() const;
};

/// Î(c,i,j) = I_r(c, i, j − d(i,j)) with clamped linear sampling.
DiffArray warp_right_to_left(const DiffArray& image_right, const DiffArray& disparity_left);

/// A left pixel is occluded when some other pixel of its row with a larger
/// disparity lands strictly within 0.5 px of the same right-view column.
OcclusionMap occlusion_from_range(const DiffArray& disparity_left);

/// Pixels whose match column j − d falls outside [0, W−1].
OcclusionMap out_of_view(const DiffArray& disparity_left);

/// Union of occlusion_from_range and out_of_view: the mask the losses use.
OcclusionMap loss_mask(const DiffArray& disparity_left);

/// Per-pixel SSIM [C,H,W] over 3x3 reflect-padded windows.
DiffArray ssim(const DiffArray& x, const DiffArray& y);

/// Mean over visible pixels of α(1−SSIM)/2 + (1−α)|I − Î|, both averaged over
/// channels.
DiffArray appearance_loss(const DiffArray& image, const DiffArray& reconstructed, const OcclusionMap& mask,
                          double alpha);

/// Mean |d_s − d̂| over the valid seeds.
DiffArray sparse_loss(const SparseDisparity& seeds, const DiffArray& disparity);

/// Mean over visible pixels of |d_r(i, j − d_l) − d_l|.
DiffArray lr_consistency_loss(const DiffArray& disparity_left, const DiffArray& disparity_right,
                              const OcclusionMap& mask);

/// Second-difference smoothness weighted by exp(−mean_c |∇²I_c|), summed over
/// the interior pixels where each stencil fits, averaged over visible pixels.
DiffArray smooth_loss(const DiffArray& disparity, const DiffArray& image, const OcclusionMap& mask);

struct SideTerms {
  DiffArray appearance;
  std::optional<DiffArray> sparse;  ///< absent when the side has no loss seeds
  DiffArray lr;
  DiffArray smooth;
};

DiffArray side_loss(const SideTerms& terms, const LossWeights& w);

/// (L^l + L^r) / 2.
DiffArray total_loss(const SideTerms& left, const SideTerms& right, const LossWeights& w);

/// All four terms for one view, with that view playing the left role: `self`
/// and `other` are its image and the opposite image, `d_self`/`d_other` the
/// matching disparities. `mask` overrides loss_mask(d_self) when given.
SideTerms side_terms(const DiffArray& image_self, const DiffArray& image_other, const DiffArray& d_self,
                     const DiffArray& d_other, const SparseDisparity& loss_seeds, double alpha,
                     const OcclusionMap* mask = nullptr);

}  // namespace stereolidar::losses
