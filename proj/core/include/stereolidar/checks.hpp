#pragma once

#include <cstdint>
#include <vector>

#include "stereolidar/gradcheck.hpp"

namespace stereolidar::checks {

/// Finite-difference checks of the pipeline-level operations (correlation,
/// lookup, affinity normalization, propagation, upsampling, warping, SSIM and
/// the loss terms) on small random instances.
std::vector<ndgrad::OpCheck> check_modules(std::uint64_t seed, const ndgrad::GradCheckOptions& options = {});

/// End-to-end check of the self-supervised loss with respect to the model
/// parameters: 16x24 scene, 8 channels, two refinement iterations. Occlusion
/// masks are frozen at the unperturbed point. `entries_per_tensor` bounds the
/// probed entries of each parameter tensor.
ndgrad::OpCheck check_pipeline(std::uint64_t seed, std::size_t entries_per_tensor = 4,
                               const ndgrad::GradCheckOptions& options = {});

inline constexpr double kOpTolerance = 1e-4;
inline constexpr double kPipelineTolerance = 1e-3;

}  // namespace stereolidar::checks
