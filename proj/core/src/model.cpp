#include "stereolidar/model.hpp"

#include <random>

namespace stereolidar {

using namespace ndgrad;

void ModelConfig::validate() const {
  features.validate();
  lookup.validate();
  refine.validate();
}

Model::Model(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  std::mt19937_64 rng(seed);
  nets_ = features::FeatureNets::create(store_, cfg_.features, rng);
  update_ = refine::UpdateNet::create(store_, cfg_.lookup.channels(), cfg_.features.context_channels,
                                      cfg_.features.hidden_channels, cfg_.refine.gru_levels, cfg_.features.downsample,
                                      rng);
}

ForwardOutput Model::forward(const BoundParams& p, const DiffArray& left, const DiffArray& right,
                             const SparseDisparity& sparse, const ForwardOptions& opt) const {
  if (left.shape() != right.shape()) throw ShapeError("forward: left/right shapes differ");
  const std::size_t s = cfg_.features.downsample;
  features::FeatureMaps feats{features::extract_features(nets_, p, left), features::extract_features(nets_, p, right)};
  const features::ContextBundle ctx = features::extract_context(nets_, p, left);

  refine::RefineConfig rcfg = cfg_.refine;
  if (opt.gru_iters) rcfg.gru_iters = *opt.gru_iters;
  SparseDisparity coarse_seeds = SparseDisparity::empty(feats.left.dim(1), feats.left.dim(2));
  if (rcfg.use_sparse) {
    if (sparse.height != left.dim(1) || sparse.width != left.dim(2)) {
      throw ShapeError("forward: sparse seeds must match the image size");
    }
    coarse_seeds = refine::project_sparse(sparse, s);
  }
  refine::RefineOutput r = refine::iterate(update_, p, feats, ctx, coarse_seeds, rcfg, cfg_.lookup, opt.all_iterations);

  ForwardOutput out;
  out.coarse = std::move(r.coarse);
  for (auto& d : r.upsampled) out.disparities.push_back(rcfg.use_sparse ? refine::anchor(d, sparse) : d);
  return out;
}

StereoOutput Model::forward_stereo(const BoundParams& p, const DiffArray& left, const DiffArray& right,
                                   const SparseDisparity& sparse, const ForwardOptions& opt) const {
  StereoOutput out;
  out.left = forward(p, left, right, sparse, opt);
  const SparseDisparity mirrored = cfg_.refine.use_sparse ? flip_horizontal(to_right_view(sparse)) : sparse;
  out.right_mirrored = forward(p, flip_lastdim(right), flip_lastdim(left), mirrored, opt);
  return out;
}

}  // namespace stereolidar
