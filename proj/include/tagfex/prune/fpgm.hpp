// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "tagfex/nn/backbone.hpp"

namespace tagfex::prune {

/// Geometric-median redundancy score: for filter k (one row of the layer's
/// weight matrix), the sum of L2 distances to every other filter. Lower means
/// more redundant.
Vector fpgm_filter_scores(const Matrix& filters);

struct LayerPrune {
  std::string layer;
  std::vector<int> filters;  // ascending removal indices
};

struct PruningPlan {
  std::vector<LayerPrune> layers;  // one entry per conv layer, in network order
  Scalar target_rate = 0.4;
  Scalar achieved_rate = 0;
};

/// Rate-driven plan: start from a uniform per-layer removal fraction, then
/// greedily shift single filters (largest layers first) until the achieved
/// parameter-removal rate is as close as attainable to the target
/// (within +-0.02 when reachable). Counts conv and norm parameters of the
/// backbone itself.
PruningPlan build_plan(const nn::ConvBackbone& model, Scalar target_rate);

/// Alternative mode from the raw pairwise criterion: any filter pair closer
/// than `distance_threshold` is redundant and the later filter of the pair is
/// scheduled for removal.
PruningPlan build_plan_pairwise(const nn::ConvBackbone& model, Scalar distance_threshold);

/// Applies the plan, producing a smaller dense backbone. Downstream input
/// channels are pruned consistently; norm statistics follow their filters.
nn::ConvBackbone apply_plan(const nn::ConvBackbone& model, const PruningPlan& plan);

/// Indices kept by a removal list, ascending. Exposed for classifier-column
/// surgery when the last layer shrinks.
std::vector<int> kept_indices(int total, const std::vector<int>& removed);

/// Parameter-removal rate the plan achieves on the given model.
Scalar plan_rate(const nn::ConvBackbone& model, const PruningPlan& plan);

void save_plan(const PruningPlan& plan, const std::string& path);
PruningPlan load_plan(const std::string& path);

}  // namespace tagfex::prune
