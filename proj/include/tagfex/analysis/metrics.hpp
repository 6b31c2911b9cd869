// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

#include "tagfex/core/types.hpp"

namespace tagfex::analysis {

/// Incremental-run accuracy summary: `last` is the accuracy after the final
/// stage, `avg` the arithmetic mean across stages.
struct RunMetrics {
  std::vector<Scalar> stage_accuracy;
  Scalar avg = 0;
  Scalar last = 0;
};

RunMetrics compute_metrics(const std::vector<Scalar>& per_stage_accuracies);

/// Memory accounting for budget-aligned comparisons: expresses extra saved
/// models in units of rehearsal exemplars.
struct MemoryBudget {
  Scalar exemplar_equivalents_per_model = 0;
  Scalar total_budget_exemplars = 0;
};

MemoryBudget memory_budget(std::int64_t model_param_count, int exemplar_count,
                           std::int64_t bytes_per_exemplar, int extra_models = 1,
                           int bytes_per_param = 4);

}  // namespace tagfex::analysis
