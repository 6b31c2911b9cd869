// SPDX-License-Identifier: Apache-2.0
#include "tagfex/analysis/metrics.hpp"

namespace tagfex::analysis {

RunMetrics compute_metrics(const std::vector<Scalar>& per_stage_accuracies) {
  require(!per_stage_accuracies.empty(), "compute_metrics: empty accuracy sequence");
  RunMetrics m;
  m.stage_accuracy = per_stage_accuracies;
  Scalar sum = 0;
  for (Scalar a : per_stage_accuracies) sum += a;
  m.avg = sum / static_cast<Scalar>(per_stage_accuracies.size());
  m.last = per_stage_accuracies.back();
  return m;
}

MemoryBudget memory_budget(std::int64_t model_param_count, int exemplar_count,
                           std::int64_t bytes_per_exemplar, int extra_models,
                           int bytes_per_param) {
  require(model_param_count > 0 && exemplar_count >= 0 && bytes_per_exemplar > 0 &&
              extra_models >= 0 && bytes_per_param > 0,
          "memory_budget: inputs must be positive");
  MemoryBudget b;
  b.exemplar_equivalents_per_model =
      static_cast<Scalar>(model_param_count) * bytes_per_param /
      static_cast<Scalar>(bytes_per_exemplar);
  b.total_budget_exemplars =
      static_cast<Scalar>(exemplar_count) + extra_models * b.exemplar_equivalents_per_model;
  return b;
}

}  // namespace tagfex::analysis
