// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "tagfex/data/augment.hpp"
#include "tagfex/data/collision.hpp"
#include "tagfex/data/dataset.hpp"
#include "tagfex/model/expanded_set.hpp"
#include "tagfex/nn/backbone.hpp"
#include "tagfex/nn/optimizer.hpp"
#include "tagfex/ssl/task_agnostic.hpp"

namespace tagfex::exp {

struct DatasetConfig {
  std::string kind = "collision";  // "collision" | "directory"
  std::string path;                // dataset directory for kind=directory
  data::SplitSpec split;
  data::CollisionSpec collision;
};

struct MergeConfig {
  int heads = 4;
  int record_interval = 1;  // epochs between attention records
  int probe_batch = 32;     // samples in the fixed attention probe batch
};

struct AblationFlags {
  bool der_baseline = false;
  bool disable_transfer = false;
  bool disable_continual_ta = false;
  bool disable_merge = false;
  bool t0_merge_enabled = true;
  bool prune = false;
  Scalar prune_target_rate = 0.4;
  // Sample-routing variants (defaults feed the full mixed batch everywhere).
  bool ta_current_task_only = false;
  bool mcls_current_task_only = false;
  bool transfer_current_task_only = false;
  bool transfer_current_task_support = false;
};

struct ExperimentConfig {
  DatasetConfig dataset;
  int rehearsal_capacity = 2000;
  nn::ArchitectureSpec backbone;
  nn::OptimizerSpec optimizer;
  model::LossWeights loss_weights;
  ssl::SslConfig ssl;
  data::AugmentPolicy augment;
  MergeConfig merge;
  AblationFlags ablation;
  int cka_probe_size = 512;
  std::uint64_t seed = 0;
  std::string output_dir;

  bool ta_enabled() const { return !ablation.der_baseline; }
  bool merge_enabled() const { return ta_enabled() && !ablation.disable_merge; }
  bool transfer_enabled() const { return merge_enabled() && !ablation.disable_transfer; }
  bool continual_ta() const { return ta_enabled() && !ablation.disable_continual_ta; }
};

/// Strict parse: unknown keys anywhere are rejected.
ExperimentConfig parse_config(const nlohmann::json& j);
ExperimentConfig load_config_file(const std::string& path);

/// Canonical serialization; two configs hash equal iff this matches.
nlohmann::ordered_json config_to_json(const ExperimentConfig& cfg);
std::string config_hash(const ExperimentConfig& cfg);

void validate_config(const ExperimentConfig& cfg);

/// The ablation grid: {non-continual, continual} x {transfer off, on}
/// plus the plain rehearsal-expansion baseline.
std::vector<std::pair<std::string, ExperimentConfig>> ablation_matrix(
    const ExperimentConfig& base);

/// Default output root: $TAGFEX_OUTPUT_ROOT or ./runs.
std::string default_output_root();

}  // namespace tagfex::exp
