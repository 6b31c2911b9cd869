// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "tagfex/attn/merge_attention.hpp"
#include "tagfex/data/memory.hpp"
#include "tagfex/exp/config.hpp"
#include "tagfex/analysis/cka.hpp"
#include "tagfex/io/checkpoint.hpp"
#include "tagfex/prune/fpgm.hpp"

namespace tagfex::exp {

struct StageRecord {
  int task = 0;
  Scalar accuracy = 0;
  std::vector<Scalar> per_task_accuracy;
  std::int64_t params_inference = 0;
  std::int64_t params_training = 0;
  Scalar cka_mean_off_diagonal = -1;  // -1 until two extractors exist
};

struct MassRow {
  int task = 0;
  int epoch = 0;
  Scalar mass = 0;
};

/// Per-step loss components; the training objective is
/// lambda_ta * ta + lambda_mcls * mcls + (cls + aux + trans).
struct LossBreakdown {
  Scalar cls = 0, aux = 0, trans = 0, ta = 0, mcls = 0;
  Scalar ts_total() const { return cls + aux + trans; }
  Scalar overall(const model::LossWeights& w) const {
    return w.lambda_ta * ta + w.lambda_mcls * mcls + ts_total();
  }
};

/// End-to-end incremental training run: per task, open the expanded model,
/// train all active losses jointly, snapshot the self-supervised model,
/// rebalance rehearsal memory, optionally prune, evaluate and emit artifacts.
class Trainer {
 public:
  explicit Trainer(ExperimentConfig cfg);

  /// Runs the whole experiment (resuming from the run directory's newest
  /// compatible checkpoint when present) and emits every artifact.
  void run();

  // --- stepwise interface (used by run(), tools and tests) ---
  void prepare();          // loads data, creates the run directory
  void start_task(int t);  // begin_task + per-task module setup
  std::vector<int> epoch_indices(int t, int epoch) const;  // shuffled pool order
  LossBreakdown train_step(int t, int epoch, const std::vector<int>& batch, Scalar lr);
  void record_epoch(int t, int epoch);  // attention record + mass row
  void finish_task(int t);  // snapshot, rebalance, prune, evaluate, emit, checkpoint

  int task_count() const { return static_cast<int>(train_tasks_.size()); }
  Scalar evaluate_stage(int up_to_task, std::vector<Scalar>* per_task = nullptr) const;

  const ExperimentConfig& config() const { return cfg_; }
  const std::string& run_dir() const { return run_dir_; }
  const std::vector<StageRecord>& stages() const { return stages_; }
  const std::vector<MassRow>& attention_mass() const { return mass_rows_; }
  model::ExpandedModelSet& model_set() { return *set_; }
  ssl::TaskAgnosticState* ta_state() { return ta_.get(); }
  attn::MergeAttentionBlock* merge_block() { return merge_.get(); }
  model::ExpandableClassifier* merge_classifier() { return merge_cls_.get(); }
  data::RehearsalMemory& memory() { return *memory_; }
  const data::TaskDataset& train_task(int t) const { return train_tasks_[static_cast<size_t>(t)]; }
  const data::TaskDataset& pool() const { return pool_; }
  int pool_current_count() const { return pool_current_count_; }

  /// Next task to run (0-based); equals task_count() when complete.
  int next_task() const { return next_task_; }

  /// State restore from a checkpoint produced by the same configuration.
  void load_state(const io::Checkpoint& ckpt);
  void save_checkpoint(int t);  // writes <run>/ckpt_task<t>.bin
  void save_checkpoint_to(const std::string& path, int t);

  /// Applies a pruning plan to extractor `index`, slicing the classifier
  /// columns of that extractor's feature block to match.
  void prune_extractor(int index, const prune::PruningPlan& plan);

  std::int64_t training_parameter_count();
  analysis::CkaReport stage_cka(int t) const;
  void emit_metrics() const;
  void emit_attention_mass() const;

 private:
  bool merge_active(int t) const;
  bool ta_loss_active() const;
  void setup_output_dir();
  bool try_resume();
  void build_pool(int t);
  std::vector<nn::Param*> active_params(int t);
  void collect_live_params(std::vector<nn::Param*>& out) const;
  Matrix extractor_probe_features(const nn::ConvBackbone& extractor,
                                  const FeatureMap& probe) const;
  FeatureMap cka_probe(int up_to_task) const;

  ExperimentConfig cfg_;
  std::string run_dir_;
  std::vector<data::TaskDataset> train_tasks_;
  std::vector<data::TaskDataset> test_tasks_;
  std::vector<int> class_order_;

  std::unique_ptr<model::ExpandedModelSet> set_;
  std::unique_ptr<ssl::TaskAgnosticState> ta_;
  std::unique_ptr<attn::MergeAttentionBlock> merge_;
  std::unique_ptr<model::ExpandableClassifier> merge_cls_;
  std::unique_ptr<data::RehearsalMemory> memory_;

  data::TaskDataset pool_;       // current task + rehearsal exemplars
  int pool_current_count_ = 0;   // leading pool entries from the current task

  std::vector<StageRecord> stages_;
  std::vector<MassRow> mass_rows_;
  int next_task_ = 0;
  bool prepared_ = false;
};

/// Re-emits metrics and CKA reports for an existing run directory from its
/// checkpoints.
void analyze_run(const std::string& run_dir);

/// Prunes every extractor of a finished run to the target rate and writes
/// plans, pruned metrics and a pruned checkpoint under
/// <run>/pruned_r<rate>/.
void prune_run(const std::string& run_dir, Scalar target_rate);

}  // namespace tagfex::exp
