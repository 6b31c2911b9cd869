// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <memory>
#include <optional>

#include "tagfex/nn/backbone.hpp"
#include "tagfex/ssl/infonce.hpp"

namespace tagfex::ssl {

struct SslConfig {
  Scalar temperature = 0.1;
  int projection_hidden = 0;  // 0 = backbone feature dim
  int projection_out = 128;
  bool symmetric_infonce = false;

  int hidden_dim(int feature_dim) const {
    return projection_hidden > 0 ? projection_hidden : feature_dim;
  }
};

/// Self-supervised extractor: backbone plus projection head. Cosine
/// similarities are always taken in the projected space.
class TaskAgnosticModel {
 public:
  TaskAgnosticModel(const nn::ArchitectureSpec& arch, const SslConfig& ssl, std::uint64_t seed,
                    const std::string& name);

  /// Projected embeddings for a batch; caches for backward.
  Matrix project_train(const FeatureMap& images);
  Matrix project_eval(const FeatureMap& images) const;
  void backward_from_projection(const Matrix& dproj);

  void collect(std::vector<nn::Param*>& out);

  nn::ConvBackbone backbone;
  nn::Mlp2 projection;
};

/// Continual SSL state: the live model, the frozen previous-task snapshot,
/// and the temporal predictor that maps current projections onto the
/// snapshot's feature space.
class TaskAgnosticState {
 public:
  TaskAgnosticState(const nn::ArchitectureSpec& arch, const SslConfig& ssl, std::uint64_t seed);

  bool has_snapshot() const { return previous != nullptr; }

  /// Freezes a copy of the current model as the new snapshot and
  /// re-initializes the predictor. Seeded per task so the rebuild is
  /// independent of call history.
  void end_task_snapshot(int next_task_index);

  /// Drops the snapshot and re-initializes the model itself (the
  /// non-continual ablation).
  void reinitialize(int task_index);

  void collect_trainable(std::vector<nn::Param*>& out, bool include_predictor);

  SslConfig config;
  nn::ArchitectureSpec arch;
  std::uint64_t seed = 0;
  TaskAgnosticModel current;
  std::unique_ptr<TaskAgnosticModel> previous;  // frozen; eval-only
  nn::Mlp2 predictor;
};

struct TaLossResult {
  Scalar value = 0;          // the training loss (negated InfoNCE terms)
  Scalar contrastive = 0;    // InfoNCE between the two live views
  Scalar predictive = 0;     // InfoNCE between predicted and snapshot features
};

/// Initial-task loss: -InfoNCE over the two views' projections. Value only.
Scalar ta_loss_initial(TaskAgnosticState& state, const FeatureMap& view_a,
                       const FeatureMap& view_b);

/// Incremental loss: adds the predictive term against the frozen snapshot.
/// Value only; requires a snapshot.
Scalar ta_loss_incremental(TaskAgnosticState& state, const FeatureMap& view_a,
                           const FeatureMap& view_b);

/// Full training step evaluation: computes the loss and accumulates
/// gradients into the current model (and predictor when incremental).
/// The snapshot never receives gradient. Views are forwarded jointly as one
/// 2B batch so normalization statistics span both views.
TaLossResult ta_loss_backward(TaskAgnosticState& state, const FeatureMap& view_a,
                              const FeatureMap& view_b, bool incremental);

}  // namespace tagfex::ssl
