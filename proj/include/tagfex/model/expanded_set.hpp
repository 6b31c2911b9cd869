// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <memory>
#include <optional>
#include <vector>

#include "tagfex/model/classifiers.hpp"
#include "tagfex/nn/backbone.hpp"

namespace tagfex::model {

struct LossWeights {
  Scalar lambda_ta = 1.0;
  Scalar lambda_mcls = 1.0;
};

/// Expanding inference model: one frozen extractor per finished task plus the
/// trainable extractor of the current task, a classifier over the
/// concatenated pooled features, and the task-local auxiliary head.
class ExpandedModelSet {
 public:
  ExpandedModelSet(const nn::ArchitectureSpec& arch, std::uint64_t seed);

  /// Opens task t: freezes the current extractor (t > 0), creates a fresh
  /// one, expands the classifier with exact weight inheritance and zero-init
  /// growth, and re-creates the auxiliary classifier for |C_t|+1 outputs.
  /// `classes` are the task's original class ids.
  void begin_task(const std::vector<int>& classes);

  int task_index() const { return static_cast<int>(task_classes.size()) - 1; }
  int extractor_count() const { return static_cast<int>(frozen.size()) + (current_ ? 1 : 0); }
  int total_feature_dim() const;
  int seen_class_count() const { return static_cast<int>(seen_classes.size()); }

  /// Classifier row of an original class id; throws for unseen labels.
  int class_row(int label) const;
  int class_row_or(int fallback, int label) const;

  struct TrainForward {
    nn::BackboneFeatures current;  // the trainable extractor's map and pooled
    Matrix concat;                 // total_feature_dim x batch
  };
  /// Frozen extractors run in inference mode; the current one in train mode.
  TrainForward concat_train(const FeatureMap& images);
  /// Pure inference path (current extractor also in inference mode).
  Matrix concat_eval(const FeatureMap& images) const;

  /// Routes the concatenated-feature gradient: the current extractor's slice
  /// goes through its backward pass together with an optional extra spatial
  /// gradient (from the merge path); frozen slices are dropped.
  void backward_current(const Matrix& dconcat, const FeatureMap& dmap_current,
                        const Matrix& dpooled_extra);

  nn::ConvBackbone& current() { return *current_; }
  const nn::ConvBackbone& current() const { return *current_; }
  void replace_current(nn::ConvBackbone pruned);
  void replace_frozen(int index, nn::ConvBackbone pruned);

  void collect_trainable(std::vector<nn::Param*>& out);  // current + classifier + aux
  std::int64_t inference_parameter_count() const;

  const nn::ArchitectureSpec& arch() const { return arch_; }
  std::uint64_t seed() const { return seed_; }

  std::vector<nn::ConvBackbone> frozen;
  std::optional<ExpandableClassifier> classifier;
  std::unique_ptr<AuxiliaryClassifier> aux;
  std::vector<std::vector<int>> task_classes;  // ascending ids per task
  std::vector<int> seen_classes;               // classifier row -> class id
  std::vector<int> extractor_dims;             // pooled dim per extractor (pruning-aware)

 private:
  nn::ArchitectureSpec arch_;
  std::uint64_t seed_ = 0;
  std::unique_ptr<nn::ConvBackbone> current_;
};

struct TransferResult {
  Scalar loss = 0;
  Matrix dstudent;
};

/// Distillation from the merged-feature teacher into the inference
/// classifier: KL(softmax(teacher) || softmax(student)) averaged over the
/// batch. The teacher is constant; only the student side gets a gradient.
TransferResult transfer_loss(const Matrix& teacher_logits, const Matrix& student_logits);

/// Variant restricting the divergence to a contiguous row slice of the
/// logits (the current task's classes); both distributions are renormalized
/// over that slice.
TransferResult transfer_loss_restricted(const Matrix& teacher_logits,
                                        const Matrix& student_logits, int row_begin,
                                        int row_count);

}  // namespace tagfex::model
