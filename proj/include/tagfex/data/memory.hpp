// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <map>
#include <vector>

#include "tagfex/data/dataset.hpp"

namespace tagfex::data {

/// Greedy herding order: at step k, pick the index whose inclusion brings the
/// running exemplar mean closest to the class feature mean. Features are one
/// column per sample. Ties break on the lower index. Returns the first m
/// indices, no repeats.
std::vector<int> herding_select(const Matrix& class_features, int m);

/// Pooled features for a batch of images, one column per sample. The trainer
/// binds this to the current extractor's inference forward.
using FeatureFn = std::function<Matrix(const FeatureMap&)>;

/// Constant-capacity exemplar store. The per-class quota is
/// floor(capacity / seen classes); shrinking the quota keeps the prefix of
/// each class's herding order.
class RehearsalMemory {
 public:
  explicit RehearsalMemory(int capacity);

  int capacity() const { return capacity_; }
  int per_class_quota() const { return quota_; }
  int size() const;
  int class_count() const { return static_cast<int>(exemplars_.size()); }
  bool has_class(int label) const { return exemplars_.count(label) > 0; }

  /// Images of one class, herding order, one column each.
  const Matrix& exemplars(int label) const;

  /// End-of-task update: recompute the quota over all seen classes, truncate
  /// existing classes, and admit the new task's classes via herding on the
  /// given feature extractor.
  void rebalance(const TaskDataset& new_task, const FeatureFn& features);

  /// Appends every stored exemplar to a flat image pool.
  void append_to_pool(std::vector<Matrix>& images, std::vector<int>& labels) const;

  /// Checkpoint access.
  const std::map<int, Matrix>& store() const { return exemplars_; }
  void restore(int quota, std::map<int, Matrix> exemplars);

 private:
  int capacity_ = 0;
  int quota_ = 0;
  std::map<int, Matrix> exemplars_;  // class id -> (dims x count)
};

}  // namespace tagfex::data
