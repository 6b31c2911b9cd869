// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tagfex/nn/layers.hpp"
#include "tagfex/nn/losses.hpp"

namespace tagfex::model {

/// Linear classifier that grows with the class set and the concatenated
/// feature dimension. On expansion the block over previously seen classes and
/// previously present feature dims is inherited exactly; every new entry is
/// zero, so old-class logits are unchanged for any input.
class ExpandableClassifier {
 public:
  ExpandableClassifier(std::string name, int classes, int in_dim, std::uint64_t seed);

  Matrix logits_train(const Matrix& features);
  Matrix logits_eval(const Matrix& features) const;
  Matrix backward(const Matrix& dlogits);

  void expand(int new_classes, int new_dims);

  void collect(std::vector<nn::Param*>& out);
  std::int64_t parameter_count() const { return weight.value.size() + bias.value.size(); }

  int classes() const { return static_cast<int>(weight.value.rows()); }
  int in_dim() const { return static_cast<int>(weight.value.cols()); }

  nn::Param weight;  // classes x in_dim
  nn::Param bias;    // classes x 1

 private:
  std::string name_;
  Matrix cached_input_;
};

/// Task-local head over the new extractor's pooled feature. Emits one logit
/// per current-task class plus a single bucket for all previously seen
/// classes. Re-created at every task start.
class AuxiliaryClassifier {
 public:
  /// current_classes: the task's class ids; old labels map to bucket 0,
  /// current classes map to 1 + rank within the ascending-sorted id list.
  AuxiliaryClassifier(std::string name, std::vector<int> current_classes, int feature_dim,
                      std::uint64_t seed);

  int remap_label(int original_label, const std::vector<int>& seen_classes) const;

  Matrix logits_train(const Matrix& pooled);
  Matrix backward(const Matrix& dlogits);

  void collect(std::vector<nn::Param*>& out);
  int outputs() const { return linear.out_dim; }
  const std::vector<int>& current_classes() const { return sorted_classes_; }

  nn::Linear linear;

 private:
  std::vector<int> sorted_classes_;
};

}  // namespace tagfex::model
