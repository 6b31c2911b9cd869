// SPDX-License-Identifier: Apache-2.0
#include "tagfex/model/expanded_set.hpp"

#include <algorithm>

namespace tagfex::model {

ExpandedModelSet::ExpandedModelSet(const nn::ArchitectureSpec& arch, std::uint64_t seed)
    : arch_(arch), seed_(seed) {}

void ExpandedModelSet::begin_task(const std::vector<int>& classes) {
  require(!classes.empty(), "begin_task: task without classes");
  const int t = static_cast<int>(task_classes.size());
  std::vector<int> sorted = classes;
  std::sort(sorted.begin(), sorted.end());
  for (int c : sorted) {
    require(class_row_or(-1, c) == -1, "begin_task: class id seen in an earlier task");
  }

  if (current_) frozen.push_back(std::move(*current_));
  current_ = std::make_unique<nn::ConvBackbone>(
      arch_, derive_seed(seed_, "ts/backbone", static_cast<std::uint64_t>(t)),
      "ts" + std::to_string(t));
  extractor_dims.push_back(arch_.feature_dim());

  const int new_classes = static_cast<int>(sorted.size());
  if (!classifier) {
    classifier.emplace("cls", new_classes, arch_.feature_dim(),
                       derive_seed(seed_, "classifier"));
  } else {
    classifier->expand(new_classes, arch_.feature_dim());
  }

  if (t > 0) {
    aux = std::make_unique<AuxiliaryClassifier>(
        "aux" + std::to_string(t), sorted, arch_.feature_dim(),
        derive_seed(seed_, "aux", static_cast<std::uint64_t>(t)));
  } else {
    aux.reset();
  }

  task_classes.push_back(sorted);
  for (int c : sorted) seen_classes.push_back(c);
}

int ExpandedModelSet::total_feature_dim() const {
  int total = 0;
  for (int d : extractor_dims) total += d;
  return total;
}

int ExpandedModelSet::class_row_or(int fallback, int label) const {
  const auto it = std::find(seen_classes.begin(), seen_classes.end(), label);
  return it == seen_classes.end() ? fallback
                                  : static_cast<int>(it - seen_classes.begin());
}

int ExpandedModelSet::class_row(int label) const {
  const int row = class_row_or(-1, label);
  require(row >= 0, "class_row: label not in any seen task");
  return row;
}

ExpandedModelSet::TrainForward ExpandedModelSet::concat_train(const FeatureMap& images) {
  require(current_ != nullptr, "concat_train: no task opened");
  TrainForward out;
  out.concat.resize(total_feature_dim(), images.batch);
  int offset = 0;
  for (size_t i = 0; i < frozen.size(); ++i) {
    out.concat.middleRows(offset, extractor_dims[i]) = frozen[i].forward_eval(images).pooled;
    offset += extractor_dims[i];
  }
  out.current = current_->forward_train(images);
  out.concat.middleRows(offset, extractor_dims.back()) = out.current.pooled;
  return out;
}

Matrix ExpandedModelSet::concat_eval(const FeatureMap& images) const {
  require(current_ != nullptr, "concat_eval: no task opened");
  Matrix concat(total_feature_dim(), images.batch);
  int offset = 0;
  for (size_t i = 0; i < frozen.size(); ++i) {
    concat.middleRows(offset, extractor_dims[i]) = frozen[i].forward_eval(images).pooled;
    offset += extractor_dims[i];
  }
  concat.middleRows(offset, extractor_dims.back()) = current_->forward_eval(images).pooled;
  return concat;
}

void ExpandedModelSet::backward_current(const Matrix& dconcat, const FeatureMap& dmap_current,
                                        const Matrix& dpooled_extra) {
  require(current_ != nullptr, "backward_current: no task opened");
  const int d = extractor_dims.back();
  Matrix dpooled = dconcat.size() > 0
                       ? Matrix(dconcat.bottomRows(d))
                       : Matrix(Matrix::Zero(d, dpooled_extra.size() > 0
                                                    ? dpooled_extra.cols()
                                                    : dmap_current.batch));
  if (dpooled_extra.size() > 0) dpooled += dpooled_extra;
  current_->backward(dmap_current, dpooled);
}

void ExpandedModelSet::replace_current(nn::ConvBackbone pruned) {
  require(current_ != nullptr, "replace_current: no task opened");
  extractor_dims.back() = pruned.spec().feature_dim();
  *current_ = std::move(pruned);
}

void ExpandedModelSet::replace_frozen(int index, nn::ConvBackbone pruned) {
  require(index >= 0 && index < static_cast<int>(frozen.size()),
          "replace_frozen: index out of range");
  extractor_dims[static_cast<size_t>(index)] = pruned.spec().feature_dim();
  frozen[static_cast<size_t>(index)] = std::move(pruned);
}

void ExpandedModelSet::collect_trainable(std::vector<nn::Param*>& out) {
  if (current_) current_->collect(out);
  if (classifier) classifier->collect(out);
  if (aux) aux->collect(out);
}

std::int64_t ExpandedModelSet::inference_parameter_count() const {
  std::int64_t n = 0;
  for (const auto& f : frozen) n += f.parameter_count();
  if (current_) n += current_->parameter_count();
  if (classifier) n += classifier->parameter_count();
  return n;
}

TransferResult transfer_loss(const Matrix& teacher_logits, const Matrix& student_logits) {
  const nn::KlResult kl = nn::kl_teacher_student(teacher_logits, student_logits);
  return TransferResult{kl.loss, kl.dstudent};
}

TransferResult transfer_loss_restricted(const Matrix& teacher_logits,
                                        const Matrix& student_logits, int row_begin,
                                        int row_count) {
  require(row_begin >= 0 && row_count > 0 &&
              row_begin + row_count <= teacher_logits.rows(),
          "transfer_loss_restricted: bad row slice");
  const nn::KlResult kl = nn::kl_teacher_student(
      teacher_logits.middleRows(row_begin, row_count),
      student_logits.middleRows(row_begin, row_count));
  TransferResult out;
  out.loss = kl.loss;
  out.dstudent = Matrix::Zero(student_logits.rows(), student_logits.cols());
  out.dstudent.middleRows(row_begin, row_count) = kl.dstudent;
  return out;
}

}  // namespace tagfex::model
