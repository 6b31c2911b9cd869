// SPDX-License-Identifier: Apache-2.0
#include "tagfex/model/classifiers.hpp"

#include <algorithm>
#include <cmath>

namespace tagfex::model {

ExpandableClassifier::ExpandableClassifier(std::string name, int classes, int in_dim,
                                           std::uint64_t seed)
    : weight(name + "/W", classes, in_dim), bias(name + "/b", classes, 1), name_(std::move(name)) {
  Rng rng(derive_seed(seed, name_));
  nn::kaiming_uniform(weight.value, in_dim, rng);
  const Scalar limit = 1.0 / std::sqrt(static_cast<Scalar>(in_dim));
  nn::uniform_fill(bias.value, -limit, limit, rng);
}

Matrix ExpandableClassifier::logits_train(const Matrix& features) {
  cached_input_ = features;
  return logits_eval(features);
}

Matrix ExpandableClassifier::logits_eval(const Matrix& features) const {
  require(features.rows() == weight.value.cols(),
          "ExpandableClassifier: feature dim mismatch for " + name_);
  Matrix logits = weight.value * features;
  logits.colwise() += bias.value.col(0);
  return logits;
}

Matrix ExpandableClassifier::backward(const Matrix& dlogits) {
  require(cached_input_.cols() == dlogits.cols(),
          "ExpandableClassifier::backward: no matching forward");
  weight.grad.noalias() += dlogits * cached_input_.transpose();
  bias.grad.col(0) += dlogits.rowwise().sum();
  return weight.value.transpose() * dlogits;
}

void ExpandableClassifier::expand(int new_classes, int new_dims) {
  require(new_classes >= 0 && new_dims >= 0, "ExpandableClassifier::expand: negative growth");
  if (new_classes == 0 && new_dims == 0) return;
  const int old_classes = classes();
  const int old_dims = in_dim();

  auto grow = [](Matrix& m, int rows, int cols) {
    Matrix next = Matrix::Zero(rows, cols);
    next.topLeftCorner(m.rows(), m.cols()) = m;
    m = std::move(next);
  };
  grow(weight.value, old_classes + new_classes, old_dims + new_dims);
  grow(weight.grad, old_classes + new_classes, old_dims + new_dims);
  grow(weight.momentum, old_classes + new_classes, old_dims + new_dims);
  grow(bias.value, old_classes + new_classes, 1);
  grow(bias.grad, old_classes + new_classes, 1);
  grow(bias.momentum, old_classes + new_classes, 1);
}

void ExpandableClassifier::collect(std::vector<nn::Param*>& out) {
  out.push_back(&weight);
  out.push_back(&bias);
}

namespace {

nn::Linear seeded_linear(const std::string& name, int in_dim, int out_dim, std::uint64_t seed) {
  Rng rng(derive_seed(seed, name));
  return nn::Linear(name, in_dim, out_dim, rng);
}

}  // namespace

AuxiliaryClassifier::AuxiliaryClassifier(std::string name, std::vector<int> current_classes,
                                         int feature_dim, std::uint64_t seed)
    : linear(seeded_linear(name, feature_dim, static_cast<int>(current_classes.size()) + 1, seed)),
      sorted_classes_(std::move(current_classes)) {
  std::sort(sorted_classes_.begin(), sorted_classes_.end());
}

int AuxiliaryClassifier::remap_label(int original_label,
                                     const std::vector<int>& seen_classes) const {
  const auto it = std::lower_bound(sorted_classes_.begin(), sorted_classes_.end(), original_label);
  if (it != sorted_classes_.end() && *it == original_label) {
    return 1 + static_cast<int>(it - sorted_classes_.begin());
  }
  require(std::find(seen_classes.begin(), seen_classes.end(), original_label) !=
              seen_classes.end(),
          "AuxiliaryClassifier: label outside seen classes");
  return 0;
}

Matrix AuxiliaryClassifier::logits_train(const Matrix& pooled) {
  return linear.forward_train(pooled);
}

Matrix AuxiliaryClassifier::backward(const Matrix& dlogits) { return linear.backward(dlogits); }

void AuxiliaryClassifier::collect(std::vector<nn::Param*>& out) { linear.collect(out); }

}  // namespace tagfex::model
