// SPDX-License-Identifier: Apache-2.0
#include "tagfex/data/memory.hpp"

#include <algorithm>

namespace tagfex::data {

std::vector<int> herding_select(const Matrix& class_features, int m) {
  const int n = static_cast<int>(class_features.cols());
  require(n > 0, "herding_select: empty feature list");
  require(m >= 0 && m <= n, "herding_select: m out of range");

  const Vector mean = class_features.rowwise().mean();
  Vector sum = Vector::Zero(class_features.rows());
  std::vector<bool> used(static_cast<size_t>(n), false);
  std::vector<int> order;
  order.reserve(static_cast<size_t>(m));
  for (int k = 1; k <= m; ++k) {
    int best = -1;
    Scalar best_val = 0;
    for (int i = 0; i < n; ++i) {
      if (used[static_cast<size_t>(i)]) continue;
      const Scalar val =
          (mean - (sum + class_features.col(i)) / static_cast<Scalar>(k)).norm();
      if (best < 0 || val < best_val) {
        best = i;
        best_val = val;
      }
    }
    used[static_cast<size_t>(best)] = true;
    sum += class_features.col(best);
    order.push_back(best);
  }
  return order;
}

RehearsalMemory::RehearsalMemory(int capacity) : capacity_(capacity) {
  require(capacity >= 0, "RehearsalMemory: negative capacity");
}

int RehearsalMemory::size() const {
  int total = 0;
  for (const auto& [label, images] : exemplars_) total += static_cast<int>(images.cols());
  return total;
}

const Matrix& RehearsalMemory::exemplars(int label) const {
  const auto it = exemplars_.find(label);
  require(it != exemplars_.end(), "RehearsalMemory: unknown class");
  return it->second;
}

void RehearsalMemory::rebalance(const TaskDataset& new_task, const FeatureFn& features) {
  for (int c : new_task.class_set) {
    require(!has_class(c), "RehearsalMemory: class already stored");
  }
  const int seen = class_count() + static_cast<int>(new_task.class_set.size());
  quota_ = seen > 0 ? capacity_ / seen : 0;

  for (auto& [label, images] : exemplars_) {
    if (images.cols() > quota_) {
      images = Matrix(images.leftCols(quota_));  // herding order is the column order
    }
  }

  for (int c : new_task.class_set) {
    std::vector<int> members;
    for (int i = 0; i < new_task.size(); ++i) {
      if (new_task.labels[static_cast<size_t>(i)] == c) members.push_back(i);
    }
    const FeatureMap batch = new_task.gather(members);
    const Matrix pooled = features(batch);
    require(pooled.cols() == static_cast<Eigen::Index>(members.size()),
            "RehearsalMemory: extractor output count mismatch");
    const int take = std::min<int>(quota_, static_cast<int>(members.size()));
    const std::vector<int> order = herding_select(pooled, take);

    Matrix kept(new_task.images.rows(), take);
    for (int j = 0; j < take; ++j) {
      kept.col(j) = new_task.images.col(members[static_cast<size_t>(order[static_cast<size_t>(j)])]);
    }
    exemplars_[c] = std::move(kept);
  }
  require(size() <= capacity_, "RehearsalMemory: capacity exceeded after rebalance");
}

void RehearsalMemory::append_to_pool(std::vector<Matrix>& images, std::vector<int>& labels) const {
  for (const auto& [label, store] : exemplars_) {
    for (Eigen::Index j = 0; j < store.cols(); ++j) {
      images.push_back(store.col(j));
      labels.push_back(label);
    }
  }
}

void RehearsalMemory::restore(int quota, std::map<int, Matrix> exemplars) {
  quota_ = quota;
  exemplars_ = std::move(exemplars);
  require(size() <= capacity_, "RehearsalMemory::restore: capacity exceeded");
}

}  // namespace tagfex::data
