// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "tagfex/core/types.hpp"

namespace tagfex::nn {

/// Column-wise softmax with max-shift stabilization.
template <typename Derived>
Matrix softmax_cols(const Eigen::MatrixBase<Derived>& logits) {
  Matrix p = logits;
  for (Eigen::Index j = 0; j < p.cols(); ++j) {
    const Scalar m = p.col(j).maxCoeff();
    p.col(j) = (p.col(j).array() - m).exp();
    p.col(j) /= p.col(j).sum();
  }
  return p;
}

struct CrossEntropyResult {
  Scalar loss = 0;
  Matrix dlogits;  // gradient of the batch-mean loss
};

/// Mean softmax cross-entropy over the batch (labels index logit rows).
CrossEntropyResult softmax_cross_entropy(const Matrix& logits, const std::vector<int>& labels);

struct KlResult {
  Scalar loss = 0;
  Matrix dstudent;  // gradient w.r.t. the student logits only
};

/// Batch-mean KL(softmax(teacher) || softmax(student)). The teacher side is
/// treated as constant: no gradient is produced for it.
KlResult kl_teacher_student(const Matrix& teacher_logits, const Matrix& student_logits);

}  // namespace tagfex::nn
