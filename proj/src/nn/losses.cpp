// SPDX-License-Identifier: Apache-2.0
#include "tagfex/nn/losses.hpp"

#include <cmath>

namespace tagfex::nn {

CrossEntropyResult softmax_cross_entropy(const Matrix& logits, const std::vector<int>& labels) {
  require(static_cast<Eigen::Index>(labels.size()) == logits.cols(),
          "softmax_cross_entropy: label count mismatch");
  require(!labels.empty(), "softmax_cross_entropy: empty batch");
  const Scalar inv_b = 1.0 / static_cast<Scalar>(labels.size());
  CrossEntropyResult out;
  out.dlogits = softmax_cols(logits);
  for (Eigen::Index j = 0; j < logits.cols(); ++j) {
    const int y = labels[static_cast<size_t>(j)];
    require(y >= 0 && y < logits.rows(), "softmax_cross_entropy: label outside class set");
    out.loss -= std::log(out.dlogits(y, j));
    out.dlogits(y, j) -= 1.0;
  }
  out.loss *= inv_b;
  out.dlogits *= inv_b;
  return out;
}

KlResult kl_teacher_student(const Matrix& teacher_logits, const Matrix& student_logits) {
  require(teacher_logits.rows() == student_logits.rows() &&
              teacher_logits.cols() == student_logits.cols(),
          "kl_teacher_student: logit support mismatch");
  require(teacher_logits.cols() > 0, "kl_teacher_student: empty batch");
  const Scalar inv_b = 1.0 / static_cast<Scalar>(teacher_logits.cols());
  const Matrix p = softmax_cols(teacher_logits);
  const Matrix q = softmax_cols(student_logits);
  KlResult out;
  out.loss = (p.array() * (p.array().log() - q.array().log())).sum() * inv_b;
  out.dstudent = (q - p) * inv_b;
  return out;
}

}  // namespace tagfex::nn
