// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "tagfex/core/types.hpp"

namespace tagfex::analysis {

/// Linear centered kernel alignment between two feature matrices with one
/// row per sample: ||Yc' Xc||_F^2 / (||Xc' Xc||_F ||Yc' Yc||_F) on
/// column-centered Xc, Yc. Invariant to orthogonal transforms and isotropic
/// scaling of either side.
template <typename DerivedX, typename DerivedY>
Scalar linear_cka(const Eigen::MatrixBase<DerivedX>& x, const Eigen::MatrixBase<DerivedY>& y) {
  require(x.rows() == y.rows(), "linear_cka: sample count mismatch");
  require(x.rows() >= 2, "linear_cka: need at least two samples");
  const Matrix xc = x.derived().rowwise() - x.derived().colwise().mean();
  const Matrix yc = y.derived().rowwise() - y.derived().colwise().mean();
  const Scalar cross = (yc.transpose() * xc).squaredNorm();
  const Scalar xnorm = (xc.transpose() * xc).norm();
  const Scalar ynorm = (yc.transpose() * yc).norm();
  require(xnorm > 0 && ynorm > 0, "linear_cka: zero-variance input");
  return cross / (xnorm * ynorm);
}

struct CkaReport {
  Matrix values;              // pairwise CKA, symmetric, unit diagonal
  Scalar mean_off_diagonal = 0;
};

/// Pairwise CKA over a list of per-extractor feature matrices (samples x
/// dims, same samples in the same order).
CkaReport cka_report(const std::vector<Matrix>& features);

void save_cka_report(const CkaReport& report, const std::string& path);

}  // namespace tagfex::analysis
