// SPDX-License-Identifier: Apache-2.0
#include "tagfex/ssl/infonce.hpp"

#include <cmath>

namespace tagfex::ssl {

namespace {

void check_inputs(const Matrix& z, const Matrix& zp, Scalar tau) {
  require(z.cols() >= 2, "infonce: batch must contain at least two pairs");
  require(z.rows() == zp.rows() && z.cols() == zp.cols(), "infonce: view shape mismatch");
  require(tau > 0, "infonce: temperature must be positive");
}

/// Column-normalizes and returns the original norms.
Matrix normalize_cols(const Matrix& z, Vector& norms) {
  norms = z.colwise().norm();
  require((norms.array() > 0).all(), "infonce: zero embedding vector");
  Matrix n = z;
  for (Eigen::Index j = 0; j < n.cols(); ++j) n.col(j) /= norms(j);
  return n;
}

/// Backward through column-wise L2 normalization: dz = (dn - n (n.dn)) / r.
Matrix normalize_backward(const Matrix& n, const Vector& norms, const Matrix& dn) {
  Matrix dz = dn;
  for (Eigen::Index j = 0; j < n.cols(); ++j) {
    dz.col(j) = (dn.col(j) - n.col(j) * n.col(j).dot(dn.col(j))) / norms(j);
  }
  return dz;
}

/// Stable log-sum-exp of selected entries of a row, excluding index `skip`.
Scalar row_logsumexp_excl(const Matrix& s, Eigen::Index i, Eigen::Index skip, Scalar tau) {
  Scalar m = -std::numeric_limits<Scalar>::infinity();
  for (Eigen::Index j = 0; j < s.cols(); ++j) {
    if (j == skip) continue;
    m = std::max(m, s(i, j) / tau);
  }
  Scalar acc = 0;
  for (Eigen::Index j = 0; j < s.cols(); ++j) {
    if (j == skip) continue;
    acc += std::exp(s(i, j) / tau - m);
  }
  return m + std::log(acc);
}

}  // namespace

Scalar infonce(const Matrix& z, const Matrix& zp, Scalar tau) {
  check_inputs(z, zp, tau);
  Vector norms, norms_p;
  const Matrix n = normalize_cols(z, norms);
  const Matrix np = normalize_cols(zp, norms_p);
  const Matrix s = n.transpose() * np;
  const Eigen::Index b = s.rows();
  Scalar value = 0;
  for (Eigen::Index i = 0; i < b; ++i) {
    value += s(i, i) / tau - row_logsumexp_excl(s, i, i, tau);
  }
  return value / static_cast<Scalar>(b);
}

InfoNceGrad infonce_with_grad(const Matrix& z, const Matrix& zp, Scalar tau) {
  check_inputs(z, zp, tau);
  Vector norms, norms_p;
  const Matrix n = normalize_cols(z, norms);
  const Matrix np = normalize_cols(zp, norms_p);
  const Matrix s = n.transpose() * np;
  const Eigen::Index b = s.rows();
  const Scalar inv_btau = 1.0 / (static_cast<Scalar>(b) * tau);

  InfoNceGrad out;
  Matrix ds = Matrix::Zero(b, b);
  for (Eigen::Index i = 0; i < b; ++i) {
    const Scalar lse = row_logsumexp_excl(s, i, i, tau);
    out.value += s(i, i) / tau - lse;
    ds(i, i) += inv_btau;
    for (Eigen::Index j = 0; j < b; ++j) {
      if (j == i) continue;
      ds(i, j) -= std::exp(s(i, j) / tau - lse) * inv_btau;
    }
  }
  out.value /= static_cast<Scalar>(b);

  const Matrix dn = np * ds.transpose();
  const Matrix dnp = n * ds;
  out.dz = normalize_backward(n, norms, dn);
  out.dzp = normalize_backward(np, norms_p, dnp);
  return out;
}

Scalar infonce_symmetric(const Matrix& z, const Matrix& zp, Scalar tau) {
  check_inputs(z, zp, tau);
  Vector norms, norms_p;
  const Matrix n = normalize_cols(z, norms);
  const Matrix np = normalize_cols(zp, norms_p);
  const Eigen::Index b = n.cols();
  Matrix u(n.rows(), 2 * b);
  u << n, np;
  const Matrix s = u.transpose() * u;
  Scalar value = 0;
  for (Eigen::Index i = 0; i < 2 * b; ++i) {
    const Eigen::Index partner = (i + b) % (2 * b);
    value += s(i, partner) / tau - row_logsumexp_excl(s, i, i, tau);
  }
  return value / static_cast<Scalar>(2 * b);
}

InfoNceGrad infonce_symmetric_with_grad(const Matrix& z, const Matrix& zp, Scalar tau) {
  check_inputs(z, zp, tau);
  Vector norms, norms_p;
  const Matrix n = normalize_cols(z, norms);
  const Matrix np = normalize_cols(zp, norms_p);
  const Eigen::Index b = n.cols();
  Matrix u(n.rows(), 2 * b);
  u << n, np;
  const Matrix s = u.transpose() * u;
  const Scalar inv = 1.0 / (static_cast<Scalar>(2 * b) * tau);

  InfoNceGrad out;
  Matrix ds = Matrix::Zero(2 * b, 2 * b);
  for (Eigen::Index i = 0; i < 2 * b; ++i) {
    const Eigen::Index partner = (i + b) % (2 * b);
    const Scalar lse = row_logsumexp_excl(s, i, i, tau);
    out.value += s(i, partner) / tau - lse;
    ds(i, partner) += inv;
    for (Eigen::Index j = 0; j < 2 * b; ++j) {
      if (j == i) continue;
      ds(i, j) -= std::exp(s(i, j) / tau - lse) * inv;
    }
  }
  out.value /= static_cast<Scalar>(2 * b);

  const Matrix du = u * (ds + ds.transpose());
  out.dz = normalize_backward(n, norms, du.leftCols(b));
  out.dzp = normalize_backward(np, norms_p, du.rightCols(b));
  return out;
}

}  // namespace tagfex::ssl
