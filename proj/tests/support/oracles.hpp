// SPDX-License-Identifier: Apache-2.0
//
// Independent reference implementations used only by tests. Everything here
// is written with plain loops so it shares no code path with the library.
#pragma once

#include <cmath>
#include <vector>

#include "tagfex/core/types.hpp"

namespace tagfex::oracle {

inline Scalar rel_err(Scalar a, Scalar b) {
  const Scalar denom = std::max(std::max(std::abs(a), std::abs(b)), Scalar(1e-12));
  return std::abs(a - b) / denom;
}

/// Pass when |a-b| <= tol * max(|a|,|b|) + floor.
inline bool close(Scalar a, Scalar b, Scalar tol, Scalar floor = 1e-9) {
  return std::abs(a - b) <= tol * std::max(std::abs(a), std::abs(b)) + floor;
}

/// Loop-based evaluation of the contrastive agreement score: cosine
/// similarities, positive pair in the numerator, denominator over the
/// opposite view excluding the positive.
inline Scalar infonce_loops(const Matrix& z, const Matrix& zp, Scalar tau) {
  const int b = static_cast<int>(z.cols());
  const int d = static_cast<int>(z.rows());
  auto sim = [&](int i, int j) {
    Scalar dot = 0, na = 0, nb = 0;
    for (int r = 0; r < d; ++r) {
      dot += z(r, i) * zp(r, j);
      na += z(r, i) * z(r, i);
      nb += zp(r, j) * zp(r, j);
    }
    return dot / (std::sqrt(na) * std::sqrt(nb));
  };
  Scalar acc = 0;
  for (int i = 0; i < b; ++i) {
    Scalar den = 0;
    for (int j = 0; j < b; ++j) {
      if (j != i) den += std::exp(sim(i, j) / tau);
    }
    acc += std::log(std::exp(sim(i, i) / tau) / den);
  }
  return acc / static_cast<Scalar>(b);
}

/// Softmax cross-entropy by direct summation.
inline Scalar cross_entropy_loops(const Matrix& logits, const std::vector<int>& labels) {
  Scalar acc = 0;
  for (int j = 0; j < static_cast<int>(logits.cols()); ++j) {
    Scalar den = 0;
    for (int r = 0; r < static_cast<int>(logits.rows()); ++r) {
      den += std::exp(logits(r, j));
    }
    acc -= std::log(std::exp(logits(labels[static_cast<size_t>(j)], j)) / den);
  }
  return acc / static_cast<Scalar>(logits.cols());
}

/// KL(p||q) between column softmax distributions, by direct summation.
inline Scalar kl_loops(const Matrix& teacher, const Matrix& student) {
  Scalar acc = 0;
  for (int j = 0; j < static_cast<int>(teacher.cols()); ++j) {
    Scalar zt = 0, zs = 0;
    for (int r = 0; r < static_cast<int>(teacher.rows()); ++r) {
      zt += std::exp(teacher(r, j));
      zs += std::exp(student(r, j));
    }
    for (int r = 0; r < static_cast<int>(teacher.rows()); ++r) {
      const Scalar p = std::exp(teacher(r, j)) / zt;
      const Scalar q = std::exp(student(r, j)) / zs;
      acc += p * std::log(p / q);
    }
  }
  return acc / static_cast<Scalar>(teacher.cols());
}

/// Step-by-step greedy herding order: at step k choose the index minimizing
/// the distance between the class mean and the running exemplar mean.
inline std::vector<int> herding_loops(const Matrix& features, int m) {
  const int n = static_cast<int>(features.cols());
  Vector mean = Vector::Zero(features.rows());
  for (int i = 0; i < n; ++i) mean += features.col(i);
  mean /= static_cast<Scalar>(n);

  std::vector<int> order;
  std::vector<bool> used(static_cast<size_t>(n), false);
  Vector sum = Vector::Zero(features.rows());
  for (int k = 1; k <= m; ++k) {
    int best = -1;
    Scalar best_val = 0;
    for (int i = 0; i < n; ++i) {
      if (used[static_cast<size_t>(i)]) continue;
      const Scalar val = (mean - (sum + features.col(i)) / static_cast<Scalar>(k)).norm();
      if (best < 0 || val < best_val) {
        best = i;
        best_val = val;
      }
    }
    used[static_cast<size_t>(best)] = true;
    sum += features.col(best);
    order.push_back(best);
  }
  return order;
}

/// HSIC-form linear CKA: CKA = HSIC(K,L) / sqrt(HSIC(K,K) HSIC(L,L)) with
/// K = X X^T, L = Y Y^T and biased centered HSIC.
inline Scalar cka_hsic_loops(const Matrix& x, const Matrix& y) {
  const int n = static_cast<int>(x.rows());
  auto gram = [&](const Matrix& f) {
    Matrix k(n, n);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) {
        Scalar dot = 0;
        for (int c = 0; c < static_cast<int>(f.cols()); ++c) dot += f(i, c) * f(j, c);
        k(i, j) = dot;
      }
    }
    return k;
  };
  auto center = [&](Matrix k) {
    Vector row_mean = Vector::Zero(n);
    Scalar total = 0;
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) row_mean(i) += k(i, j);
      row_mean(i) /= static_cast<Scalar>(n);
      total += row_mean(i);
    }
    total /= static_cast<Scalar>(n);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) k(i, j) += total - row_mean(i) - row_mean(j);
    }
    return k;
  };
  auto hsic = [&](const Matrix& a, const Matrix& b) {
    Scalar acc = 0;
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) acc += a(i, j) * b(i, j);
    }
    return acc;
  };
  const Matrix kc = center(gram(x));
  const Matrix lc = center(gram(y));
  return hsic(kc, lc) / std::sqrt(hsic(kc, kc) * hsic(lc, lc));
}

}  // namespace tagfex::oracle
