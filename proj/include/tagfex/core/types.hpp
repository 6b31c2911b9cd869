// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <stdexcept>
#include <string>

namespace tagfex {

using Scalar = double;

template <typename T>
using MatrixX = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
template <typename T>
using VectorX = Eigen::Matrix<T, Eigen::Dynamic, 1>;

using Matrix = MatrixX<Scalar>;
using Vector = VectorX<Scalar>;

/// Dense batch of spatial feature maps (or images).
///
/// Stored as one matrix with `dim` rows and `batch * height * width` columns.
/// Column `b * height * width + y * width + x` holds the feature vector at
/// spatial position (y, x) of sample b, so the per-sample column block is the
/// row-major token sequence used by the attention stage.
struct FeatureMap {
  Matrix v;
  int batch = 0;
  int height = 0;
  int width = 0;

  FeatureMap() = default;
  FeatureMap(int dim, int batch_size, int h, int w)
      : v(Matrix::Zero(dim, static_cast<Eigen::Index>(batch_size) * h * w)),
        batch(batch_size),
        height(h),
        width(w) {}

  int dim() const { return static_cast<int>(v.rows()); }
  int positions() const { return height * width; }

  auto sample(int b) { return v.middleCols(static_cast<Eigen::Index>(b) * positions(), positions()); }
  auto sample(int b) const {
    return v.middleCols(static_cast<Eigen::Index>(b) * positions(), positions());
  }

  bool same_shape(const FeatureMap& o) const {
    return batch == o.batch && height == o.height && width == o.width && v.rows() == o.v.rows();
  }

  /// Spatial mean per sample: dim x batch.
  Matrix pooled() const {
    Matrix p(v.rows(), batch);
    for (int b = 0; b < batch; ++b) p.col(b) = sample(b).rowwise().mean();
    return p;
  }
};

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

}  // namespace tagfex
