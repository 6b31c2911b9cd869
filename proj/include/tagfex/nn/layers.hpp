// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "tagfex/core/rng.hpp"
#include "tagfex/core/types.hpp"

namespace tagfex::nn {

/// A learnable array together with its gradient and SGD momentum buffer.
struct Param {
  std::string name;
  Matrix value;
  Matrix grad;
  Matrix momentum;

  Param() = default;
  Param(std::string n, int rows, int cols)
      : name(std::move(n)),
        value(Matrix::Zero(rows, cols)),
        grad(Matrix::Zero(rows, cols)),
        momentum(Matrix::Zero(rows, cols)) {}

  void zero_grad() { grad.setZero(); }
};

/// He-uniform fill over U(-sqrt(6/fan_in), sqrt(6/fan_in)).
/// Draw order is column-major and part of the reproducibility contract.
void kaiming_uniform(Matrix& m, int fan_in, Rng& rng);
void uniform_fill(Matrix& m, Scalar lo, Scalar hi, Rng& rng);

/// im2col for zero-padded strided convolution. Output column
/// b*(ho*wo) + oy*wo + ox holds the receptive field of output pixel (oy, ox)
/// of sample b, rows ordered as (channel, ky, kx).
Matrix im2col(const FeatureMap& x, int ksize, int stride, int pad, int ho, int wo);

/// Adjoint of im2col: scatters column gradients back onto the input map.
void col2im_accumulate(const Matrix& dcols, FeatureMap& dx, int ksize, int stride, int pad,
                       int ho, int wo);

inline int conv_out_extent(int in, int ksize, int stride, int pad) {
  return (in + 2 * pad - ksize) / stride + 1;
}

class Conv2d {
 public:
  Conv2d(std::string name, int in_channels, int out_channels, int ksize, int stride, int pad,
         Rng& rng);

  FeatureMap forward_train(const FeatureMap& x);
  FeatureMap forward_eval(const FeatureMap& x) const;
  /// Returns dx; accumulates weight and bias gradients. Requires a preceding
  /// forward_train on the same input.
  FeatureMap backward(const FeatureMap& dy);

  void collect(std::vector<Param*>& out);

  int in_channels = 0, out_channels = 0, ksize = 0, stride = 0, pad = 0;
  Param weight;  // out_channels x (in_channels * ksize * ksize)
  Param bias;    // out_channels x 1

 private:
  FeatureMap forward_impl(const FeatureMap& x, bool cache);
  Matrix cached_cols_;
  int cached_batch_ = 0, cached_h_ = 0, cached_w_ = 0;
};

/// Per-channel batch normalization over all samples and spatial positions.
/// Training mode normalizes with biased batch statistics and updates the
/// running buffers; eval mode uses the running buffers only.
class BatchNorm2d {
 public:
  BatchNorm2d(std::string name, int channels);

  FeatureMap forward_train(const FeatureMap& x);
  FeatureMap forward_eval(const FeatureMap& x) const;
  FeatureMap backward(const FeatureMap& dy);

  void collect(std::vector<Param*>& out);

  int channels = 0;
  Param gamma;  // channels x 1
  Param beta;   // channels x 1
  Vector running_mean;
  Vector running_var;
  Scalar momentum = 0.1;
  Scalar eps = 1e-5;

 private:
  Matrix cached_xhat_;
  Vector cached_inv_std_;
};

class ReLU {
 public:
  FeatureMap forward_train(const FeatureMap& x);
  FeatureMap forward_eval(const FeatureMap& x) const;
  FeatureMap backward(const FeatureMap& dy) const;

 private:
  Matrix cached_mask_;
};

/// Affine map on column-stacked feature vectors: y = W x + b.
class Linear {
 public:
  Linear(std::string name, int in_dim, int out_dim, Rng& rng, bool with_bias = true);

  Matrix forward_train(const Matrix& x);
  Matrix forward_eval(const Matrix& x) const;
  Matrix backward(const Matrix& dy);

  void collect(std::vector<Param*>& out);

  int in_dim = 0, out_dim = 0;
  bool with_bias = true;
  Param weight;  // out_dim x in_dim
  Param bias;    // out_dim x 1

 private:
  Matrix cached_input_;
};

/// Layer normalization over the feature dimension of each column (token).
class LayerNorm {
 public:
  LayerNorm(std::string name, int dim);

  Matrix forward_train(const Matrix& tokens);
  Matrix forward_eval(const Matrix& tokens) const;
  Matrix backward(const Matrix& dy);

  void collect(std::vector<Param*>& out);

  int dim = 0;
  Param gamma;  // dim x 1
  Param beta;   // dim x 1
  Scalar eps = 1e-5;

 private:
  Matrix cached_xhat_;
  Vector cached_inv_std_;
};

/// Two-layer perceptron with ReLU, used for projection and predictor heads.
class Mlp2 {
 public:
  Mlp2(std::string name, int in_dim, int hidden_dim, int out_dim, Rng& rng);

  Matrix forward_train(const Matrix& x);
  Matrix forward_eval(const Matrix& x) const;
  Matrix backward(const Matrix& dy);

  void collect(std::vector<Param*>& out);

  Linear fc1;
  Linear fc2;

 private:
  Matrix cached_mask_;
};

}  // namespace tagfex::nn
