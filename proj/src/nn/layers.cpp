// SPDX-License-Identifier: Apache-2.0
#include "tagfex/nn/layers.hpp"

#include <cmath>

namespace tagfex::nn {

void kaiming_uniform(Matrix& m, int fan_in, Rng& rng) {
  const Scalar limit = std::sqrt(6.0 / static_cast<Scalar>(fan_in));
  uniform_fill(m, -limit, limit, rng);
}

void uniform_fill(Matrix& m, Scalar lo, Scalar hi, Rng& rng) {
  for (Eigen::Index j = 0; j < m.cols(); ++j) {
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      m(i, j) = rng.uniform(lo, hi);
    }
  }
}

Matrix im2col(const FeatureMap& x, int ksize, int stride, int pad, int ho, int wo) {
  const int channels = x.dim();
  const int hw = x.positions();
  Matrix cols = Matrix::Zero(static_cast<Eigen::Index>(channels) * ksize * ksize,
                             static_cast<Eigen::Index>(x.batch) * ho * wo);
  for (int b = 0; b < x.batch; ++b) {
    const Eigen::Index in_base = static_cast<Eigen::Index>(b) * hw;
    const Eigen::Index out_base = static_cast<Eigen::Index>(b) * ho * wo;
    for (int oy = 0; oy < ho; ++oy) {
      for (int ox = 0; ox < wo; ++ox) {
        const Eigen::Index col = out_base + static_cast<Eigen::Index>(oy) * wo + ox;
        for (int ky = 0; ky < ksize; ++ky) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= x.height) continue;
          for (int kx = 0; kx < ksize; ++kx) {
            const int ix = ox * stride - pad + kx;
            if (ix < 0 || ix >= x.width) continue;
            const Eigen::Index in_col = in_base + static_cast<Eigen::Index>(iy) * x.width + ix;
            const Eigen::Index row0 = static_cast<Eigen::Index>(ky) * ksize + kx;
            for (int c = 0; c < channels; ++c) {
              cols(static_cast<Eigen::Index>(c) * ksize * ksize + row0, col) = x.v(c, in_col);
            }
          }
        }
      }
    }
  }
  return cols;
}

void col2im_accumulate(const Matrix& dcols, FeatureMap& dx, int ksize, int stride, int pad,
                       int ho, int wo) {
  const int channels = dx.dim();
  const int hw = dx.positions();
  for (int b = 0; b < dx.batch; ++b) {
    const Eigen::Index in_base = static_cast<Eigen::Index>(b) * hw;
    const Eigen::Index out_base = static_cast<Eigen::Index>(b) * ho * wo;
    for (int oy = 0; oy < ho; ++oy) {
      for (int ox = 0; ox < wo; ++ox) {
        const Eigen::Index col = out_base + static_cast<Eigen::Index>(oy) * wo + ox;
        for (int ky = 0; ky < ksize; ++ky) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= dx.height) continue;
          for (int kx = 0; kx < ksize; ++kx) {
            const int ix = ox * stride - pad + kx;
            if (ix < 0 || ix >= dx.width) continue;
            const Eigen::Index in_col = in_base + static_cast<Eigen::Index>(iy) * dx.width + ix;
            const Eigen::Index row0 = static_cast<Eigen::Index>(ky) * ksize + kx;
            for (int c = 0; c < channels; ++c) {
              dx.v(c, in_col) += dcols(static_cast<Eigen::Index>(c) * ksize * ksize + row0, col);
            }
          }
        }
      }
    }
  }
}

Conv2d::Conv2d(std::string name, int in_channels_, int out_channels_, int ksize_, int stride_,
               int pad_, Rng& rng)
    : in_channels(in_channels_),
      out_channels(out_channels_),
      ksize(ksize_),
      stride(stride_),
      pad(pad_),
      weight(name + "/W", out_channels_, in_channels_ * ksize_ * ksize_),
      bias(name + "/b", out_channels_, 1) {
  kaiming_uniform(weight.value, in_channels * ksize * ksize, rng);
  const Scalar limit = 1.0 / std::sqrt(static_cast<Scalar>(in_channels * ksize * ksize));
  uniform_fill(bias.value, -limit, limit, rng);
}

FeatureMap Conv2d::forward_impl(const FeatureMap& x, bool cache) {
  require(x.dim() == in_channels, "Conv2d: input channel mismatch for " + weight.name);
  const int ho = conv_out_extent(x.height, ksize, stride, pad);
  const int wo = conv_out_extent(x.width, ksize, stride, pad);
  require(ho > 0 && wo > 0, "Conv2d: input too small for " + weight.name);
  Matrix cols = im2col(x, ksize, stride, pad, ho, wo);
  FeatureMap y(out_channels, x.batch, ho, wo);
  y.v.noalias() = weight.value * cols;
  y.v.colwise() += bias.value.col(0);
  if (cache) {
    cached_cols_ = std::move(cols);
    cached_batch_ = x.batch;
    cached_h_ = x.height;
    cached_w_ = x.width;
  }
  return y;
}

FeatureMap Conv2d::forward_train(const FeatureMap& x) { return forward_impl(x, true); }

FeatureMap Conv2d::forward_eval(const FeatureMap& x) const {
  // Caching disabled, so the impl leaves the layer untouched.
  return const_cast<Conv2d*>(this)->forward_impl(x, false);
}

FeatureMap Conv2d::backward(const FeatureMap& dy) {
  require(cached_batch_ == dy.batch, "Conv2d::backward: no matching cached forward");
  weight.grad.noalias() += dy.v * cached_cols_.transpose();
  bias.grad.col(0) += dy.v.rowwise().sum();
  const Matrix dcols = weight.value.transpose() * dy.v;
  FeatureMap dx(in_channels, cached_batch_, cached_h_, cached_w_);
  col2im_accumulate(dcols, dx, ksize, stride, pad, dy.height, dy.width);
  return dx;
}

void Conv2d::collect(std::vector<Param*>& out) {
  out.push_back(&weight);
  out.push_back(&bias);
}

BatchNorm2d::BatchNorm2d(std::string name, int channels_)
    : channels(channels_),
      gamma(name + "/gamma", channels_, 1),
      beta(name + "/beta", channels_, 1),
      running_mean(Vector::Zero(channels_)),
      running_var(Vector::Ones(channels_)) {
  gamma.value.setOnes();
}

FeatureMap BatchNorm2d::forward_train(const FeatureMap& x) {
  require(x.dim() == channels, "BatchNorm2d: channel mismatch for " + gamma.name);
  const Vector mean = x.v.rowwise().mean();
  const Matrix centered = x.v.colwise() - mean;
  const Vector var = centered.array().square().rowwise().mean().matrix();
  cached_inv_std_ = (var.array() + eps).rsqrt().matrix();
  cached_xhat_ = cached_inv_std_.asDiagonal() * centered;
  running_mean = (1.0 - momentum) * running_mean + momentum * mean;
  running_var = (1.0 - momentum) * running_var + momentum * var;

  FeatureMap y = x;
  y.v = gamma.value.col(0).asDiagonal() * cached_xhat_;
  y.v.colwise() += beta.value.col(0);
  return y;
}

FeatureMap BatchNorm2d::forward_eval(const FeatureMap& x) const {
  require(x.dim() == channels, "BatchNorm2d: channel mismatch for " + gamma.name);
  const Vector inv_std = (running_var.array() + eps).rsqrt().matrix();
  const Vector scale = gamma.value.col(0).cwiseProduct(inv_std);
  FeatureMap y = x;
  y.v = scale.asDiagonal() * (x.v.colwise() - running_mean);
  y.v.colwise() += beta.value.col(0);
  return y;
}

FeatureMap BatchNorm2d::backward(const FeatureMap& dy) {
  require(cached_xhat_.cols() == dy.v.cols(), "BatchNorm2d::backward: no matching forward");
  gamma.grad.col(0) += dy.v.cwiseProduct(cached_xhat_).rowwise().sum();
  beta.grad.col(0) += dy.v.rowwise().sum();

  const Vector mean_dy = dy.v.rowwise().mean();
  const Vector mean_dy_xhat = dy.v.cwiseProduct(cached_xhat_).rowwise().mean();
  const Vector scale = gamma.value.col(0).cwiseProduct(cached_inv_std_);
  FeatureMap dx = dy;
  dx.v = scale.asDiagonal() *
         ((dy.v.colwise() - mean_dy) - mean_dy_xhat.asDiagonal() * cached_xhat_);
  return dx;
}

void BatchNorm2d::collect(std::vector<Param*>& out) {
  out.push_back(&gamma);
  out.push_back(&beta);
}

FeatureMap ReLU::forward_train(const FeatureMap& x) {
  cached_mask_ = (x.v.array() > 0).cast<Scalar>().matrix();
  FeatureMap y = x;
  y.v = x.v.cwiseMax(0.0);
  return y;
}

FeatureMap ReLU::forward_eval(const FeatureMap& x) const {
  FeatureMap y = x;
  y.v = x.v.cwiseMax(0.0);
  return y;
}

FeatureMap ReLU::backward(const FeatureMap& dy) const {
  FeatureMap dx = dy;
  dx.v = dy.v.cwiseProduct(cached_mask_);
  return dx;
}

Linear::Linear(std::string name, int in_dim_, int out_dim_, Rng& rng, bool with_bias_)
    : in_dim(in_dim_),
      out_dim(out_dim_),
      with_bias(with_bias_),
      weight(name + "/W", out_dim_, in_dim_),
      bias(name + "/b", out_dim_, 1) {
  kaiming_uniform(weight.value, in_dim, rng);
  if (with_bias) {
    const Scalar limit = 1.0 / std::sqrt(static_cast<Scalar>(in_dim));
    uniform_fill(bias.value, -limit, limit, rng);
  }
}

Matrix Linear::forward_train(const Matrix& x) {
  cached_input_ = x;
  return forward_eval(x);
}

Matrix Linear::forward_eval(const Matrix& x) const {
  require(x.rows() == in_dim, "Linear: input dim mismatch for " + weight.name);
  Matrix y = weight.value * x;
  if (with_bias) y.colwise() += bias.value.col(0);
  return y;
}

Matrix Linear::backward(const Matrix& dy) {
  require(cached_input_.cols() == dy.cols(), "Linear::backward: no matching forward");
  weight.grad.noalias() += dy * cached_input_.transpose();
  if (with_bias) bias.grad.col(0) += dy.rowwise().sum();
  return weight.value.transpose() * dy;
}

void Linear::collect(std::vector<Param*>& out) {
  out.push_back(&weight);
  if (with_bias) out.push_back(&bias);
}

LayerNorm::LayerNorm(std::string name, int dim_)
    : dim(dim_), gamma(name + "/gamma", dim_, 1), beta(name + "/beta", dim_, 1) {
  gamma.value.setOnes();
}

Matrix LayerNorm::forward_train(const Matrix& tokens) {
  require(tokens.rows() == dim, "LayerNorm: dim mismatch for " + gamma.name);
  const Eigen::RowVectorXd mean = tokens.colwise().mean();
  const Matrix centered = tokens.rowwise() - mean;
  const Eigen::RowVectorXd var = centered.array().square().colwise().mean().matrix();
  cached_inv_std_ = (var.array() + eps).rsqrt().matrix().transpose();
  cached_xhat_ = centered * cached_inv_std_.asDiagonal();
  Matrix y = gamma.value.col(0).asDiagonal() * cached_xhat_;
  y.colwise() += beta.value.col(0);
  return y;
}

Matrix LayerNorm::forward_eval(const Matrix& tokens) const {
  require(tokens.rows() == dim, "LayerNorm: dim mismatch for " + gamma.name);
  const Eigen::RowVectorXd mean = tokens.colwise().mean();
  const Matrix centered = tokens.rowwise() - mean;
  const Eigen::RowVectorXd var = centered.array().square().colwise().mean().matrix();
  const Vector inv_std = (var.array() + eps).rsqrt().matrix().transpose();
  Matrix y = gamma.value.col(0).asDiagonal() * (centered * inv_std.asDiagonal());
  y.colwise() += beta.value.col(0);
  return y;
}

Matrix LayerNorm::backward(const Matrix& dy) {
  require(cached_xhat_.cols() == dy.cols(), "LayerNorm::backward: no matching forward");
  gamma.grad.col(0) += dy.cwiseProduct(cached_xhat_).rowwise().sum();
  beta.grad.col(0) += dy.rowwise().sum();

  const Matrix dxhat = gamma.value.col(0).asDiagonal() * dy;
  const Eigen::RowVectorXd mean_dxhat = dxhat.colwise().mean();
  const Eigen::RowVectorXd mean_dxhat_xhat =
      dxhat.cwiseProduct(cached_xhat_).colwise().mean();
  Matrix dx = (dxhat.rowwise() - mean_dxhat) - cached_xhat_ * mean_dxhat_xhat.asDiagonal();
  dx = dx * cached_inv_std_.asDiagonal();
  return dx;
}

void LayerNorm::collect(std::vector<Param*>& out) {
  out.push_back(&gamma);
  out.push_back(&beta);
}

Mlp2::Mlp2(std::string name, int in_dim, int hidden_dim, int out_dim, Rng& rng)
    : fc1(name + "/fc1", in_dim, hidden_dim, rng), fc2(name + "/fc2", hidden_dim, out_dim, rng) {}

Matrix Mlp2::forward_train(const Matrix& x) {
  Matrix h = fc1.forward_train(x);
  cached_mask_ = (h.array() > 0).cast<Scalar>().matrix();
  h = h.cwiseMax(0.0);
  return fc2.forward_train(h);
}

Matrix Mlp2::forward_eval(const Matrix& x) const {
  const Matrix h = fc1.forward_eval(x).cwiseMax(0.0);
  return fc2.forward_eval(h);
}

Matrix Mlp2::backward(const Matrix& dy) {
  Matrix dh = fc2.backward(dy);
  dh = dh.cwiseProduct(cached_mask_);
  return fc1.backward(dh);
}

void Mlp2::collect(std::vector<Param*>& out) {
  fc1.collect(out);
  fc2.collect(out);
}

}  // namespace tagfex::nn
