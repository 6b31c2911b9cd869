// SPDX-License-Identifier: Apache-2.0
#include "tagfex/attn/merge_attention.hpp"

#include <cmath>
#include <fstream>

namespace tagfex::attn {

namespace {

nn::Param make_weight(const std::string& name, int dim, std::uint64_t seed) {
  nn::Param p(name, dim, dim);
  Rng rng(derive_seed(seed, name));
  nn::kaiming_uniform(p.value, dim, rng);
  return p;
}

}  // namespace

MergeAttentionBlock::MergeAttentionBlock(int dim_, int heads_, std::uint64_t seed,
                                         const std::string& name)
    : dim(dim_),
      heads(heads_),
      ln_ts(name + "/ln_ts", dim_),
      ln_ta(name + "/ln_ta", dim_),
      wq(make_weight(name + "/Wq", dim_, seed)),
      wk_ts(make_weight(name + "/Wk_ts", dim_, seed)),
      wv_ts(make_weight(name + "/Wv_ts", dim_, seed)),
      wk_ta(make_weight(name + "/Wk_ta", dim_, seed)),
      wv_ta(make_weight(name + "/Wv_ta", dim_, seed)) {
  require(heads_ >= 1 && dim_ % heads_ == 0, "MergeAttentionBlock: head count must divide dim");
}

namespace {

/// Scaled dot-product attention over one batch with pre-projected tensors.
/// Emits merged tokens and, optionally, per-sample per-head softmax maps.
void attention_core(int dim, int heads, int batch, int n_tokens, const Matrix& q,
                    const Matrix& k_ts, const Matrix& v_ts, const Matrix& k_ta,
                    const Matrix& v_ta, Matrix& merged,
                    std::vector<std::vector<Matrix>>* attn_store,
                    std::vector<Matrix>* attn_mean) {
  const int dh = dim / heads;
  const Scalar scale = 1.0 / std::sqrt(static_cast<Scalar>(dh));
  merged.setZero(dim, static_cast<Eigen::Index>(batch) * n_tokens);
  if (attn_store) attn_store->assign(batch, std::vector<Matrix>());
  if (attn_mean) attn_mean->assign(batch, Matrix());

  for (int b = 0; b < batch; ++b) {
    const Eigen::Index c0 = static_cast<Eigen::Index>(b) * n_tokens;
    Matrix mean_map;
    if (attn_mean) mean_map = Matrix::Zero(n_tokens, 2 * n_tokens);
    for (int h = 0; h < heads; ++h) {
      const Eigen::Index r0 = static_cast<Eigen::Index>(h) * dh;
      Matrix kh(dh, 2 * n_tokens);
      kh << k_ts.block(r0, c0, dh, n_tokens), k_ta.block(r0, c0, dh, n_tokens);
      Matrix vh(dh, 2 * n_tokens);
      vh << v_ts.block(r0, c0, dh, n_tokens), v_ta.block(r0, c0, dh, n_tokens);

      Matrix logits = q.block(r0, c0, dh, n_tokens).transpose() * kh * scale;
      for (Eigen::Index row = 0; row < logits.rows(); ++row) {
        const Scalar m = logits.row(row).maxCoeff();
        logits.row(row) = (logits.row(row).array() - m).exp();
        logits.row(row) /= logits.row(row).sum();
      }
      merged.block(r0, c0, dh, n_tokens) = vh * logits.transpose();
      if (attn_mean) mean_map += logits / static_cast<Scalar>(heads);
      if (attn_store) (*attn_store)[b].push_back(std::move(logits));
    }
    if (attn_mean) (*attn_mean)[b] = std::move(mean_map);
  }
}

}  // namespace

FeatureMap MergeAttentionBlock::forward_train(const FeatureMap& f_ts, const FeatureMap& f_ta,
                                              std::vector<Matrix>* attention) {
  require(f_ts.same_shape(f_ta) && f_ts.dim() == dim, "MergeAttentionBlock: map shape mismatch");
  cache_.z_ts = ln_ts.forward_train(f_ts.v);
  cache_.z_ta = ln_ta.forward_train(f_ta.v);
  cache_.q.noalias() = wq.value * cache_.z_ts;
  cache_.k_ts.noalias() = wk_ts.value * cache_.z_ts;
  cache_.v_ts.noalias() = wv_ts.value * cache_.z_ts;
  cache_.k_ta.noalias() = wk_ta.value * cache_.z_ta;
  cache_.v_ta.noalias() = wv_ta.value * cache_.z_ta;
  cache_.batch = f_ts.batch;
  cache_.tokens = f_ts.positions();
  cache_.height = f_ts.height;
  cache_.width = f_ts.width;

  FeatureMap merged(dim, f_ts.batch, f_ts.height, f_ts.width);
  std::vector<Matrix> mean_maps;
  attention_core(dim, heads, cache_.batch, cache_.tokens, cache_.q, cache_.k_ts, cache_.v_ts,
                 cache_.k_ta, cache_.v_ta, merged.v, &cache_.attn,
                 attention ? &mean_maps : nullptr);
  if (attention) *attention = std::move(mean_maps);
  return merged;
}

FeatureMap MergeAttentionBlock::forward_eval(const FeatureMap& f_ts, const FeatureMap& f_ta,
                                             std::vector<Matrix>* attention) const {
  require(f_ts.same_shape(f_ta) && f_ts.dim() == dim, "MergeAttentionBlock: map shape mismatch");
  const Matrix z_ts = ln_ts.forward_eval(f_ts.v);
  const Matrix z_ta = ln_ta.forward_eval(f_ta.v);
  FeatureMap merged(dim, f_ts.batch, f_ts.height, f_ts.width);
  std::vector<Matrix> mean_maps;
  attention_core(dim, heads, f_ts.batch, f_ts.positions(), wq.value * z_ts, wk_ts.value * z_ts,
                 wv_ts.value * z_ts, wk_ta.value * z_ta, wv_ta.value * z_ta, merged.v, nullptr,
                 attention ? &mean_maps : nullptr);
  if (attention) *attention = std::move(mean_maps);
  return merged;
}

FeatureMap MergeAttentionBlock::backward(const FeatureMap& dmerged) {
  require(dmerged.batch == cache_.batch && dmerged.positions() == cache_.tokens,
          "MergeAttentionBlock::backward: no matching forward");
  const int n = cache_.tokens;
  const int dh = dim / heads;
  const Scalar scale = 1.0 / std::sqrt(static_cast<Scalar>(dh));

  Matrix dq = Matrix::Zero(dim, cache_.q.cols());
  Matrix dk_ts = Matrix::Zero(dim, cache_.q.cols());
  Matrix dv_ts = Matrix::Zero(dim, cache_.q.cols());
  Matrix dk_ta = Matrix::Zero(dim, cache_.q.cols());
  Matrix dv_ta = Matrix::Zero(dim, cache_.q.cols());

  for (int b = 0; b < cache_.batch; ++b) {
    const Eigen::Index c0 = static_cast<Eigen::Index>(b) * n;
    for (int h = 0; h < heads; ++h) {
      const Eigen::Index r0 = static_cast<Eigen::Index>(h) * dh;
      const Matrix& a = cache_.attn[b][h];  // N x 2N
      Matrix vh(dh, 2 * n);
      vh << cache_.v_ts.block(r0, c0, dh, n), cache_.v_ta.block(r0, c0, dh, n);

      const Matrix doh = dmerged.v.block(r0, c0, dh, n);
      const Matrix dvh = doh * a;                  // dh x 2N
      Matrix da = doh.transpose() * vh;            // N x 2N
      for (Eigen::Index row = 0; row < da.rows(); ++row) {
        const Scalar dot = da.row(row).dot(a.row(row));
        da.row(row) = (da.row(row).array() - dot) * a.row(row).array();
      }
      da *= scale;

      dq.block(r0, c0, dh, n).noalias() +=
          (Matrix(dh, 2 * n) << cache_.k_ts.block(r0, c0, dh, n),
           cache_.k_ta.block(r0, c0, dh, n))
              .finished() *
          da.transpose();
      const Matrix dkh = cache_.q.block(r0, c0, dh, n) * da;  // dh x 2N
      dk_ts.block(r0, c0, dh, n) += dkh.leftCols(n);
      dk_ta.block(r0, c0, dh, n) += dkh.rightCols(n);
      dv_ts.block(r0, c0, dh, n) += dvh.leftCols(n);
      dv_ta.block(r0, c0, dh, n) += dvh.rightCols(n);
    }
  }

  wq.grad.noalias() += dq * cache_.z_ts.transpose();
  wk_ts.grad.noalias() += dk_ts * cache_.z_ts.transpose();
  wv_ts.grad.noalias() += dv_ts * cache_.z_ts.transpose();
  wk_ta.grad.noalias() += dk_ta * cache_.z_ta.transpose();
  wv_ta.grad.noalias() += dv_ta * cache_.z_ta.transpose();

  const Matrix dz_ts =
      wq.value.transpose() * dq + wk_ts.value.transpose() * dk_ts + wv_ts.value.transpose() * dv_ts;
  const Matrix dz_ta = wk_ta.value.transpose() * dk_ta + wv_ta.value.transpose() * dv_ta;

  // The task-agnostic norm trains, but its input gradient is dropped: the
  // task-agnostic extractor must stay untouched by classification signals.
  ln_ta.backward(dz_ta);

  FeatureMap d_ts(dim, cache_.batch, cache_.height, cache_.width);
  d_ts.v = ln_ts.backward(dz_ts);
  return d_ts;
}

void MergeAttentionBlock::collect(std::vector<nn::Param*>& out) {
  ln_ts.collect(out);
  ln_ta.collect(out);
  out.push_back(&wq);
  out.push_back(&wk_ts);
  out.push_back(&wv_ts);
  out.push_back(&wk_ta);
  out.push_back(&wv_ta);
}

std::int64_t MergeAttentionBlock::parameter_count() const {
  return 5 * static_cast<std::int64_t>(dim) * dim + 4 * dim;
}

Scalar AttentionRecord::task_agnostic_mass() const {
  const Eigen::Index n = mean_map.rows();
  return mean_map.rightCols(n).sum() / static_cast<Scalar>(n);
}

AttentionRecord record_attention(int task, int epoch, const std::vector<Matrix>& sample_maps) {
  require(!sample_maps.empty(), "record_attention: no maps");
  AttentionRecord rec;
  rec.task = task;
  rec.epoch = epoch;
  rec.mean_map = Matrix::Zero(sample_maps.front().rows(), sample_maps.front().cols());
  for (const Matrix& m : sample_maps) rec.mean_map += m;
  rec.mean_map /= static_cast<Scalar>(sample_maps.size());
  return rec;
}

void save_attention_record(const AttentionRecord& rec, const std::string& path) {
  std::ofstream out(path);
  require(out.good(), "save_attention_record: cannot open " + path);
  out << rec.mean_map.rows() << " " << rec.mean_map.cols() << "\n";
  char buf[64];
  for (Eigen::Index i = 0; i < rec.mean_map.rows(); ++i) {
    for (Eigen::Index j = 0; j < rec.mean_map.cols(); ++j) {
      std::snprintf(buf, sizeof(buf), "%.17g", rec.mean_map(i, j));
      out << buf << (j + 1 == rec.mean_map.cols() ? "\n" : " ");
    }
  }
}

AttentionRecord load_attention_record(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), "load_attention_record: cannot open " + path);
  Eigen::Index rows = 0, cols = 0;
  in >> rows >> cols;
  AttentionRecord rec;
  rec.mean_map.resize(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) in >> rec.mean_map(i, j);
  }
  require(static_cast<bool>(in), "load_attention_record: truncated file " + path);
  return rec;
}

}  // namespace tagfex::attn
