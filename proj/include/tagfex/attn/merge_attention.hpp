// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tagfex/nn/layers.hpp"

namespace tagfex::attn {

/// Row-major token view of a spatial feature map: token t of sample b is the
/// map column at position t (t = y * width + x). Returns d x (B * N).
inline Matrix tokenize(const FeatureMap& f) { return f.v; }

/// Exact inverse of tokenize.
inline FeatureMap detokenize(const Matrix& tokens, int batch, int height, int width) {
  FeatureMap f(static_cast<int>(tokens.rows()), batch, height, width);
  f.v = tokens;
  return f;
}

/// Cross-space attention fusing task-specific and task-agnostic tokens.
///
/// Task-specific tokens produce the queries; keys and values are computed
/// separately per feature space and concatenated task-specific-first along
/// the token axis. The task-agnostic input contributes no gradient: the
/// backward pass stops at its layer norm, whose own parameters still train.
class MergeAttentionBlock {
 public:
  MergeAttentionBlock(int dim, int heads, std::uint64_t seed, const std::string& name = "merge");

  /// Merged tokens O for a batch. `attention` (optional) receives one
  /// head-averaged N x 2N map per sample.
  FeatureMap forward_train(const FeatureMap& f_ts, const FeatureMap& f_ta,
                           std::vector<Matrix>* attention = nullptr);
  FeatureMap forward_eval(const FeatureMap& f_ts, const FeatureMap& f_ta,
                          std::vector<Matrix>* attention = nullptr) const;

  /// Returns the gradient w.r.t. the task-specific map only.
  FeatureMap backward(const FeatureMap& dmerged);

  void collect(std::vector<nn::Param*>& out);
  std::int64_t parameter_count() const;

  int dim = 0;
  int heads = 0;
  nn::LayerNorm ln_ts;
  nn::LayerNorm ln_ta;
  nn::Param wq;     // d x d
  nn::Param wk_ts;  // d x d
  nn::Param wv_ts;  // d x d
  nn::Param wk_ta;  // d x d
  nn::Param wv_ta;  // d x d

 private:
  struct Cache {
    Matrix z_ts, z_ta;          // post-norm tokens, d x (B*N)
    Matrix q, k_ts, v_ts, k_ta, v_ta;
    std::vector<std::vector<Matrix>> attn;  // [sample][head] -> N x 2N
    int batch = 0, tokens = 0, height = 0, width = 0;
  };
  FeatureMap run(const FeatureMap& f_ts, const FeatureMap& f_ta, std::vector<Matrix>* attention,
                 Cache* cache) const;
  Cache cache_;
};

/// Head- and sample-averaged attention map with bookkeeping for the
/// evolution analysis. Every row of `mean_map` sums to one.
struct AttentionRecord {
  int task = 0;
  int epoch = 0;
  Matrix mean_map;  // N x 2N

  /// Fraction of attention mass on the task-agnostic half (columns N..2N-1),
  /// averaged over query rows.
  Scalar task_agnostic_mass() const;
};

AttentionRecord record_attention(int task, int epoch, const std::vector<Matrix>& sample_maps);

/// Text serialization: "N 2N" header line then row-major values.
void save_attention_record(const AttentionRecord& rec, const std::string& path);
AttentionRecord load_attention_record(const std::string& path);

}  // namespace tagfex::attn
