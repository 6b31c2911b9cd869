// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tagfex/nn/layers.hpp"

namespace tagfex::nn {

/// Convolutional backbone layout. The default is the desk-scale stack:
/// four stride-2 conv/bn/relu blocks turning 3x32x32 into a 128x2x2 map.
struct ArchitectureSpec {
  int in_channels = 3;
  int input_size = 32;
  int kernel = 3;
  int stride = 2;
  int pad = 1;
  std::vector<int> channels{32, 64, 128, 128};
  bool batchnorm = true;

  int feature_dim() const { return channels.back(); }
  int spatial_extent() const;

  bool operator==(const ArchitectureSpec&) const = default;
};

struct BackboneFeatures {
  FeatureMap map;  // feature_dim x (batch * H * W)
  Matrix pooled;   // feature_dim x batch, spatial mean of the map
};

/// Feature extractor producing both a spatial map and its pooled vector.
class ConvBackbone {
 public:
  ConvBackbone(const ArchitectureSpec& spec, std::uint64_t seed, const std::string& name);

  BackboneFeatures forward_train(const FeatureMap& images);
  BackboneFeatures forward_eval(const FeatureMap& images) const;

  /// Backpropagates the sum of a spatial-map gradient and a pooled-vector
  /// gradient; either may be empty (zero). Accumulates parameter gradients.
  void backward(const FeatureMap& dmap, const Matrix& dpooled);

  void collect(std::vector<Param*>& out);
  std::vector<Param*> params();
  /// Non-learnable state (normalization running statistics) by name.
  void collect_buffers(std::vector<std::pair<std::string, Vector*>>& out);
  std::int64_t parameter_count() const;

  const ArchitectureSpec& spec() const { return spec_; }
  const std::string& name() const { return name_; }

  std::vector<Conv2d> convs;
  std::vector<BatchNorm2d> bns;
  std::vector<ReLU> relus;

 private:
  ArchitectureSpec spec_;
  std::string name_;
  int out_h_ = 0, out_w_ = 0, out_batch_ = 0;
};

}  // namespace tagfex::nn
