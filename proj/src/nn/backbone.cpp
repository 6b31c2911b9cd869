// SPDX-License-Identifier: Apache-2.0
#include "tagfex/nn/backbone.hpp"

namespace tagfex::nn {

int ArchitectureSpec::spatial_extent() const {
  int extent = input_size;
  for (size_t i = 0; i < channels.size(); ++i) {
    extent = conv_out_extent(extent, kernel, stride, pad);
  }
  return extent;
}

ConvBackbone::ConvBackbone(const ArchitectureSpec& spec, std::uint64_t seed,
                           const std::string& name)
    : spec_(spec), name_(name) {
  require(!spec.channels.empty(), "ConvBackbone: empty channel list");
  int in_ch = spec.in_channels;
  for (size_t i = 0; i < spec.channels.size(); ++i) {
    Rng rng(derive_seed(seed, "conv", i));
    const std::string layer = name + "/conv" + std::to_string(i);
    convs.emplace_back(layer, in_ch, spec.channels[i], spec.kernel, spec.stride, spec.pad, rng);
    if (spec.batchnorm) bns.emplace_back(name + "/bn" + std::to_string(i), spec.channels[i]);
    relus.emplace_back();
    in_ch = spec.channels[i];
  }
  require(spec.spatial_extent() >= 1, "ConvBackbone: input collapses below 1x1");
}

BackboneFeatures ConvBackbone::forward_train(const FeatureMap& images) {
  require(images.dim() == spec_.in_channels && images.height == spec_.input_size &&
              images.width == spec_.input_size,
          "ConvBackbone: input shape mismatch for " + name_);
  FeatureMap h = images;
  for (size_t i = 0; i < convs.size(); ++i) {
    h = convs[i].forward_train(h);
    if (spec_.batchnorm) h = bns[i].forward_train(h);
    h = relus[i].forward_train(h);
  }
  out_h_ = h.height;
  out_w_ = h.width;
  out_batch_ = h.batch;
  BackboneFeatures out;
  out.pooled = h.pooled();
  out.map = std::move(h);
  return out;
}

BackboneFeatures ConvBackbone::forward_eval(const FeatureMap& images) const {
  require(images.dim() == spec_.in_channels && images.height == spec_.input_size &&
              images.width == spec_.input_size,
          "ConvBackbone: input shape mismatch for " + name_);
  FeatureMap h = images;
  for (size_t i = 0; i < convs.size(); ++i) {
    h = convs[i].forward_eval(h);
    if (spec_.batchnorm) h = bns[i].forward_eval(h);
    h = relus[i].forward_eval(h);
  }
  BackboneFeatures out;
  out.pooled = h.pooled();
  out.map = std::move(h);
  return out;
}

void ConvBackbone::backward(const FeatureMap& dmap, const Matrix& dpooled) {
  FeatureMap grad(spec_.feature_dim(), out_batch_, out_h_, out_w_);
  if (dmap.v.size() > 0) {
    require(grad.same_shape(dmap), "ConvBackbone::backward: map gradient shape mismatch");
    grad.v = dmap.v;
  }
  if (dpooled.size() > 0) {
    require(dpooled.rows() == spec_.feature_dim() && dpooled.cols() == out_batch_,
            "ConvBackbone::backward: pooled gradient shape mismatch");
    const Scalar inv_hw = 1.0 / static_cast<Scalar>(out_h_ * out_w_);
    for (int b = 0; b < out_batch_; ++b) {
      grad.sample(b).colwise() += (dpooled.col(b) * inv_hw).eval();
    }
  }
  for (int i = static_cast<int>(convs.size()) - 1; i >= 0; --i) {
    grad = relus[i].backward(grad);
    if (spec_.batchnorm) grad = bns[i].backward(grad);
    grad = convs[i].backward(grad);
  }
}

void ConvBackbone::collect(std::vector<Param*>& out) {
  for (size_t i = 0; i < convs.size(); ++i) {
    convs[i].collect(out);
    if (spec_.batchnorm) bns[i].collect(out);
  }
}

std::vector<Param*> ConvBackbone::params() {
  std::vector<Param*> out;
  collect(out);
  return out;
}

void ConvBackbone::collect_buffers(std::vector<std::pair<std::string, Vector*>>& out) {
  for (auto& bn : bns) {
    const std::string base = bn.gamma.name.substr(0, bn.gamma.name.size() - 6);  // strip "/gamma"
    out.emplace_back(base + "/running_mean", &bn.running_mean);
    out.emplace_back(base + "/running_var", &bn.running_var);
  }
}

std::int64_t ConvBackbone::parameter_count() const {
  std::int64_t n = 0;
  for (const auto& c : convs) n += c.weight.value.size() + c.bias.value.size();
  for (const auto& b : bns) n += b.gamma.value.size() + b.beta.value.size();
  return n;
}

}  // namespace tagfex::nn
