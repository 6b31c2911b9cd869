// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>

#include "tagfex/core/types.hpp"

namespace tagfex::data {

/// Fixed four-transform pipeline for the contrastive views: random resized
/// crop, horizontal flip, color jitter (brightness/contrast/saturation/hue)
/// and random grayscale. All strengths at zero yield the untouched image.
struct AugmentPolicy {
  Scalar crop_min_scale = 0.5;  // area fraction; [1,1] disables cropping
  Scalar crop_max_scale = 1.0;
  Scalar flip_prob = 0.5;
  Scalar color_jitter_prob = 0.8;
  Scalar brightness = 0.4;
  Scalar contrast = 0.4;
  Scalar saturation = 0.4;
  Scalar hue = 0.5;  // fraction of the full hue circle, torchvision-style cap
  Scalar grayscale_prob = 0.2;

  bool is_identity() const {
    return crop_min_scale >= 1.0 && crop_max_scale >= 1.0 && flip_prob <= 0.0 &&
           color_jitter_prob <= 0.0 && grayscale_prob <= 0.0;
  }
};

struct AugmentedPair {
  Matrix view_a;  // channels x (H*W)
  Matrix view_b;
  int source_index = 0;
  std::uint64_t seed = 0;
};

/// One stochastic transform of `img` (channels x H*W), fully determined by
/// the seed. Parameter draw order is fixed and independent of which
/// transforms fire.
Matrix augment_image(const Matrix& img, int height, int width, const AugmentPolicy& policy,
                     std::uint64_t seed);

/// Two independent views of the same image: view v uses seed (seed, v).
AugmentedPair two_view_augment(const Matrix& img, int height, int width,
                               const AugmentPolicy& policy, std::uint64_t seed,
                               int source_index = 0);

}  // namespace tagfex::data
