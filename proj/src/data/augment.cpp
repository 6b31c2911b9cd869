// SPDX-License-Identifier: Apache-2.0
#include "tagfex/data/augment.hpp"

#include <algorithm>
#include <cmath>

#include "tagfex/core/rng.hpp"

namespace tagfex::data {

namespace {

Scalar sample_at(const Matrix& img, int c, int h, int w, int y, int x) {
  y = std::clamp(y, 0, h - 1);
  x = std::clamp(x, 0, w - 1);
  return img(c, y * w + x);
}

/// Bilinear resample of the crop window [y0, y0+side) x [x0, x0+side) onto
/// the full output grid.
Matrix crop_resize(const Matrix& img, int h, int w, Scalar y0, Scalar x0, Scalar side) {
  Matrix out(img.rows(), img.cols());
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const Scalar sy = y0 + (y + 0.5) * side / h - 0.5;
      const Scalar sx = x0 + (x + 0.5) * side / w - 0.5;
      const int iy = static_cast<int>(std::floor(sy));
      const int ix = static_cast<int>(std::floor(sx));
      const Scalar fy = sy - iy;
      const Scalar fx = sx - ix;
      for (int c = 0; c < img.rows(); ++c) {
        const Scalar v = (1 - fy) * ((1 - fx) * sample_at(img, c, h, w, iy, ix) +
                                     fx * sample_at(img, c, h, w, iy, ix + 1)) +
                         fy * ((1 - fx) * sample_at(img, c, h, w, iy + 1, ix) +
                               fx * sample_at(img, c, h, w, iy + 1, ix + 1));
        out(c, y * w + x) = v;
      }
    }
  }
  return out;
}

void rgb_to_hsv(Scalar r, Scalar g, Scalar b, Scalar& h, Scalar& s, Scalar& v) {
  const Scalar mx = std::max({r, g, b});
  const Scalar mn = std::min({r, g, b});
  const Scalar d = mx - mn;
  v = mx;
  s = mx <= 0 ? 0 : d / mx;
  if (d <= 0) {
    h = 0;
  } else if (mx == r) {
    h = std::fmod((g - b) / d, 6.0) / 6.0;
  } else if (mx == g) {
    h = ((b - r) / d + 2.0) / 6.0;
  } else {
    h = ((r - g) / d + 4.0) / 6.0;
  }
  if (h < 0) h += 1.0;
}

void hsv_to_rgb(Scalar h, Scalar s, Scalar v, Scalar& r, Scalar& g, Scalar& b) {
  const Scalar hh = h * 6.0;
  const int i = static_cast<int>(std::floor(hh)) % 6;
  const Scalar f = hh - std::floor(hh);
  const Scalar p = v * (1 - s);
  const Scalar q = v * (1 - s * f);
  const Scalar t = v * (1 - s * (1 - f));
  switch (i) {
    case 0: r = v; g = t; b = p; break;
    case 1: r = q; g = v; b = p; break;
    case 2: r = p; g = v; b = t; break;
    case 3: r = p; g = q; b = v; break;
    case 4: r = t; g = p; b = v; break;
    default: r = v; g = p; b = q; break;
  }
}

Vector luma(const Matrix& img) {
  if (img.rows() == 3) {
    return (0.299 * img.row(0) + 0.587 * img.row(1) + 0.114 * img.row(2)).transpose();
  }
  return img.colwise().mean().transpose();
}

}  // namespace

Matrix augment_image(const Matrix& img, int height, int width, const AugmentPolicy& policy,
                     std::uint64_t seed) {
  require(img.cols() == static_cast<Eigen::Index>(height) * width,
          "augment_image: image shape mismatch");
  if (policy.is_identity()) return img;

  Rng rng(seed);
  Matrix out = img;

  // Crop parameters are always drawn so the stream layout is fixed.
  const Scalar scale = rng.uniform(policy.crop_min_scale, policy.crop_max_scale);
  const Scalar side = std::sqrt(scale) * std::min(height, width);
  const Scalar y0 = rng.uniform(0.0, height - side);
  const Scalar x0 = rng.uniform(0.0, width - side);
  if (scale < 1.0) out = crop_resize(out, height, width, y0, x0, side);

  if (rng.bernoulli(policy.flip_prob)) {
    Matrix flipped = out;
    for (int y = 0; y < height; ++y) {
      for (int x = 0; x < width; ++x) {
        flipped.col(y * width + x) = out.col(y * width + (width - 1 - x));
      }
    }
    out = std::move(flipped);
  }

  const bool jitter = rng.bernoulli(policy.color_jitter_prob);
  const Scalar fb = rng.uniform(std::max(0.0, 1 - policy.brightness), 1 + policy.brightness);
  const Scalar fc = rng.uniform(std::max(0.0, 1 - policy.contrast), 1 + policy.contrast);
  const Scalar fs = rng.uniform(std::max(0.0, 1 - policy.saturation), 1 + policy.saturation);
  const Scalar fh = rng.uniform(-policy.hue, policy.hue);
  if (jitter) {
    out *= fb;
    const Scalar mean_gray = luma(out).mean();
    out = (out.array() - mean_gray) * fc + mean_gray;
    if (img.rows() == 3) {
      const Vector gray = luma(out);
      for (Eigen::Index p = 0; p < out.cols(); ++p) {
        for (int c = 0; c < 3; ++c) {
          out(c, p) = gray(p) + (out(c, p) - gray(p)) * fs;
        }
      }
      if (policy.hue > 0) {
        for (Eigen::Index p = 0; p < out.cols(); ++p) {
          Scalar h, s, v;
          rgb_to_hsv(std::clamp(out(0, p), 0.0, 1.0), std::clamp(out(1, p), 0.0, 1.0),
                     std::clamp(out(2, p), 0.0, 1.0), h, s, v);
          h = std::fmod(h + fh + 1.0, 1.0);
          hsv_to_rgb(h, s, v, out(0, p), out(1, p), out(2, p));
        }
      }
    }
  }

  if (img.rows() == 3 && rng.bernoulli(policy.grayscale_prob)) {
    const Vector gray = luma(out);
    for (int c = 0; c < 3; ++c) out.row(c) = gray.transpose();
  }

  out = out.cwiseMax(0.0).cwiseMin(1.0);
  return out;
}

AugmentedPair two_view_augment(const Matrix& img, int height, int width,
                               const AugmentPolicy& policy, std::uint64_t seed,
                               int source_index) {
  AugmentedPair pair;
  pair.source_index = source_index;
  pair.seed = seed;
  pair.view_a = augment_image(img, height, width, policy, derive_seed(seed, "view", 0));
  pair.view_b = augment_image(img, height, width, policy, derive_seed(seed, "view", 1));
  return pair;
}

}  // namespace tagfex::data
