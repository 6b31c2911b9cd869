// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "tagfex/data/dataset.hpp"

namespace tagfex::data {

/// Synthetic two-task stream where color separates the first task's classes
/// perfectly but collides across tasks: task 2 reuses the colors with the
/// shapes swapped, so only shape resolves the union. Shape areas are sampled
/// from one shared range, keeping mean color uninformative about shape.
struct CollisionSpec {
  int image_size = 32;
  int classes_per_task = 2;
  std::vector<std::array<Scalar, 3>> color_palette{{0.85, 0.12, 0.12}, {0.12, 0.75, 0.18}};
  std::vector<std::string> shape_set{"square", "triangle"};  // square|triangle|circle
  Scalar position_jitter = 0.2;  // center offset range, fraction of image size
  Scalar area_min_fraction = 0.06;  // filled-pixel share of the image
  Scalar area_max_fraction = 0.14;
  Scalar color_jitter = 0.06;
  Scalar background = 0.1;
  Scalar background_noise = 0.02;
  int samples_per_class = 100;
  int test_samples_per_class = 50;
};

/// Class id layout: task 0 holds classes 0..k-1 with (color i, shape i);
/// task 1 holds classes k..2k-1 with (color i, shape i+1 mod k).
std::vector<TaskDataset> generate_collision_dataset(const CollisionSpec& spec,
                                                    std::uint64_t seed);

/// Same generator for the held-out split (independent jitter stream).
std::vector<TaskDataset> generate_collision_test_set(const CollisionSpec& spec,
                                                     std::uint64_t seed);

std::vector<std::string> collision_class_names(const CollisionSpec& spec);

}  // namespace tagfex::data
