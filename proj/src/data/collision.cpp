// SPDX-License-Identifier: Apache-2.0
#include "tagfex/data/collision.hpp"

#include <cmath>

#include "tagfex/core/rng.hpp"

namespace tagfex::data {

namespace {

struct ShapeParams {
  std::string kind;
  Scalar cx, cy;    // center in pixels
  Scalar extent;    // shape-specific size derived from the target area
};

bool inside(const ShapeParams& s, Scalar x, Scalar y) {
  const Scalar dx = x - s.cx;
  const Scalar dy = y - s.cy;
  if (s.kind == "square") {
    return std::abs(dx) <= s.extent && std::abs(dy) <= s.extent;
  }
  if (s.kind == "circle") {
    return dx * dx + dy * dy <= s.extent * s.extent;
  }
  // Isoceles triangle with base = height = 2*extent, tip pointing up.
  const Scalar half_h = s.extent;
  if (dy < -half_h || dy > half_h) return false;
  const Scalar frac = (dy + half_h) / (2 * half_h);  // 0 at tip, 1 at base
  return std::abs(dx) <= frac * s.extent;
}

Scalar extent_for_area(const std::string& kind, Scalar area) {
  if (kind == "square") return std::sqrt(area) / 2;             // side = 2e
  if (kind == "circle") return std::sqrt(area / M_PI);          // radius
  return std::sqrt(area / 2);                                   // triangle: area = 2e^2
}

void render(TaskDataset& task, int column, const CollisionSpec& spec,
            const std::array<Scalar, 3>& color, const std::string& shape, Rng& rng) {
  const int n = spec.image_size;
  const Scalar area =
      rng.uniform(spec.area_min_fraction, spec.area_max_fraction) * n * n;
  ShapeParams s;
  s.kind = shape;
  s.extent = extent_for_area(shape, area);
  const Scalar margin = s.extent + 1;
  const Scalar jit = spec.position_jitter * n;
  s.cx = std::clamp(n / 2.0 + rng.uniform(-jit, jit), margin, n - margin);
  s.cy = std::clamp(n / 2.0 + rng.uniform(-jit, jit), margin, n - margin);

  std::array<Scalar, 3> c = color;
  for (auto& v : c) v = std::clamp(v + rng.uniform(-spec.color_jitter, spec.color_jitter), 0.0, 1.0);

  std::vector<bool> mask(static_cast<size_t>(n) * n, false);
  int filled = 0;
  for (int y = 0; y < n; ++y) {
    for (int x = 0; x < n; ++x) {
      if (inside(s, x + 0.5, y + 0.5)) {
        mask[static_cast<size_t>(y * n + x)] = true;
        ++filled;
      }
    }
  }
  // The shape is drawn additively over the background with its fill scaled
  // so the total added color mass is one fixed reference per sample. Mean
  // color then identifies the palette entry but carries nothing about the
  // shape: only the spatial layout separates same-colored classes.
  const Scalar reference = 0.75 * spec.area_min_fraction * n * n;
  const Scalar scale = std::min(1.0, reference / std::max(1, filled));

  for (int y = 0; y < n; ++y) {
    for (int x = 0; x < n; ++x) {
      const bool in = mask[static_cast<size_t>(y * n + x)];
      for (int ch = 0; ch < 3; ++ch) {
        Scalar v = spec.background +
                   rng.uniform(-spec.background_noise, spec.background_noise);
        if (in) v += c[static_cast<size_t>(ch)] * scale;
        task.images(ch * n * n + y * n + x, column) = std::clamp(v, 0.0, 1.0);
      }
    }
  }
}

std::vector<TaskDataset> generate(const CollisionSpec& spec, std::uint64_t seed,
                                  int samples_per_class, std::string_view split_tag) {
  const int k = spec.classes_per_task;
  require(k >= 2, "CollisionSpec: need at least two classes per task");
  require(static_cast<int>(spec.color_palette.size()) >= k,
          "CollisionSpec: palette smaller than classes_per_task");
  require(static_cast<int>(spec.shape_set.size()) >= k,
          "CollisionSpec: shape set smaller than classes_per_task");
  require(samples_per_class > 0, "CollisionSpec: samples_per_class must be positive");

  const int n = spec.image_size;
  std::vector<TaskDataset> tasks;
  for (int t = 0; t < 2; ++t) {
    TaskDataset task;
    task.task_index = t;
    task.channels = 3;
    task.height = n;
    task.width = n;
    task.images.resize(3 * n * n, static_cast<Eigen::Index>(k) * samples_per_class);
    int column = 0;
    for (int i = 0; i < k; ++i) {
      const int class_id = t * k + i;
      const int shape_index = t == 0 ? i : (i + 1) % k;
      for (int sample = 0; sample < samples_per_class; ++sample) {
        Rng rng(derive_seed(seed, split_tag, static_cast<std::uint64_t>(class_id),
                            static_cast<std::uint64_t>(sample)));
        render(task, column, spec, spec.color_palette[static_cast<size_t>(i)],
               spec.shape_set[static_cast<size_t>(shape_index)], rng);
        task.labels.push_back(class_id);
        ++column;
      }
      task.class_set.push_back(class_id);
    }
    tasks.push_back(std::move(task));
  }
  return tasks;
}

}  // namespace

std::vector<TaskDataset> generate_collision_dataset(const CollisionSpec& spec,
                                                    std::uint64_t seed) {
  return generate(spec, seed, spec.samples_per_class, "collision/train");
}

std::vector<TaskDataset> generate_collision_test_set(const CollisionSpec& spec,
                                                     std::uint64_t seed) {
  return generate(spec, seed, spec.test_samples_per_class, "collision/test");
}

std::vector<std::string> collision_class_names(const CollisionSpec& spec) {
  std::vector<std::string> names;
  const int k = spec.classes_per_task;
  for (int t = 0; t < 2; ++t) {
    for (int i = 0; i < k; ++i) {
      const int shape_index = t == 0 ? i : (i + 1) % k;
      names.push_back("color" + std::to_string(i) + "_" +
                      spec.shape_set[static_cast<size_t>(shape_index)]);
    }
  }
  return names;
}

}  // namespace tagfex::data
