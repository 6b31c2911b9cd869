// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tagfex/core/types.hpp"

namespace tagfex::data {

/// Class-incremental split layout: a base task of `base_size` classes
/// followed by equally sized increments ("b-c" notation).
struct SplitSpec {
  int total_classes = 100;
  int base_size = 10;
  int increment_size = 10;
  std::uint64_t class_order_seed = 0;
};

/// One task's labeled images. Images are stored one per column, flattened
/// channel-plane first (index c*H*W + y*W + x), which is also the packed
/// binary layout on disk.
struct TaskDataset {
  int task_index = 0;
  Matrix images;  // (channels*H*W) x count, values in [0,1]
  std::vector<int> labels;
  std::vector<int> class_set;  // ascending original class ids
  int channels = 3;
  int height = 32;
  int width = 32;

  int size() const { return static_cast<int>(labels.size()); }

  /// Single image as channels x (H*W).
  Matrix image(int index) const;
  void set_image(int index, const Matrix& img);

  /// Assembles the given sample indices into a batch feature map.
  FeatureMap gather(const std::vector<int>& indices) const;
};

/// Unsplit labeled pool, the loader's output.
struct FlatDataset {
  Matrix images;
  std::vector<int> labels;
  int channels = 3;
  int height = 32;
  int width = 32;
};

struct SplitResult {
  std::vector<TaskDataset> tasks;
  std::vector<int> class_order;  // seeded permutation of 0..total_classes-1
};

/// Splits a flat dataset into class-disjoint tasks after applying the seeded
/// class permutation. Rejects specs where base + k*increment != total.
SplitResult make_splits(const SplitSpec& spec, const FlatDataset& flat);

/// Validates the spec alone (used by config checking).
void validate_split_spec(const SplitSpec& spec);

/// Dataset directory: meta.json plus packed binary split files where each
/// record is one label byte followed by channels*H*W image bytes.
struct DatasetDir {
  std::string name;
  std::vector<std::string> class_names;
  FlatDataset train;
  FlatDataset test;
};

DatasetDir load_dataset_dir(const std::string& path);
void save_dataset_dir(const std::string& path, const std::string& name,
                      const std::vector<std::string>& class_names, const FlatDataset& train,
                      const FlatDataset& test);

/// Converts task lists back to one flat pool (used when serializing the
/// synthetic datasets into the shared directory layout).
FlatDataset flatten_tasks(const std::vector<TaskDataset>& tasks);

FeatureMap single_image_map(const Matrix& img, int channels, int height, int width);

}  // namespace tagfex::data
