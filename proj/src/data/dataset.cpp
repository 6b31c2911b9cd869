// SPDX-License-Identifier: Apache-2.0
#include "tagfex/data/dataset.hpp"

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>

#include <json.hpp>

#include "tagfex/core/rng.hpp"

namespace tagfex::data {

namespace fs = std::filesystem;
using nlohmann::json;

Matrix TaskDataset::image(int index) const {
  require(index >= 0 && index < size(), "TaskDataset::image: index out of range");
  const int hw = height * width;
  Matrix img(channels, hw);
  for (int c = 0; c < channels; ++c) {
    img.row(c) = images.col(index).segment(static_cast<Eigen::Index>(c) * hw, hw).transpose();
  }
  return img;
}

void TaskDataset::set_image(int index, const Matrix& img) {
  const int hw = height * width;
  for (int c = 0; c < channels; ++c) {
    images.col(index).segment(static_cast<Eigen::Index>(c) * hw, hw) = img.row(c).transpose();
  }
}

FeatureMap TaskDataset::gather(const std::vector<int>& indices) const {
  const int hw = height * width;
  FeatureMap map(channels, static_cast<int>(indices.size()), height, width);
  for (size_t b = 0; b < indices.size(); ++b) {
    const int i = indices[b];
    require(i >= 0 && i < size(), "TaskDataset::gather: index out of range");
    for (int c = 0; c < channels; ++c) {
      map.v.row(c).segment(static_cast<Eigen::Index>(b) * hw, hw) =
          images.col(i).segment(static_cast<Eigen::Index>(c) * hw, hw).transpose();
    }
  }
  return map;
}

FeatureMap single_image_map(const Matrix& img, int channels, int height, int width) {
  require(img.rows() == channels && img.cols() == height * width,
          "single_image_map: shape mismatch");
  FeatureMap map(channels, 1, height, width);
  map.v = img;
  return map;
}

void validate_split_spec(const SplitSpec& spec) {
  require(spec.total_classes > 0 && spec.base_size > 0, "SplitSpec: sizes must be positive");
  const int rest = spec.total_classes - spec.base_size;
  require(rest >= 0, "SplitSpec: base task larger than the class set");
  if (rest > 0) {
    require(spec.increment_size > 0, "SplitSpec: increments required but increment_size is 0");
    require(rest % spec.increment_size == 0,
            "SplitSpec: base_size + k*increment_size must cover all classes");
  }
}

SplitResult make_splits(const SplitSpec& spec, const FlatDataset& flat) {
  validate_split_spec(spec);
  SplitResult out;
  out.class_order.resize(static_cast<size_t>(spec.total_classes));
  for (int i = 0; i < spec.total_classes; ++i) out.class_order[static_cast<size_t>(i)] = i;
  Rng rng(derive_seed(spec.class_order_seed, "class_order"));
  rng.shuffle(out.class_order);

  std::vector<int> task_of_class(static_cast<size_t>(spec.total_classes), -1);
  const int increments =
      spec.increment_size > 0 ? (spec.total_classes - spec.base_size) / spec.increment_size : 0;
  const int n_tasks = 1 + increments;
  for (int pos = 0; pos < spec.total_classes; ++pos) {
    const int task = pos < spec.base_size ? 0 : 1 + (pos - spec.base_size) / spec.increment_size;
    task_of_class[static_cast<size_t>(out.class_order[static_cast<size_t>(pos)])] = task;
  }

  const int dims = flat.channels * flat.height * flat.width;
  std::vector<std::vector<int>> members(static_cast<size_t>(n_tasks));
  for (int i = 0; i < static_cast<int>(flat.labels.size()); ++i) {
    const int label = flat.labels[static_cast<size_t>(i)];
    require(label >= 0 && label < spec.total_classes, "make_splits: label outside class range");
    members[static_cast<size_t>(task_of_class[static_cast<size_t>(label)])].push_back(i);
  }

  for (int t = 0; t < n_tasks; ++t) {
    TaskDataset task;
    task.task_index = t;
    task.channels = flat.channels;
    task.height = flat.height;
    task.width = flat.width;
    task.images.resize(dims, static_cast<Eigen::Index>(members[static_cast<size_t>(t)].size()));
    std::set<int> classes;
    for (size_t j = 0; j < members[static_cast<size_t>(t)].size(); ++j) {
      const int i = members[static_cast<size_t>(t)][j];
      task.images.col(static_cast<Eigen::Index>(j)) = flat.images.col(i);
      task.labels.push_back(flat.labels[static_cast<size_t>(i)]);
      classes.insert(flat.labels[static_cast<size_t>(i)]);
    }
    task.class_set.assign(classes.begin(), classes.end());
    out.tasks.push_back(std::move(task));
  }
  return out;
}

namespace {

void append_packed_file(FlatDataset& split, const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  require(in.good(), "dataset: cannot open " + file.string());
  const int dims = split.channels * split.height * split.width;
  const std::streamsize record = 1 + dims;
  in.seekg(0, std::ios::end);
  const std::streamsize bytes = in.tellg();
  in.seekg(0, std::ios::beg);
  require(bytes % record == 0, "dataset: file size not a record multiple: " + file.string());
  const Eigen::Index count = bytes / record;

  const Eigen::Index old = split.images.cols();
  split.images.conservativeResize(dims, old + count);
  std::vector<unsigned char> buf(static_cast<size_t>(record));
  for (Eigen::Index i = 0; i < count; ++i) {
    in.read(reinterpret_cast<char*>(buf.data()), record);
    require(in.good(), "dataset: truncated record in " + file.string());
    split.labels.push_back(buf[0]);
    for (int d = 0; d < dims; ++d) {
      split.images(d, old + i) = static_cast<Scalar>(buf[static_cast<size_t>(d) + 1]) / 255.0;
    }
  }
}

FlatDataset load_split(const json& meta, const json& split_meta, const fs::path& dir) {
  FlatDataset split;
  split.channels = meta.at("channels").get<int>();
  split.height = meta.at("image_size").get<int>();
  split.width = split.height;
  split.images.resize(split.channels * split.height * split.width, 0);
  for (const auto& f : split_meta.at("files")) {
    append_packed_file(split, dir / f.get<std::string>());
  }
  return split;
}

void write_packed_file(const FlatDataset& split, const fs::path& file) {
  std::ofstream out(file, std::ios::binary);
  require(out.good(), "dataset: cannot write " + file.string());
  const int dims = split.channels * split.height * split.width;
  for (Eigen::Index i = 0; i < split.images.cols(); ++i) {
    const unsigned char label = static_cast<unsigned char>(split.labels[static_cast<size_t>(i)]);
    out.put(static_cast<char>(label));
    for (int d = 0; d < dims; ++d) {
      const Scalar v = std::clamp(split.images(d, i), 0.0, 1.0);
      out.put(static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0))));
    }
  }
}

}  // namespace

DatasetDir load_dataset_dir(const std::string& path) {
  const fs::path dir(path);
  std::ifstream meta_in(dir / "meta.json");
  require(meta_in.good(), "dataset: missing meta.json in " + path);
  json meta = json::parse(meta_in);

  DatasetDir out;
  out.name = meta.at("name").get<std::string>();
  for (const auto& n : meta.at("class_names")) out.class_names.push_back(n.get<std::string>());
  out.train = load_split(meta, meta.at("splits").at("train"), dir);
  out.test = load_split(meta, meta.at("splits").at("test"), dir);
  return out;
}

void save_dataset_dir(const std::string& path, const std::string& name,
                      const std::vector<std::string>& class_names, const FlatDataset& train,
                      const FlatDataset& test) {
  const fs::path dir(path);
  fs::create_directories(dir);
  json meta;
  meta["name"] = name;
  meta["image_size"] = train.height;
  meta["channels"] = train.channels;
  meta["class_names"] = class_names;
  meta["splits"] = {{"train", {{"files", {"train.bin"}}, {"count", train.labels.size()}}},
                    {"test", {{"files", {"test.bin"}}, {"count", test.labels.size()}}}};
  std::ofstream meta_out(dir / "meta.json");
  meta_out << meta.dump(2) << "\n";
  write_packed_file(train, dir / "train.bin");
  write_packed_file(test, dir / "test.bin");
}

FlatDataset flatten_tasks(const std::vector<TaskDataset>& tasks) {
  require(!tasks.empty(), "flatten_tasks: empty task list");
  FlatDataset out;
  out.channels = tasks.front().channels;
  out.height = tasks.front().height;
  out.width = tasks.front().width;
  Eigen::Index total = 0;
  for (const auto& t : tasks) total += t.images.cols();
  out.images.resize(tasks.front().images.rows(), total);
  Eigen::Index at = 0;
  for (const auto& t : tasks) {
    out.images.middleCols(at, t.images.cols()) = t.images;
    out.labels.insert(out.labels.end(), t.labels.begin(), t.labels.end());
    at += t.images.cols();
  }
  return out;
}

}  // namespace tagfex::data
