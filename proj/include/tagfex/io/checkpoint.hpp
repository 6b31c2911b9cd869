// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <string>

#include <json.hpp>

#include "tagfex/core/types.hpp"

namespace tagfex::io {

/// Versioned binary archive: JSON metadata plus named double arrays stored
/// as raw bytes, so parameters round-trip bit-exactly. Writes are atomic
/// (temp file + rename).
struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  nlohmann::ordered_json meta;
  std::map<std::string, Matrix> arrays;

  void put(const std::string& name, const Matrix& m);
  void put(const std::string& name, const Vector& v);
  const Matrix& get(const std::string& name) const;
  Vector get_vector(const std::string& name) const;
  bool has(const std::string& name) const { return arrays.count(name) > 0; }

  void save(const std::string& path) const;
  static Checkpoint load(const std::string& path);
};

/// Write-temp-then-rename text emission used for every run artifact.
void atomic_write_text(const std::string& path, const std::string& content);

}  // namespace tagfex::io
