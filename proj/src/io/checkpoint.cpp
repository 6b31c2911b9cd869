// SPDX-License-Identifier: Apache-2.0
#include "tagfex/io/checkpoint.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>

namespace tagfex::io {

namespace fs = std::filesystem;

namespace {

constexpr char kMagic[8] = {'T', 'F', 'X', 'C', 'K', 'P', 'T', '1'};

template <typename T>
void write_pod(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  require(static_cast<bool>(in), "checkpoint: unexpected end of file");
  return v;
}

}  // namespace

void Checkpoint::put(const std::string& name, const Matrix& m) {
  require(arrays.emplace(name, m).second, "checkpoint: duplicate array " + name);
}

void Checkpoint::put(const std::string& name, const Vector& v) {
  put(name, Matrix(v));
}

const Matrix& Checkpoint::get(const std::string& name) const {
  const auto it = arrays.find(name);
  require(it != arrays.end(), "checkpoint: missing array " + name);
  return it->second;
}

Vector Checkpoint::get_vector(const std::string& name) const {
  const Matrix& m = get(name);
  require(m.cols() == 1, "checkpoint: array is not a vector: " + name);
  return m.col(0);
}

void Checkpoint::save(const std::string& path) const {
  const fs::path tmp = fs::path(path).concat(".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    require(out.good(), "checkpoint: cannot open " + tmp.string());
    out.write(kMagic, sizeof(kMagic));
    write_pod(out, kVersion);

    nlohmann::ordered_json header = meta;
    header["format_version"] = kVersion;
    const std::string meta_str = header.dump();
    write_pod(out, static_cast<std::uint64_t>(meta_str.size()));
    out.write(meta_str.data(), static_cast<std::streamsize>(meta_str.size()));

    write_pod(out, static_cast<std::uint64_t>(arrays.size()));
    for (const auto& [name, m] : arrays) {
      write_pod(out, static_cast<std::uint32_t>(name.size()));
      out.write(name.data(), static_cast<std::streamsize>(name.size()));
      write_pod(out, static_cast<std::uint64_t>(m.rows()));
      write_pod(out, static_cast<std::uint64_t>(m.cols()));
      out.write(reinterpret_cast<const char*>(m.data()),
                static_cast<std::streamsize>(sizeof(Scalar) * m.size()));
    }
    require(out.good(), "checkpoint: write failure on " + tmp.string());
  }
  fs::rename(tmp, path);
}

Checkpoint Checkpoint::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), "checkpoint: cannot open " + path);
  char magic[8];
  in.read(magic, sizeof(magic));
  require(static_cast<bool>(in) && std::memcmp(magic, kMagic, sizeof(kMagic)) == 0,
          "checkpoint: bad magic in " + path);
  const auto version = read_pod<std::uint32_t>(in);
  require(version == kVersion, "checkpoint: unsupported version in " + path);

  Checkpoint ckpt;
  const auto meta_len = read_pod<std::uint64_t>(in);
  std::string meta_str(meta_len, '\0');
  in.read(meta_str.data(), static_cast<std::streamsize>(meta_len));
  require(static_cast<bool>(in), "checkpoint: truncated metadata in " + path);
  try {
    ckpt.meta = nlohmann::ordered_json::parse(meta_str);
  } catch (const nlohmann::json::exception&) {
    require(false, "checkpoint: corrupt metadata in " + path);
  }

  const auto count = read_pod<std::uint64_t>(in);
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto name_len = read_pod<std::uint32_t>(in);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    const auto rows = read_pod<std::uint64_t>(in);
    const auto cols = read_pod<std::uint64_t>(in);
    Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    in.read(reinterpret_cast<char*>(m.data()),
            static_cast<std::streamsize>(sizeof(Scalar) * rows * cols));
    require(static_cast<bool>(in), "checkpoint: truncated array " + name + " in " + path);
    ckpt.arrays.emplace(std::move(name), std::move(m));
  }
  return ckpt;
}

void atomic_write_text(const std::string& path, const std::string& content) {
  const fs::path tmp = fs::path(path).concat(".tmp");
  {
    std::ofstream out(tmp, std::ios::trunc);
    require(out.good(), "atomic_write_text: cannot open " + tmp.string());
    out << content;
    require(out.good(), "atomic_write_text: write failure on " + tmp.string());
  }
  fs::rename(tmp, path);
}

}  // namespace tagfex::io
