// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "tagfex/core/types.hpp"

namespace tagfex {

/// Mixes a base seed with a tag and up to three stream indices.
///
/// Every random draw in the project is seeded through this function, so any
/// module can be reconstructed independently of creation order. The mixing is
/// FNV-1a over the tag followed by splitmix64 finalization.
std::uint64_t derive_seed(std::uint64_t base, std::string_view tag, std::uint64_t a = 0,
                          std::uint64_t b = 0, std::uint64_t c = 0);

/// Deterministic random stream with explicitly defined draw semantics.
///
/// The standard distributions are implementation-defined, so uniform and
/// normal draws are built directly on top of mt19937_64 output to keep runs
/// reproducible across compilers.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  /// Uniform in [0, 1) with 53-bit resolution.
  Scalar uniform() { return static_cast<Scalar>(engine_() >> 11) * 0x1.0p-53; }

  Scalar uniform(Scalar lo, Scalar hi) { return lo + (hi - lo) * uniform(); }

  /// Standard normal via Box-Muller; draws two uniforms per call.
  Scalar normal();

  /// Uniform integer in [0, n), n >= 1. Rejection sampling, no modulo bias.
  int uniform_int(int n);

  bool bernoulli(Scalar p) { return uniform() < p; }

  template <typename T>
  void shuffle(std::vector<T>& values) {
    for (int i = static_cast<int>(values.size()) - 1; i > 0; --i) {
      std::swap(values[i], values[uniform_int(i + 1)]);
    }
  }

  std::string serialize() const;
  void deserialize(const std::string& state);

 private:
  std::mt19937_64 engine_;
};

}  // namespace tagfex
