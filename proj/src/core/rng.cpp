// SPDX-License-Identifier: Apache-2.0
#include "tagfex/core/rng.hpp"

#include <cmath>
#include <sstream>

namespace tagfex {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t base, std::string_view tag, std::uint64_t a,
                          std::uint64_t b, std::uint64_t c) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char ch : tag) {
    h ^= static_cast<unsigned char>(ch);
    h *= 0x100000001b3ULL;
  }
  std::uint64_t s = splitmix64(base ^ h);
  s = splitmix64(s ^ splitmix64(a));
  s = splitmix64(s ^ splitmix64(b + 0x517cc1b727220a95ULL));
  s = splitmix64(s ^ splitmix64(c + 0x2545f4914f6cdd1dULL));
  return s;
}

Scalar Rng::normal() {
  // Box-Muller without spare caching: serialization stays a pure engine state.
  Scalar u1 = 0;
  do {
    u1 = uniform();
  } while (u1 <= 0);
  const Scalar u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

int Rng::uniform_int(int n) {
  require(n >= 1, "Rng::uniform_int: n must be >= 1");
  const std::uint64_t un = static_cast<std::uint64_t>(n);
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() / un * un;
  std::uint64_t v = 0;
  do {
    v = engine_();
  } while (v >= limit);
  return static_cast<int>(v % un);
}

std::string Rng::serialize() const {
  std::ostringstream oss;
  oss << engine_;
  return oss.str();
}

void Rng::deserialize(const std::string& state) {
  std::istringstream iss(state);
  iss >> engine_;
  require(static_cast<bool>(iss), "Rng::deserialize: malformed engine state");
}

}  // namespace tagfex
