// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numbers>
#include <vector>

namespace idsan {

// Counter-based splitmix64 streams. Every randomized step in the toolkit
// draws from a stream keyed by (seed, purpose tag, indices...), so results
// do not depend on iteration order and are reproducible bit-for-bit across
// platforms. Standard-library distributions are avoided on purpose: their
// output is implementation-defined.
inline std::uint64_t splitmix64_next(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ull);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

inline std::uint64_t mix_keys(std::initializer_list<std::uint64_t> keys) {
  std::uint64_t state = 0x6a09e667f3bcc909ull;
  for (std::uint64_t k : keys) {
    state ^= k + 0x9e3779b97f4a7c15ull + (state << 6) + (state >> 2);
    splitmix64_next(state);
  }
  return state;
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}
  Rng(std::initializer_list<std::uint64_t> keys) : state_(mix_keys(keys)) {}

  std::uint64_t next() { return splitmix64_next(state_); }

  // Uniform in [0, 1).
  double unit() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  // Unbiased integer in [0, n).
  std::uint64_t below(std::uint64_t n) {
    if (n <= 1) return 0;
    const std::uint64_t reject = (~n + 1) % n;  // 2^64 mod n
    std::uint64_t r;
    do {
      r = next();
    } while (r < reject);
    return r % n;
  }

  // Standard normal via Box-Muller, one spare cached.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 =
        (static_cast<double>(next() >> 11) + 1.0) * 0x1.0p-53;  // (0, 1]
    const double u2 = unit();
    const double mag = std::sqrt(-2.0 * std::log(u1));
    const double ang = 2.0 * std::numbers::pi * u2;
    spare_ = mag * std::sin(ang);
    has_spare_ = true;
    return mag * std::cos(ang);
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::uint64_t state_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// Purpose tags for stream derivation. Keeping them in one place avoids
// accidental stream collisions between unrelated pipeline steps.
namespace rngtag {
inline constexpr std::uint64_t kSupportQuery = 0x5153;    // "SQ"
inline constexpr std::uint64_t kPairSampling = 0x5052;    // "PR"
inline constexpr std::uint64_t kSynthBasis = 0x4253;      // "BS"
inline constexpr std::uint64_t kSynthMean = 0x4d4e;       // "MN"
inline constexpr std::uint64_t kSynthNoise = 0x4e53;      // "NS"
inline constexpr std::uint64_t kSynthTask = 0x544b;       // "TK"
inline constexpr std::uint64_t kMlpInit = 0x4d49;         // "MI"
inline constexpr std::uint64_t kMlpBatch = 0x4d42;        // "MB"
inline constexpr std::uint64_t kBootstrap = 0x4254;       // "BT"
inline constexpr std::uint64_t kEvalResample = 0x4556;    // "EV"
}  // namespace rngtag

}  // namespace idsan
