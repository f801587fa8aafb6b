#pragma once

#include <cmath>
#include <cstdint>

#include "atlas/common.hpp"

namespace atlas {

inline uint64_t splitmix64(uint64_t& state) {
  uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Deterministic PRNG (xoshiro256++) with an explicit Box-Muller normal
/// sampler, so streams are identical across standard libraries and runs.
class Rng {
 public:
  explicit Rng(uint64_t seed) {
    uint64_t sm = seed;
    for (auto& w : s_) w = splitmix64(sm);
    spare_valid_ = false;
  }

  /// Independent substream addressed by a tag; tags derive child seeds via
  /// splitmix chaining so (seed, tag) pairs never collide in practice.
  Rng child(uint64_t tag) const {
    uint64_t sm = s_[0] ^ (0x9e3779b97f4a7c15ULL * (tag + 1));
    sm ^= s_[2] + 0x165667b19e3779f9ULL;
    return Rng(splitmix64(sm));
  }

  uint64_t next_u64() {
    const uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
    const uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  /// Uniform in [0, 1); 53-bit resolution.
  double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

  /// Uniform integer in [0, n).
  uint64_t below(uint64_t n) {
    // Rejection-free modulo bias is negligible for n << 2^64; keep exact via
    // Lemire-style rejection.
    uint64_t x = next_u64();
    __uint128_t m = __uint128_t(x) * n;
    uint64_t l = uint64_t(m);
    if (l < n) {
      uint64_t t = (0 - n) % n;
      while (l < t) {
        x = next_u64();
        m = __uint128_t(x) * n;
        l = uint64_t(m);
      }
    }
    return uint64_t(m >> 64);
  }

  /// Standard normal via Box-Muller (cached spare).
  double normal() {
    if (spare_valid_) {
      spare_valid_ = false;
      return spare_;
    }
    double u1 = 0.0;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    spare_ = r * std::sin(kTwoPi * u2);
    spare_valid_ = true;
    return r * std::cos(kTwoPi * u2);
  }

  /// Random sign in {-1, +1}.
  double sign() { return (next_u64() >> 63) ? 1.0 : -1.0; }

 private:
  static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
  uint64_t s_[4];
  double spare_ = 0.0;
  bool spare_valid_;
};

}  // namespace atlas
