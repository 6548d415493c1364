#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

#include "dhbe/tensor.hpp"

namespace dhbe {

// Deterministic, platform-independent random stream (xoshiro256** seeded via
// splitmix64). We avoid std::normal_distribution on purpose: its output is
// implementation-defined, and checkpoint-exact reproducibility is part of the
// run contract.
class RngStream {
 public:
  explicit RngStream(uint64_t seed) {
    uint64_t x = seed;
    for (int i = 0; i < 4; ++i) s_[i] = splitmix64(x);
    has_spare_ = false;
  }

  uint64_t next_u64() {
    const uint64_t result = rotl(s_[1] * 5, 7) * 9;
    const uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform integer in [0, n).
  int uniform_int(int n) {
    if (n <= 0) throw ContractError("uniform_int needs n > 0");
    // Rejection sampling keeps the distribution exact.
    const uint64_t bound = UINT64_MAX - UINT64_MAX % static_cast<uint64_t>(n);
    uint64_t v = next_u64();
    while (v >= bound) v = next_u64();
    return static_cast<int>(v % static_cast<uint64_t>(n));
  }

  // Standard normal via Box-Muller (cached spare).
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  void fill_normal(Tensor& t) {
    for (int64_t i = 0; i < t.size(); ++i) t[i] = static_cast<float>(normal());
  }

  void fill_uniform(Tensor& t, float lo, float hi) {
    for (int64_t i = 0; i < t.size(); ++i)
      t[i] = lo + (hi - lo) * static_cast<float>(uniform());
  }

 private:
  static uint64_t splitmix64(uint64_t& x) {
    uint64_t z = (x += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }
  static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

  uint64_t s_[4];
  double spare_ = 0.0;
  bool has_spare_;
};

// One master seed fans out to named sub-streams so ablating one source of
// randomness (e.g. padding positions) holds every other draw fixed.
inline uint64_t stream_key(uint64_t master_seed, std::string_view name) {
  uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
  for (char c : name) {
    h ^= static_cast<uint8_t>(c);
    h *= 0x100000001b3ULL;
  }
  return h ^ (master_seed * 0x9e3779b97f4a7c15ULL + 0x165667b19e3779f9ULL);
}

inline RngStream derive_stream(uint64_t master_seed, std::string_view name) {
  return RngStream(stream_key(master_seed, name));
}

}  // namespace dhbe
