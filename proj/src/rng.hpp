#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace neuroflux {

// Thin wrapper around mt19937 with hand-rolled distributions. The standard
// distributions are implementation-defined, which would tie run artifacts to
// a particular libstdc++; these are not.
class rng {
public:
  explicit rng(uint64_t seed) : gen_(static_cast<std::mt19937::result_type>(seed)) {}

  // Uniform in [0, 1) with 24 bits of mantissa.
  float uniform() {
    return static_cast<float>(gen_() >> 8) * (1.0f / 16777216.0f);
  }

  float uniform(float lo, float hi) { return lo + (hi - lo) * uniform(); }

  // Box-Muller; caches the second variate.
  float gaussian() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    float u1 = 0.0f;
    while (u1 <= 1e-12f) u1 = uniform();
    float u2 = uniform();
    float r = std::sqrt(-2.0f * std::log(u1));
    float a = 6.28318530717958647692f * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  // Uniform integer in [0, n). Modulo bias is irrelevant at the scales used
  // here (n far below 2^32) and keeps the sequence platform-stable.
  uint32_t next_index(uint32_t n) { return n ? gen_() % n : 0; }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = next_index(static_cast<uint32_t>(i));
      std::swap(v[i - 1], v[j]);
    }
  }

private:
  std::mt19937 gen_;
  float spare_ = 0.0f;
  bool has_spare_ = false;
};

// Stable mix for deriving per-epoch or per-layer streams from one seed.
inline uint64_t mix_seed(uint64_t seed, uint64_t salt) {
  uint64_t x = seed + 0x9e3779b97f4a7c15ull * (salt + 1);
  x ^= x >> 30;
  x *= 0xbf58476d1ce4e5b9ull;
  x ^= x >> 27;
  x *= 0x94d049bb133111ebull;
  x ^= x >> 31;
  return x;
}

}  // namespace neuroflux
