#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace rta {

// Deterministic RNG. std::mt19937_64 is fully specified by the standard;
// all value mappings are done by hand so streams are identical across
// platforms and standard-library implementations.
class Rng {
 public:
  explicit Rng(uint64_t seed) : eng_(seed) {}

  uint64_t next_u64() { return eng_(); }

  // Uniform in [0, 1).
  double uniform() {
    return static_cast<double>(eng_() >> 11) * 0x1.0p-53;
  }

  // Standard normal via Box-Muller (one value per call, two uniforms consumed).
  double gaussian() {
    double u1 = uniform();
    double u2 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  // Uniform integer in [0, n).
  uint64_t below(uint64_t n) {
    // Rejection sampling to avoid modulo bias.
    const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    uint64_t x = eng_();
    while (x >= limit) x = eng_();
    return x % n;
  }

  // splitmix64 mixing, used to derive independent substreams from
  // (run seed, task id, trajectory index) style tuples.
  static uint64_t mix(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
  }

  static uint64_t mix(uint64_t a, uint64_t b) { return mix(mix(a) ^ b); }
  static uint64_t mix(uint64_t a, uint64_t b, uint64_t c) {
    return mix(mix(a, b) ^ c);
  }

 private:
  std::mt19937_64 eng_;
};

}  // namespace rta
