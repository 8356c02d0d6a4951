#pragma once

#include <cmath>
#include <cstdint>

namespace dilnet {

// SplitMix64 (Steele/Lea/Vigna): a 64-bit counter-based generator with a
// fixed, platform-independent output sequence. Every randomized routine in
// the library draws from one of these so that a seed pins the result bit
// for bit.
class SplitMix64 {
 public:
  explicit SplitMix64(uint64_t seed) : state_(seed) {}

  uint64_t next_u64() {
    uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1), 53-bit resolution.
  double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform in [low, high).
  double uniform(double low, double high) {
    double v = low + (high - low) * next_double();
    if (v >= high) v = std::nextafter(high, low);
    return v;
  }

  // Uniform integer in [0, bound). Modulo bias is below 1e-15 for the
  // bounds used here (dataset and crop indices).
  uint64_t next_below(uint64_t bound) { return bound ? next_u64() % bound : 0; }

  // Standard normal via Box-Muller. Two fresh uniforms per call, no cached
  // spare, so the draw count per sample is fixed.
  double gauss() {
    double u1 = next_double();
    double u2 = next_double();
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
  }

 private:
  uint64_t state_;
};

// Derives an independent stream for item `index` of a seeded collection.
inline uint64_t mix_seed(uint64_t seed, uint64_t index) {
  SplitMix64 g(seed ^ (0x9e3779b97f4a7c15ull + index * 0xbf58476d1ce4e5b9ull));
  return g.next_u64();
}

}  // namespace dilnet
