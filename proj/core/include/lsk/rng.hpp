#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace lsk {

// SplitMix64 (Steele/Lea/Flood). One fixed stream per seed; every draw is a
// pure function of the seed and the draw index, so filled tensors are
// byte-identical across platforms and build modes.
class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ull);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1), 53 mantissa bits.
  double next_unit() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double next_uniform(double lo, double hi) { return lo + (hi - lo) * next_unit(); }

  // Box-Muller; draws two uniforms per pair and caches the spare unit normal.
  double next_normal(double mean, double std) {
    if (has_spare_) {
      has_spare_ = false;
      return mean + std * spare_;
    }
    // u1 in (0, 1] so the log stays finite.
    const double u1 = (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;
    const double u2 = next_unit();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return mean + std * r * std::cos(a);
  }

  // Standard normal resampled until |z| <= 2, then scaled.
  double next_trunc_normal(double mean, double std) {
    double z = next_normal(0.0, 1.0);
    while (std::abs(z) > 2.0) z = next_normal(0.0, 1.0);
    return mean + std * z;
  }

 private:
  std::uint64_t state_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace lsk
