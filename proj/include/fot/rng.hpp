#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace fot {

/// Seeded mt19937 with explicit float mappings. std::*_distribution is
/// implementation-defined, so the mappings live here to keep streams
/// reproducible across standard libraries.
class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(static_cast<uint32_t>(seed ^ (seed >> 32))) {}

  uint32_t next_u32() { return gen_(); }

  /// Uniform in [0,1) with 24-bit resolution.
  float uniform() { return static_cast<float>(gen_() >> 8) * (1.0f / 16777216.0f); }

  float uniform(float lo, float hi) { return lo + (hi - lo) * uniform(); }

  /// Standard normal via Box-Muller.
  float normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = (static_cast<double>(gen_()) + 1.0) / 4294967296.0;  // (0,1]
    double u2 = static_cast<double>(gen_()) / 4294967296.0;
    double r = std::sqrt(-2.0 * std::log(u1));
    double t = 2.0 * M_PI * u2;
    spare_ = static_cast<float>(r * std::sin(t));
    has_spare_ = true;
    return static_cast<float>(r * std::cos(t));
  }

  /// Uniform index in [0, n).
  int64_t index(int64_t n) {
    uint64_t x = (static_cast<uint64_t>(gen_()) << 32) | gen_();
    return static_cast<int64_t>(x % static_cast<uint64_t>(n));
  }

 private:
  std::mt19937 gen_;
  float spare_ = 0.0f;
  bool has_spare_ = false;
};

}  // namespace fot
