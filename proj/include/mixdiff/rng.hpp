#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace mixdiff {

/// SplitMix64 generator. All randomness in the library flows through this
/// type rather than <random> distributions so that runs are reproducible
/// byte for byte across compilers and standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  /// Uniform double in [0, 1).
  double next_double() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  /// Uniform integer in [0, n). Uses rejection to avoid modulo bias.
  std::uint64_t bounded(std::uint64_t n) {
    if (n == 0) return 0;
    std::uint64_t threshold = (~n + 1) % n;  // 2^64 mod n
    for (;;) {
      std::uint64_t r = next_u64();
      if (r >= threshold) return r % n;
    }
  }

  /// Standard normal via Box-Muller. Consumes two uniforms per draw.
  double next_gaussian() {
    double u1 = 0.0;
    do {
      u1 = next_double();
    } while (u1 <= 0.0);
    double u2 = next_double();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  /// Derives an independent stream from (seed, stream, counter). Targets
  /// are keyed by their input index, which makes per-target draws
  /// independent of processing order.
  static Rng split(std::uint64_t seed, std::uint64_t stream, std::uint64_t counter) {
    Rng mixer(seed ^ (0x9e3779b97f4a7c15ULL * (stream + 1)) ^
              (0xbf58476d1ce4e5b9ULL * (counter + 1)));
    return Rng(mixer.next_u64());
  }

 private:
  std::uint64_t state_;
};

}  // namespace mixdiff
