#pragma once

#include <cstdint>
#include <random>

namespace geotoken {

/// Seeded generator with a portable output sequence: mt19937_64 and
/// seed_seq are fully specified by the standard, and the conversions below
/// avoid the implementation-defined standard distributions.
class Rng {
 public:
  // Independent streams are derived from one user seed plus a stream label.
  Rng(std::uint64_t seed, std::uint32_t stream) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      stream};
    engine_.seed(seq);
  }

  std::uint64_t next() { return engine_(); }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  /// Uniform in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n), unbiased. n must be positive.
  std::uint64_t below(std::uint64_t n) {
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x;
    do {
      x = engine_();
    } while (x >= limit);
    return x % n;
  }

 private:
  std::mt19937_64 engine_;
};

// Stream labels shared by dataset generation and training.
enum RngStream : std::uint32_t {
  kDatasetStream = 1,
  kFabricatedTagStream = 2,
  kInitStream = 3,
  kShuffleStream = 4,
};

}  // namespace geotoken
