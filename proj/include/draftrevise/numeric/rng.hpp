#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <utility>

namespace draftrevise::numeric {

/// Seeded random source. All draws are built from raw 64-bit engine output so
/// results do not depend on the standard library's distribution classes.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  /// Independent stream for (seed, index), e.g. one per sample or per step.
  static Rng stream(std::uint64_t seed, std::uint64_t index);

  std::uint64_t next() { return engine_(); }

  /// Uniform double in [0, 1) with 53 bits of resolution.
  double uniform();

  /// Uniform integer in [0, n). n must be positive.
  std::size_t below(std::size_t n);

  /// Standard normal via Box-Muller (no cached second value).
  double normal();

  /// Index drawn from an unnormalized non-negative weight vector.
  std::size_t categorical(std::span<const double> weights);

  template <typename T>
  void shuffle(std::span<T> items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::swap(items[i - 1], items[below(i)]);
    }
  }

 private:
  std::mt19937_64 engine_;
};

/// SplitMix64 finalizer; used to derive stream seeds.
std::uint64_t mix64(std::uint64_t x);

}  // namespace draftrevise::numeric
