#include "draftrevise/numeric/rng.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace draftrevise::numeric {

std::uint64_t mix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

Rng::Rng(std::uint64_t seed) : engine_(mix64(seed)) {}

Rng Rng::stream(std::uint64_t seed, std::uint64_t index) {
  return Rng(mix64(seed) ^ mix64(~index));
}

double Rng::uniform() {
  return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

std::size_t Rng::below(std::size_t n) {
  if (n == 0) throw std::invalid_argument("Rng::below: n must be positive");
  const std::uint64_t bound = n;
  const std::uint64_t threshold = (0 - bound) % bound;
  std::uint64_t r = engine_();
  while (r < threshold) r = engine_();
  return static_cast<std::size_t>(r % bound);
}

double Rng::normal() {
  const double u1 = 1.0 - uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::size_t Rng::categorical(std::span<const double> weights) {
  double total = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0) || !std::isfinite(w)) {
      throw std::invalid_argument("Rng::categorical: weights must be finite and non-negative");
    }
    total += w;
  }
  if (!(total > 0.0)) throw std::invalid_argument("Rng::categorical: zero total weight");
  const double u = uniform() * total;
  double cumulative = 0.0;
  std::size_t last_positive = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (weights[i] <= 0.0) continue;
    cumulative += weights[i];
    last_positive = i;
    if (u < cumulative) return i;
  }
  return last_positive;
}

}  // namespace draftrevise::numeric
