#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "draftrevise/autoencoder/autoencoder.hpp"
#include "draftrevise/transformer/model.hpp"

namespace draftrevise::pipeline {

using autoencoder::CodeStackMap;
using autoencoder::Image;

struct Sprite {
  Image image;
  std::size_t label = 0;
};

inline constexpr std::size_t kSpriteClasses = 8;

/// size x size x 3 sprites in [0, 1]. Class = shape (square, disc, triangle,
/// cross) x colour (warm, cool), label = index mod 8; position, scale and
/// tint are jittered from `seed`.
std::vector<Sprite> make_sprites(std::size_t count, std::uint64_t seed, std::size_t size = 16);

struct LabeledCodes {
  CodeStackMap codes;
  std::size_t label = 0;
};

/// Exactly enumerable class-conditional distribution over 1 x N code maps.
/// Each class mixes three templates (weights 1/2, 1/4, 1/4) that share
/// stacks pairwise; every position keeps its template codes (in a uniformly
/// random depth order) with probability 1 - rho and is otherwise replaced by
/// a uniform stack, and the whole table is blended
/// with a small uniform floor so every state has positive mass.
struct SyntheticCodes {
  std::size_t positions = 0;  // N
  std::size_t depth = 0;      // D
  std::size_t codebook = 0;   // K
  /// table[c][s]: probability of joint state s under class c. The state index
  /// reads the N stack indices as base-K^D digits, position 0 most
  /// significant; a stack index reads its codes as base-K digits, k_1 first.
  std::vector<std::vector<double>> table;

  std::size_t classes() const { return table.size(); }
  std::size_t stack_states() const;
  std::size_t states() const;

  CodeStackMap state_map(std::size_t state) const;
  std::size_t state_index(const CodeStackMap& map) const;
  static std::size_t stack_index(std::span<const rq::Code> stack, std::size_t codebook);

  /// p(S_n | visible positions) for class `cls`: `mask` marks the hidden
  /// positions (n among them); codes at the other positions are read from
  /// `map`. Indexed by stack index.
  std::vector<double> conditional(std::size_t cls, const CodeStackMap& map,
                                  const transformer::MaskVector& mask, std::size_t n) const;
};

inline constexpr double kSyntheticKeep = 0.7;   // 1 - rho
inline constexpr double kSyntheticFloor = 0.05;  // uniform blend
inline constexpr std::size_t kMaxSyntheticStates = 1'000'000;

/// Throws ConfigError when (K^D)^N exceeds 10^6 states.
SyntheticCodes make_synthetic_codes(std::size_t n, std::size_t d, std::size_t k, std::size_t classes,
                                    std::uint64_t structure_seed);

/// Labels are index mod classes; states are drawn from the table.
std::vector<LabeledCodes> sample_synthetic(const SyntheticCodes& codes, std::size_t count,
                                           std::uint64_t seed);

}  // namespace draftrevise::pipeline
