#include "draftrevise/pipeline/data.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "draftrevise/errors.hpp"
#include "draftrevise/numeric/rng.hpp"

namespace draftrevise::pipeline {

using numeric::Rng;

namespace {

enum class Shape { kSquare, kDisc, kTriangle, kCross };

bool inside(Shape shape, double dx, double dy, double r) {
  switch (shape) {
    case Shape::kSquare:
      return std::abs(dx) <= 0.8 * r && std::abs(dy) <= 0.8 * r;
    case Shape::kDisc:
      return dx * dx + dy * dy <= r * r;
    case Shape::kTriangle: {
      // apex up, base at dy = r
      if (dy < -r || dy > r) return false;
      return std::abs(dx) <= 0.5 * (dy + r);
    }
    case Shape::kCross: {
      const double arm = r / 3.0;
      return (std::abs(dx) <= r && std::abs(dy) <= arm) || (std::abs(dy) <= r && std::abs(dx) <= arm);
    }
  }
  return false;
}

std::size_t power(std::size_t base, std::size_t exp, std::size_t limit) {
  std::size_t v = 1;
  for (std::size_t i = 0; i < exp; ++i) {
    if (v > limit / base) return limit + 1;
    v *= base;
  }
  return v;
}

// stack index other than `avoid`, uniform over the rest
// Stack index -> index of its codes sorted ascending. The model reads a
// stack through the sum of its code embeddings, so the toy law only looks at
// which codes a stack holds, not their depth order.
std::vector<std::size_t> multiset_keys(std::size_t depth, std::size_t codebook, std::size_t per) {
  std::vector<std::size_t> keys(per);
  std::vector<rq::Code> digits(depth);
  for (std::size_t s = 0; s < per; ++s) {
    std::size_t rest = s;
    for (std::size_t d = depth; d-- > 0;) {
      digits[d] = static_cast<rq::Code>(rest % codebook);
      rest /= codebook;
    }
    std::sort(digits.begin(), digits.end());
    keys[s] = SyntheticCodes::stack_index(digits, codebook);
  }
  return keys;
}

std::size_t other_stack(std::size_t avoid, const std::vector<std::size_t>& keys, Rng& rng) {
  for (;;) {
    const std::size_t s = rng.below(keys.size());
    if (keys[s] != keys[avoid]) return s;
  }
}

}  // namespace

std::vector<Sprite> make_sprites(std::size_t count, std::uint64_t seed, std::size_t size) {
  if (count == 0) throw std::invalid_argument("make_sprites: count must be positive");
  if (size < 4) throw std::invalid_argument("make_sprites: size must be at least 4");
  const double colours[2][3] = {{0.9, 0.4, 0.15}, {0.15, 0.45, 0.9}};
  std::vector<Sprite> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    Rng rng = Rng::stream(seed, i);
    Sprite s;
    s.label = i % kSpriteClasses;
    const auto shape = static_cast<Shape>(s.label / 2);
    const double* base = colours[s.label % 2];
    const double half = size / 2.0;
    const double cx = half + (rng.uniform() * 2.0 - 1.0) * size / 8.0;
    const double cy = half + (rng.uniform() * 2.0 - 1.0) * size / 8.0;
    const double r = size * (0.2 + 0.1 * rng.uniform());
    double tint[3];
    for (int c = 0; c < 3; ++c) tint[c] = std::clamp(base[c] + (rng.uniform() - 0.5) * 0.16, 0.0, 1.0);
    const double background = 0.08 + 0.04 * rng.uniform();
    s.image = Image(size, size, 3, background);
    for (std::size_t y = 0; y < size; ++y) {
      for (std::size_t x = 0; x < size; ++x) {
        if (!inside(shape, x + 0.5 - cx, y + 0.5 - cy, r)) continue;
        for (int c = 0; c < 3; ++c) s.image.at(y, x, c) = tint[c];
      }
    }
    out.push_back(std::move(s));
  }
  return out;
}

std::size_t SyntheticCodes::stack_states() const { return power(codebook, depth, kMaxSyntheticStates); }

std::size_t SyntheticCodes::states() const { return power(stack_states(), positions, kMaxSyntheticStates); }

std::size_t SyntheticCodes::stack_index(std::span<const rq::Code> stack, std::size_t codebook) {
  std::size_t idx = 0;
  for (rq::Code c : stack) {
    if (c >= codebook) throw std::invalid_argument("stack_index: code out of range");
    idx = idx * codebook + c;
  }
  return idx;
}

CodeStackMap SyntheticCodes::state_map(std::size_t state) const {
  if (state >= states()) throw std::out_of_range("state_map: state out of range");
  CodeStackMap m(1, positions, depth, codebook);
  const std::size_t per = stack_states();
  for (std::size_t n = positions; n-- > 0;) {
    std::size_t stack = state % per;
    state /= per;
    for (std::size_t d = depth; d-- > 0;) {
      m.set(n, d, static_cast<rq::Code>(stack % codebook));
      stack /= codebook;
    }
  }
  return m;
}

std::size_t SyntheticCodes::state_index(const CodeStackMap& map) const {
  if (map.positions() != positions || map.depth() != depth) {
    throw std::invalid_argument("state_index: map shape does not match the distribution");
  }
  std::size_t idx = 0;
  for (std::size_t n = 0; n < positions; ++n) idx = idx * stack_states() + stack_index(map.stack(n), codebook);
  return idx;
}

std::vector<double> SyntheticCodes::conditional(std::size_t cls, const CodeStackMap& map,
                                                const transformer::MaskVector& mask,
                                                std::size_t n) const {
  if (!mask[n]) throw std::invalid_argument("conditional: target position is not masked");
  const std::size_t per = stack_states();
  std::vector<std::size_t> visible(positions, 0);
  for (std::size_t i = 0; i < positions; ++i) {
    if (!mask[i]) visible[i] = stack_index(map.stack(i), codebook);
  }
  std::vector<double> out(per, 0.0);
  std::vector<std::size_t> digits(positions);
  for (std::size_t s = 0; s < states(); ++s) {
    std::size_t rest = s;
    for (std::size_t i = positions; i-- > 0;) {
      digits[i] = rest % per;
      rest /= per;
    }
    bool consistent = true;
    for (std::size_t i = 0; i < positions && consistent; ++i) consistent = mask[i] || digits[i] == visible[i];
    if (consistent) out[digits[n]] += table.at(cls)[s];
  }
  double z = 0.0;
  for (double p : out) z += p;
  for (double& p : out) p /= z;
  return out;
}

SyntheticCodes make_synthetic_codes(std::size_t n, std::size_t d, std::size_t k, std::size_t classes,
                                    std::uint64_t structure_seed) {
  if (n == 0 || d == 0 || k < 2 || classes == 0) {
    throw ConfigError("synthetic codes need N >= 1, D >= 1, K >= 2 and at least one class");
  }
  SyntheticCodes out{n, d, k, {}};
  const std::size_t per = out.stack_states();
  const std::size_t total = out.states();
  if (per > kMaxSyntheticStates || total > kMaxSyntheticStates) {
    throw ConfigError("synthetic code space (K^D)^N exceeds the enumeration limit of 10^6 states");
  }
  const double weights[3] = {0.5, 0.25, 0.25};
  const auto keys = multiset_keys(d, k, per);
  std::vector<double> orderings(per, 0.0);
  for (std::size_t x = 0; x < per; ++x) orderings[keys[x]] += 1.0;
  // kept positions emit the template's codes in a uniformly random order
  auto emit = [&](std::size_t stack, std::size_t tmpl) {
    const double kept = keys[stack] == keys[tmpl] ? kSyntheticKeep / orderings[keys[tmpl]] : 0.0;
    return kept + (1.0 - kSyntheticKeep) / per;
  };
  for (std::size_t c = 0; c < classes; ++c) {
    Rng rng = Rng::stream(structure_seed, c);
    std::vector<std::vector<std::size_t>> templates(3, std::vector<std::size_t>(n));
    for (std::size_t i = 0; i < n; ++i) templates[0][i] = rng.below(per);
    templates[1] = templates[2] = templates[0];
    for (std::size_t i = 0; i < n; ++i) {
      // template 2 differs in the second half, template 3 in the first
      auto& t = i >= n / 2 ? templates[1] : templates[2];
      t[i] = other_stack(templates[0][i], keys, rng);
    }
    std::vector<double> table(total);
    std::vector<std::size_t> digits(n);
    for (std::size_t s = 0; s < total; ++s) {
      std::size_t rest = s;
      for (std::size_t i = n; i-- > 0;) {
        digits[i] = rest % per;
        rest /= per;
      }
      double p = 0.0;
      for (int j = 0; j < 3; ++j) {
        double q = weights[j];
        for (std::size_t i = 0; i < n; ++i) {
          q *= emit(digits[i], templates[j][i]);
        }
        p += q;
      }
      table[s] = (1.0 - kSyntheticFloor) * p + kSyntheticFloor / total;
    }
    out.table.push_back(std::move(table));
  }
  return out;
}

std::vector<LabeledCodes> sample_synthetic(const SyntheticCodes& codes, std::size_t count,
                                           std::uint64_t seed) {
  Rng rng(seed);
  std::vector<LabeledCodes> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t label = i % codes.classes();
    out.push_back({codes.state_map(rng.categorical(codes.table[label])), label});
  }
  return out;
}

}  // namespace draftrevise::pipeline
