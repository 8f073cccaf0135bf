#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "draftrevise/transformer/model.hpp"

namespace draftrevise::decoding {

using autoencoder::CodeStackMap;
using transformer::ConditionId;
using transformer::ContextualTransformer;
using transformer::MaskVector;

/// T pairwise-disjoint masks covering a set of positions.
struct Partition {
  std::vector<MaskVector> masks;

  std::size_t size() const { return masks.size(); }
};

/// Sizes of T balanced chunks of `count` items: the first count % T chunks
/// get one extra.
std::vector<std::size_t> balanced_sizes(std::size_t count, std::size_t t);

/// Uniformly random balanced partition of `region` (all N positions when
/// null): shuffle the region, cut into T contiguous chunks. Throws
/// std::invalid_argument unless 1 <= T <= |region|.
Partition sample_partition(std::size_t n, std::size_t t, numeric::Rng& rng,
                           const MaskVector* region = nullptr);

/// Disjoint, balanced, exactly covering `region` (or all positions).
bool is_valid_partition(const Partition& p, std::size_t n, const MaskVector* region = nullptr);

enum class Strategy { kRandom, kTopC, kTopC50 };

std::string strategy_name(Strategy s);
/// "random", "topc" or "topc50"; throws ConfigError otherwise.
Strategy parse_strategy(const std::string& name);

struct DecodePlan {
  std::size_t t_draft = 16;
  std::size_t t_revise = 2;
  std::size_t revise_iters = 2;  // M
  double temperature = 1.0;      // revise only
  double guidance = 1.0;         // revise only
  Strategy strategy = Strategy::kRandom;  // draft only
  std::uint64_t seed = 0;

  /// Throws ConfigError when T values fall outside [1, positions], the
  /// temperature is not positive or the guidance scale is negative.
  void validate(std::size_t positions) const;
};

/// softmax((u + s (c - u)) / tau). At s = 1 the conditional logits are used
/// as-is and at s = 0 the unconditional ones, so those cases are bit-exact.
/// `uncond` may be empty only when s == 1.
std::vector<double> guided_tempered_logits(std::span<const double> cond,
                                           std::span<const double> uncond, double s, double tau);

struct Sampler {
  double temperature = 1.0;
  double guidance = 1.0;

  /// Guidance needs the unconditional pass.
  bool guided() const { return guidance != 1.0; }
  transformer::DistributionFn distribution() const;
};

/// Positions chosen from the candidate list `confidences` (indices into it),
/// returned in ascending order.
///   Top-C:     the `chunk` highest, lowest index first on ties.
///   Top-C-50%: keep the top max(chunk, ceil(count / 2)), pick `chunk` of
///              those uniformly at random.
///   Random:    `chunk` uniformly at random.
/// Throws std::invalid_argument if chunk exceeds the candidate count. No
/// draws are made when the choice is forced.
std::vector<std::size_t> confidence_schedule(Strategy strategy, std::span<const double> confidences,
                                             std::size_t chunk, numeric::Rng& rng);

/// Instrumentation filled in by the decoders.
struct DecodeStats {
  std::size_t forward_passes = 0;  // one per UPDATE step, guided or not
  std::size_t writes = 0;
  std::vector<std::size_t> position_writes;

  void record_write(std::size_t n);
};

/// For each chunk in order, re-mask it, run one forward pass and
/// resample all of its positions from that pass.
CodeStackMap update_pass(const CodeStackMap& s, const Partition& partition, ConditionId condition,
                         const ContextualTransformer& model, const Sampler& sampler,
                         numeric::Rng& rng, DecodeStats* stats = nullptr);

/// Fills an all-MASK map in T_draft steps with no temperature or guidance.
/// With a confidence strategy each step samples every still-masked position
/// and keeps the chunk chosen by confidence_schedule.
CodeStackMap draft(ConditionId condition, std::size_t t_draft, const ContextualTransformer& model,
                   numeric::Rng& rng, Strategy strategy = Strategy::kRandom,
                   DecodeStats* stats = nullptr);

/// M update passes, each with a fresh random partition of size T_revise
/// (restricted to `region` when given). `stages`, when non-null, receives the
/// map after every pass.
CodeStackMap revise(const CodeStackMap& s_draft, ConditionId condition, std::size_t t_revise,
                    std::size_t m, const ContextualTransformer& model, const Sampler& sampler,
                    numeric::Rng& rng, DecodeStats* stats = nullptr,
                    const MaskVector* region = nullptr, std::vector<CodeStackMap>* stages = nullptr);

/// revise(draft(...)) with an Rng seeded from plan.seed. `stages` receives
/// the draft followed by each revision.
CodeStackMap draft_and_revise(const DecodePlan& plan, ConditionId condition,
                              const ContextualTransformer& model, DecodeStats* stats = nullptr,
                              std::vector<CodeStackMap>* stages = nullptr);

/// Regenerates only `region`: the draft phase partitions the region (fixed
/// codes stay visible as context) and revise passes are restricted to it.
/// Positions outside the region are copied unchanged. Throws
/// std::invalid_argument for an empty region or a T larger than it.
CodeStackMap inpaint(const CodeStackMap& s_given, const MaskVector& region, ConditionId condition,
                     const DecodePlan& plan, const ContextualTransformer& model,
                     DecodeStats* stats = nullptr, std::vector<CodeStackMap>* stages = nullptr);

}  // namespace draftrevise::decoding
