#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "draftrevise/decoding/draft_revise.hpp"
#include "draftrevise/pipeline/data.hpp"
#include "draftrevise/pipeline/training.hpp"

namespace draftrevise::pipeline {

/// Half the L1 distance; the vectors must have equal length.
double total_variation(std::span<const double> p, std::span<const double> q);
/// Shannon entropy in nats (0 log 0 = 0).
double entropy(std::span<const double> p);
/// Plug-in entropy of the empirical stack distribution at each position,
/// averaged over positions.
double mean_position_entropy(std::span<const CodeStackMap> maps);

struct ConditionalMatch {
  double max_tv = 0.0;
  double mean_tv = 0.0;
  /// Same probes with a uniform prediction in place of the model.
  double uniform_max_tv = 0.0;
};

/// `probes` random (class, mask, context) probes: class uniform over the real
/// classes, a non-empty random mask, context drawn from the class table and
/// one masked target position. Compares the model's exact stack distribution
/// at the target with the oracle conditional.
ConditionalMatch conditional_match(const transformer::ContextualTransformer& model,
                                   const SyntheticCodes& oracle, std::size_t probes, std::uint64_t seed);

/// Seed of sample i in a run seeded with `seed`.
std::uint64_t sample_seed(std::uint64_t seed, std::size_t index);

/// draft_and_revise for each condition with seeds sample_seed(seed, i), on
/// worker threads. The result does not depend on the thread count.
std::vector<CodeStackMap> generate_samples(const transformer::ContextualTransformer& model,
                                           const decoding::DecodePlan& plan,
                                           std::span<const transformer::ConditionId> conditions,
                                           std::uint64_t seed);

/// Conditions 0, 1, ..., C-1, 0, 1, ... for `count` samples.
std::vector<transformer::ConditionId> cycled_conditions(std::size_t classes, std::size_t count);

/// TV between the empirical (class, state) distribution of `count` samples and
/// the oracle joint with the same class frequencies.
double sample_match(const transformer::ContextualTransformer& model, const SyntheticCodes& oracle,
                    const decoding::DecodePlan& plan, std::size_t count, std::uint64_t seed);

/// mean_position_entropy of `count` samples, averaged over `seeds` runs.
double sample_entropy(const transformer::ContextualTransformer& model, const decoding::DecodePlan& plan,
                      std::size_t classes, std::size_t count, std::size_t seeds, std::uint64_t seed);

/// Fraction of positions whose residual norms |r_0| >= |r_1| >= ... >= |r_D|.
double monotone_residual_fraction(const RqvaeState& s, std::span<const Image> images);

/// Mean masked_nll over `batches` batches of randomly masked held-out maps.
double heldout_nll(const transformer::ContextualTransformer& model, std::span<const LabeledCodes> data,
                   std::size_t batches, std::size_t batch_size, std::uint64_t seed);

/// Ordered metric rows, written as "metric,value".
struct EvalReport {
  std::vector<std::pair<std::string, double>> rows;

  void add(const std::string& metric, double value);
  std::string csv() const;
};

}  // namespace draftrevise::pipeline
