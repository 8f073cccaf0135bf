#include "draftrevise/decoding/draft_revise.hpp"

#include <algorithm>
#include <numeric>
#include <optional>
#include <stdexcept>

#include "draftrevise/errors.hpp"
#include "draftrevise/numeric/ops.hpp"

namespace draftrevise::decoding {

using numeric::Rng;
using numeric::Tensor;
using transformer::MaskedCodeSequence;

std::vector<std::size_t> balanced_sizes(std::size_t count, std::size_t t) {
  if (t == 0 || t > count) {
    throw std::invalid_argument("partition size " + std::to_string(t) + " outside [1, " +
                                std::to_string(count) + "]");
  }
  std::vector<std::size_t> sizes(t, count / t);
  for (std::size_t i = 0; i < count % t; ++i) ++sizes[i];
  return sizes;
}

namespace {

std::vector<std::size_t> region_positions(std::size_t n, const MaskVector* region) {
  if (!region) {
    std::vector<std::size_t> all(n);
    std::iota(all.begin(), all.end(), std::size_t{0});
    return all;
  }
  if (region->size() != n) throw std::invalid_argument("region length does not match N");
  return region->indices();
}

}  // namespace

Partition sample_partition(std::size_t n, std::size_t t, Rng& rng, const MaskVector* region) {
  std::vector<std::size_t> pos = region_positions(n, region);
  const auto sizes = balanced_sizes(pos.size(), t);
  rng.shuffle(std::span<std::size_t>(pos));
  Partition p;
  std::size_t at = 0;
  for (std::size_t size : sizes) {
    MaskVector m(n);
    for (std::size_t i = 0; i < size; ++i) m.set(pos[at++]);
    p.masks.push_back(std::move(m));
  }
  return p;
}

bool is_valid_partition(const Partition& p, std::size_t n, const MaskVector* region) {
  const auto pos = region_positions(n, region);
  std::vector<int> cover(n, 0);
  std::size_t lo = n, hi = 0;
  for (const auto& m : p.masks) {
    if (m.size() != n) return false;
    for (std::size_t i : m.indices()) ++cover[i];
    lo = std::min(lo, m.count());
    hi = std::max(hi, m.count());
  }
  if (p.masks.empty() || hi - lo > 1 || lo == 0) return false;
  std::vector<int> want(n, 0);
  for (std::size_t i : pos) want[i] = 1;
  return cover == want;
}

std::string strategy_name(Strategy s) {
  switch (s) {
    case Strategy::kRandom: return "random";
    case Strategy::kTopC: return "topc";
    case Strategy::kTopC50: return "topc50";
  }
  return "?";
}

Strategy parse_strategy(const std::string& name) {
  if (name == "random") return Strategy::kRandom;
  if (name == "topc") return Strategy::kTopC;
  if (name == "topc50") return Strategy::kTopC50;
  throw ConfigError("unknown strategy '" + name + "' (expected random, topc or topc50)");
}

void DecodePlan::validate(std::size_t positions) const {
  auto in_range = [positions](std::size_t t) { return t >= 1 && t <= positions; };
  if (!in_range(t_draft)) throw ConfigError("decode plan: T_draft must lie in [1, " + std::to_string(positions) + "]");
  if (!in_range(t_revise)) throw ConfigError("decode plan: T_revise must lie in [1, " + std::to_string(positions) + "]");
  if (!(temperature > 0.0)) throw ConfigError("decode plan: temperature must be positive");
  if (!(guidance >= 0.0)) throw ConfigError("decode plan: guidance scale must be non-negative");
}

std::vector<double> guided_tempered_logits(std::span<const double> cond,
                                           std::span<const double> uncond, double s, double tau) {
  if (!(tau > 0.0)) throw std::invalid_argument("guided_tempered_logits: temperature must be positive");
  if (!(s >= 0.0)) throw std::invalid_argument("guided_tempered_logits: guidance must be non-negative");
  std::vector<double> combined;
  if (s == 1.0) {
    combined.assign(cond.begin(), cond.end());
  } else {
    if (uncond.size() != cond.size()) {
      throw std::invalid_argument("guided_tempered_logits: unconditional logits required");
    }
    if (s == 0.0) {
      combined.assign(uncond.begin(), uncond.end());
    } else {
      combined.resize(cond.size());
      for (std::size_t k = 0; k < cond.size(); ++k) combined[k] = uncond[k] + s * (cond[k] - uncond[k]);
    }
  }
  if (tau != 1.0) {
    for (double& v : combined) v /= tau;
  }
  return numeric::softmax(combined);
}

transformer::DistributionFn Sampler::distribution() const {
  const double s = guidance, tau = temperature;
  return [s, tau](std::span<const double> c, std::span<const double> u) {
    return guided_tempered_logits(c, u, s, tau);
  };
}

std::vector<std::size_t> confidence_schedule(Strategy strategy, std::span<const double> confidences,
                                             std::size_t chunk, Rng& rng) {
  const std::size_t count = confidences.size();
  if (chunk > count) {
    throw std::invalid_argument("confidence_schedule: chunk " + std::to_string(chunk) +
                                " exceeds " + std::to_string(count) + " masked positions");
  }
  std::vector<std::size_t> order(count);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::size_t keep = count;
  if (strategy != Strategy::kRandom) {
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return confidences[a] > confidences[b]; });
    keep = strategy == Strategy::kTopC ? chunk : std::max(chunk, (count + 1) / 2);
  }
  order.resize(keep);
  if (keep > chunk) {
    rng.shuffle(std::span<std::size_t>(order));
    order.resize(chunk);
  }
  std::sort(order.begin(), order.end());
  return order;
}

void DecodeStats::record_write(std::size_t n) {
  if (position_writes.size() <= n) position_writes.resize(n + 1, 0);
  ++position_writes[n];
  ++writes;
}

namespace {

struct Contexts {
  Tensor cond;
  std::optional<Tensor> uncond;
};

// Conditional and (when guided) unconditional context from one doubled batch.
Contexts contexts(const ContextualTransformer& model, const MaskedCodeSequence& seq,
                  ConditionId condition, bool guided) {
  if (!guided) {
    return {model.context(std::span(&seq, 1), std::span(&condition, 1)), std::nullopt};
  }
  const MaskedCodeSequence seqs[2] = {seq, seq};
  const ConditionId conds[2] = {condition, ConditionId::null()};
  Tensor both = model.context(seqs, conds);
  const std::size_t n = seq.positions(), w = both.cols();
  Tensor c({n, w}, std::vector<double>(both.data(), both.data() + n * w));
  Tensor u({n, w}, std::vector<double>(both.data() + n * w, both.data() + 2 * n * w));
  return {std::move(c), std::move(u)};
}

void check_map(const CodeStackMap& s, const ContextualTransformer& model) {
  const auto& cfg = model.config();
  if (s.positions() != cfg.positions || s.depth() != cfg.depth || s.codebook_size() != cfg.codebook_size) {
    throw std::invalid_argument("decoder: code map shape does not match the model");
  }
}

// One UPDATE step: sample stacks at `rows` given `seq` and write them into `s`.
std::vector<transformer::StackSample> sample_rows(const ContextualTransformer& model,
                                                  const MaskedCodeSequence& seq,
                                                  ConditionId condition, const Sampler& sampler,
                                                  const std::vector<std::size_t>& rows, Rng& rng,
                                                  DecodeStats* stats) {
  Contexts ctx = contexts(model, seq, condition, sampler.guided());
  if (stats) ++stats->forward_passes;
  return transformer::predict_stacks(model, ctx.cond, ctx.uncond ? &*ctx.uncond : nullptr, rows,
                                     sampler.distribution(), rng);
}

void write(CodeStackMap& s, std::size_t n, const std::vector<rq::Code>& codes, DecodeStats* stats) {
  s.set_stack(n, codes);
  if (!stats) return;
  if (stats->position_writes.size() < s.positions()) stats->position_writes.resize(s.positions(), 0);
  stats->record_write(n);
}

// Draft over `region` of a map whose region positions already hold MASK.
CodeStackMap draft_region(CodeStackMap s, const MaskVector& region, ConditionId condition,
                          std::size_t t_draft, const ContextualTransformer& model, Rng& rng,
                          Strategy strategy, DecodeStats* stats) {
  const Sampler plain;
  const std::size_t n = s.positions();
  if (strategy == Strategy::kRandom) {
    return update_pass(s, sample_partition(n, t_draft, rng, &region), condition, model, plain, rng, stats);
  }
  for (std::size_t chunk : balanced_sizes(region.count(), t_draft)) {
    std::vector<std::size_t> candidates;
    for (std::size_t i : region.indices()) {
      if (s.masked(i)) candidates.push_back(i);
    }
    MaskedCodeSequence seq(s);
    auto samples = sample_rows(model, seq, condition, plain, candidates, rng, stats);
    std::vector<double> conf(samples.size());
    for (std::size_t i = 0; i < samples.size(); ++i) conf[i] = samples[i].log_prob;
    for (std::size_t pick : confidence_schedule(strategy, conf, chunk, rng)) {
      write(s, candidates[pick], samples[pick].codes, stats);
    }
  }
  return s;
}

CodeStackMap generate(CodeStackMap s, const MaskVector& region, ConditionId condition,
                      const DecodePlan& plan, const ContextualTransformer& model, DecodeStats* stats,
                      std::vector<CodeStackMap>* stages) {
  check_map(s, model);
  plan.validate(model.config().positions);
  if (region.count() == 0) throw std::invalid_argument("inpaint: empty region");
  for (std::size_t i : region.indices()) s.mask_position(i);
  for (std::size_t i = 0; i < s.positions(); ++i) {
    if (!region[i] && s.masked(i)) throw std::invalid_argument("inpaint: fixed position holds MASK");
  }
  Rng rng(plan.seed);
  CodeStackMap drafted = draft_region(std::move(s), region, condition, plan.t_draft, model, rng,
                                      plan.strategy, stats);
  if (stages) stages->push_back(drafted);
  const Sampler sampler{plan.temperature, plan.guidance};
  return revise(drafted, condition, plan.t_revise, plan.revise_iters, model, sampler, rng, stats,
                &region, stages);
}

}  // namespace

CodeStackMap update_pass(const CodeStackMap& s, const Partition& partition, ConditionId condition,
                         const ContextualTransformer& model, const Sampler& sampler, Rng& rng,
                         DecodeStats* stats) {
  check_map(s, model);
  CodeStackMap out = s;
  for (const MaskVector& chunk : partition.masks) {
    if (chunk.size() != s.positions()) throw std::invalid_argument("update_pass: partition length mismatch");
    const std::vector<std::size_t> rows = chunk.indices();
    MaskedCodeSequence seq(out, chunk);
    auto samples = sample_rows(model, seq, condition, sampler, rows, rng, stats);
    for (std::size_t i = 0; i < rows.size(); ++i) write(out, rows[i], samples[i].codes, stats);
  }
  return out;
}

CodeStackMap draft(ConditionId condition, std::size_t t_draft, const ContextualTransformer& model,
                   Rng& rng, Strategy strategy, DecodeStats* stats) {
  const auto& cfg = model.config();
  CodeStackMap empty(1, cfg.positions, cfg.depth, cfg.codebook_size);
  return draft_region(std::move(empty), MaskVector(cfg.positions, true), condition, t_draft, model,
                      rng, strategy, stats);
}

CodeStackMap revise(const CodeStackMap& s_draft, ConditionId condition, std::size_t t_revise,
                    std::size_t m, const ContextualTransformer& model, const Sampler& sampler,
                    Rng& rng, DecodeStats* stats, const MaskVector* region,
                    std::vector<CodeStackMap>* stages) {
  if (!s_draft.fully_populated()) throw std::invalid_argument("revise: draft holds MASK codes");
  CodeStackMap s = s_draft;
  for (std::size_t iter = 0; iter < m; ++iter) {
    s = update_pass(s, sample_partition(s.positions(), t_revise, rng, region), condition, model,
                    sampler, rng, stats);
    if (stages) stages->push_back(s);
  }
  return s;
}

CodeStackMap draft_and_revise(const DecodePlan& plan, ConditionId condition,
                              const ContextualTransformer& model, DecodeStats* stats,
                              std::vector<CodeStackMap>* stages) {
  const auto& cfg = model.config();
  // an all-MASK map with the region covering everything
  CodeStackMap empty(1, cfg.positions, cfg.depth, cfg.codebook_size);
  return generate(std::move(empty), MaskVector(cfg.positions, true), condition, plan, model, stats,
                  stages);
}

CodeStackMap inpaint(const CodeStackMap& s_given, const MaskVector& region, ConditionId condition,
                     const DecodePlan& plan, const ContextualTransformer& model, DecodeStats* stats,
                     std::vector<CodeStackMap>* stages) {
  if (region.size() != s_given.positions()) throw std::invalid_argument("inpaint: region length mismatch");
  return generate(s_given, region, condition, plan, model, stats, stages);
}

}  // namespace draftrevise::decoding
