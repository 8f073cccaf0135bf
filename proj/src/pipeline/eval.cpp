#include "draftrevise/pipeline/eval.hpp"

#include <cmath>
#include <map>
#include <stdexcept>

#include "draftrevise/errors.hpp"
#include "draftrevise/numeric/rng.hpp"
#include "draftrevise/pipeline/parallel.hpp"

namespace draftrevise::pipeline {

using numeric::Rng;
using transformer::ConditionId;
using transformer::MaskVector;

double total_variation(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw std::invalid_argument("total_variation: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) s += std::abs(p[i] - q[i]);
  return 0.5 * s;
}

double entropy(std::span<const double> p) {
  double h = 0.0;
  for (double v : p)
    if (v > 0.0) h -= v * std::log(v);
  return h;
}

double mean_position_entropy(std::span<const CodeStackMap> maps) {
  if (maps.empty()) throw std::invalid_argument("mean_position_entropy: no samples");
  const std::size_t n = maps.front().positions();
  double total = 0.0;
  for (std::size_t pos = 0; pos < n; ++pos) {
    std::map<std::vector<rq::Code>, std::size_t> counts;
    for (const auto& m : maps) {
      auto s = m.stack(pos);
      ++counts[std::vector<rq::Code>(s.begin(), s.end())];
    }
    std::vector<double> p;
    p.reserve(counts.size());
    for (const auto& [stack, c] : counts) p.push_back(static_cast<double>(c) / maps.size());
    total += entropy(p);
  }
  return total / static_cast<double>(n);
}

ConditionalMatch conditional_match(const transformer::ContextualTransformer& model,
                                   const SyntheticCodes& oracle, std::size_t probes, std::uint64_t seed) {
  const auto& cfg = model.config();
  if (cfg.positions != oracle.positions || cfg.depth != oracle.depth || cfg.codebook_size != oracle.codebook ||
      cfg.num_classes != oracle.classes()) {
    throw ConfigError("conditional_match: model and synthetic distribution disagree in shape");
  }
  if (probes == 0) throw ConfigError("eval_probes must be positive");
  Rng rng(seed);
  const std::size_t per = oracle.stack_states();
  const std::vector<double> uniform(per, 1.0 / static_cast<double>(per));
  ConditionalMatch out;
  for (std::size_t i = 0; i < probes; ++i) {
    const std::size_t cls = rng.below(oracle.classes());
    MaskVector mask(oracle.positions);
    while (mask.count() == 0)
      for (std::size_t p = 0; p < oracle.positions; ++p) mask.set(p, rng.below(2) == 1);
    const CodeStackMap map = oracle.state_map(rng.categorical(oracle.table[cls]));
    const auto hidden = mask.indices();
    const std::size_t n = hidden[rng.below(hidden.size())];

    const transformer::MaskedCodeSequence seq(map, mask);
    const ConditionId cond = ConditionId::of(cls);
    const numeric::Tensor h = model.context(std::span(&seq, 1), std::span(&cond, 1));
    const auto predicted = model.stack_distribution(h.row(n));
    const auto truth = oracle.conditional(cls, map, mask, n);
    const double tv = total_variation(predicted, truth);
    out.max_tv = std::max(out.max_tv, tv);
    out.mean_tv += tv / static_cast<double>(probes);
    out.uniform_max_tv = std::max(out.uniform_max_tv, total_variation(uniform, truth));
  }
  return out;
}

std::uint64_t sample_seed(std::uint64_t seed, std::size_t index) { return Rng::stream(seed, index).next(); }

std::vector<CodeStackMap> generate_samples(const transformer::ContextualTransformer& model,
                                           const decoding::DecodePlan& plan,
                                           std::span<const ConditionId> conditions, std::uint64_t seed) {
  plan.validate(model.config().positions);
  std::vector<CodeStackMap> out(conditions.size());
  parallel_for(conditions.size(), [&](std::size_t i) {
    decoding::DecodePlan p = plan;
    p.seed = sample_seed(seed, i);
    out[i] = decoding::draft_and_revise(p, conditions[i], model);
  });
  return out;
}

std::vector<ConditionId> cycled_conditions(std::size_t classes, std::size_t count) {
  std::vector<ConditionId> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(ConditionId::of(i % classes));
  return out;
}

double sample_match(const transformer::ContextualTransformer& model, const SyntheticCodes& oracle,
                    const decoding::DecodePlan& plan, std::size_t count, std::uint64_t seed) {
  if (count == 0) throw ConfigError("eval_samples must be positive");
  const auto conds = cycled_conditions(oracle.classes(), count);
  const auto maps = generate_samples(model, plan, conds, seed);
  const std::size_t states = oracle.states();
  std::vector<std::vector<double>> counts(oracle.classes(), std::vector<double>(states, 0.0));
  std::vector<double> per_class(oracle.classes(), 0.0);
  for (std::size_t i = 0; i < count; ++i) {
    counts[conds[i].index()][oracle.state_index(maps[i])] += 1.0;
    per_class[conds[i].index()] += 1.0;
  }
  double tv = 0.0;
  for (std::size_t c = 0; c < oracle.classes(); ++c)
    for (std::size_t s = 0; s < states; ++s) tv += std::abs(counts[c][s] - per_class[c] * oracle.table[c][s]);
  return 0.5 * tv / static_cast<double>(count);
}

double sample_entropy(const transformer::ContextualTransformer& model, const decoding::DecodePlan& plan,
                      std::size_t classes, std::size_t count, std::size_t seeds, std::uint64_t seed) {
  if (count == 0 || seeds == 0) throw ConfigError("entropy evaluation needs samples and seeds");
  const auto conds = cycled_conditions(classes, count);
  double total = 0.0;
  for (std::size_t r = 0; r < seeds; ++r) {
    total += mean_position_entropy(generate_samples(model, plan, conds, sample_seed(seed, r)));
  }
  return total / static_cast<double>(seeds);
}

double monotone_residual_fraction(const RqvaeState& s, std::span<const Image> images) {
  const std::size_t depth = s.config.get_size("depth");
  std::size_t good = 0, total = 0;
  for (const auto& img : images) {
    const auto z = s.model.encode(img);
    for (std::size_t n = 0; n < z.positions(); ++n) {
      const auto enc = rq::rq_encode(z.values.row(n), s.codebook, depth);
      bool ok = true;
      double prev = INFINITY;
      for (const auto& r : enc.residuals) {
        double sq = 0.0;
        for (double v : r) sq += v * v;
        ok = ok && sq <= prev;
        prev = sq;
      }
      good += ok ? 1 : 0;
      ++total;
    }
  }
  return total ? static_cast<double>(good) / static_cast<double>(total) : 0.0;
}

double heldout_nll(const transformer::ContextualTransformer& model, std::span<const LabeledCodes> data,
                   std::size_t batches, std::size_t batch_size, std::uint64_t seed) {
  if (data.empty() || batches == 0 || batch_size == 0) throw ConfigError("held-out NLL needs data and batches");
  double total = 0.0;
  for (std::size_t b = 0; b < batches; ++b) {
    Rng rng = Rng::stream(seed, b);
    std::vector<transformer::MaskedExample> batch;
    for (std::size_t i = 0; i < batch_size; ++i) {
      const auto& d = data[rng.below(data.size())];
      const MaskVector mask = transformer::sample_training_mask(d.codes.positions(), rng);
      batch.push_back({transformer::MaskedCodeSequence(d.codes, mask), ConditionId::of(d.label), std::nullopt});
    }
    numeric::Graph g(numeric::Graph::Mode::kInference);
    total += transformer::masked_nll(g, model, batch).value().data()[0];
  }
  return total / static_cast<double>(batches);
}

void EvalReport::add(const std::string& metric, double value) {
  if (!std::isfinite(value)) throw NumericError("metric " + metric + " is not finite");
  rows.emplace_back(metric, value);
}

std::string EvalReport::csv() const {
  std::string out = "metric,value\n";
  for (const auto& [m, v] : rows) out += m + "," + format_number(v) + "\n";
  return out;
}

}  // namespace draftrevise::pipeline
