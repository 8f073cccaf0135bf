#include "draftrevise/transformer/model.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

#include "draftrevise/errors.hpp"
#include "draftrevise/numeric/ops.hpp"

namespace draftrevise::transformer {

using numeric::Graph;
using numeric::Parameter;
using numeric::Tensor;
using numeric::Var;

std::size_t MaskVector::count() const {
  std::size_t c = 0;
  for (auto b : bits_) c += b;
  return c;
}

std::vector<std::size_t> MaskVector::indices() const {
  std::vector<std::size_t> out;
  for (std::size_t n = 0; n < bits_.size(); ++n) {
    if (bits_[n]) out.push_back(n);
  }
  return out;
}

MaskedCodeSequence::MaskedCodeSequence(CodeStackMap base_, MaskVector mask_)
    : base(std::move(base_)), mask(std::move(mask_)) {
  if (mask.size() != base.positions()) {
    throw std::invalid_argument("MaskedCodeSequence: mask length " + std::to_string(mask.size()) +
                                " != positions " + std::to_string(base.positions()));
  }
}

MaskedCodeSequence::MaskedCodeSequence(CodeStackMap base_)
    : base(std::move(base_)), mask(base.positions()) {}

std::size_t ConditionId::row(std::size_t num_classes) const {
  if (is_null()) return num_classes;
  if (*value_ >= num_classes) {
    throw std::out_of_range("condition " + std::to_string(*value_) + " outside [0, " +
                            std::to_string(num_classes) + ")");
  }
  return *value_;
}

void TransformerConfig::validate() const {
  auto fail = [](const std::string& what) { throw ConfigError("transformer config: " + what); };
  if (d_model == 0 || heads == 0 || d_model % heads != 0) fail("d_model must be a positive multiple of heads");
  if (codebook_size < 2) fail("K must be at least 2");
  if (depth == 0) fail("D must be at least 1");
  if (positions == 0) fail("N must be at least 1");
  if (code_dim == 0) fail("code width must be positive");
  if (ff_multiplier == 0) fail("feed-forward multiplier must be positive");
  if (!(init_std > 0.0)) fail("init_std must be positive");
}

namespace {

Parameter gaussian_param(const std::string& name, numeric::Shape shape, double stddev,
                         numeric::Rng& rng) {
  Tensor t(std::move(shape), 0.0);
  for (double& v : t.values()) v = stddev * rng.normal();
  return Parameter(name, std::move(t));
}

}  // namespace

ContextualTransformer::ContextualTransformer(const TransformerConfig& config, numeric::Rng& rng)
    : config_(config) {
  config.validate();
  const std::size_t dm = config.d_model;
  const double sd = config.init_std;
  code_embed_ = gaussian_param("transformer.code_embed", {config.codebook_size, config.code_dim}, 1.0, rng);
  input_proj_ = gaussian_param("transformer.input_proj", {config.code_dim, dm}, sd, rng);
  token_bias_ = gaussian_param("transformer.token_bias", {2, dm}, sd, rng);
  pos_embed_ = gaussian_param("transformer.pos_embed", {config.positions, dm}, sd, rng);
  class_embed_ = gaussian_param("transformer.class_embed", {config.num_classes + 1, dm}, sd, rng);
  for (std::size_t i = 0; i < config.spatial_blocks; ++i) {
    spatial_.emplace_back("transformer.spatial" + std::to_string(i), dm, config.heads,
                          config.ff_multiplier * dm, rng, sd);
  }
  spatial_norm_ = numeric::LayerNorm("transformer.spatial_norm", dm);
  depth_pos_ = gaussian_param("transformer.depth_pos", {config.depth, dm}, sd, rng);
  hist_proj_ = gaussian_param("transformer.history_proj", {config.code_dim, dm}, sd, rng);
  for (std::size_t i = 0; i < config.depth_blocks; ++i) {
    depth_blocks_.emplace_back("transformer.depth" + std::to_string(i), dm, config.heads,
                               config.ff_multiplier * dm, rng, sd);
  }
  depth_norm_ = numeric::LayerNorm("transformer.depth_norm", dm);
  head_ = numeric::Linear("transformer.head", dm, config.codebook_size, rng, sd);
}

void ContextualTransformer::init_code_embeddings(const rq::Codebook& codebook) {
  if (codebook.size() != config_.codebook_size || codebook.dim() != config_.code_dim) {
    throw ConfigError("transformer: codebook is " + std::to_string(codebook.size()) + "x" +
                      std::to_string(codebook.dim()) + ", config expects " +
                      std::to_string(config_.codebook_size) + "x" + std::to_string(config_.code_dim));
  }
  code_embed_.value = codebook.embeddings();
}

Var ContextualTransformer::embed_masked(Graph& g, std::span<const MaskedCodeSequence> seqs,
                                        std::span<const ConditionId> conditions) const {
  if (seqs.empty() || seqs.size() != conditions.size()) {
    throw std::invalid_argument("embed_masked: need one condition per sequence");
  }
  const std::size_t n = config_.positions, d = config_.depth, k = config_.codebook_size;
  std::vector<std::vector<std::size_t>> lists;
  std::vector<std::ptrdiff_t> token, pos, cls;
  lists.reserve(seqs.size() * n);
  for (std::size_t b = 0; b < seqs.size(); ++b) {
    const auto& s = seqs[b];
    if (s.positions() != n || s.base.depth() != d || s.base.codebook_size() != k) {
      throw std::invalid_argument("embed_masked: sequence shape does not match the model");
    }
    const auto c = static_cast<std::ptrdiff_t>(conditions[b].row(config_.num_classes));
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<std::size_t> list;
      const bool masked = s.masked(i);
      if (!masked) {
        for (std::size_t j = 0; j < d; ++j) {
          const Code code = s.base.at(i, j);
          if (code >= k) throw std::out_of_range("embed_masked: code out of range");
          list.push_back(code);
        }
      }
      lists.push_back(std::move(list));
      token.push_back(masked ? 1 : 0);
      pos.push_back(static_cast<std::ptrdiff_t>(i));
      cls.push_back(c);
    }
  }
  Var sum = numeric::gather_sum(g.param(code_embed_), std::move(lists));
  Var u = numeric::matmul(sum, g.param(input_proj_));
  u = numeric::add(u, numeric::gather_rows(g.param(token_bias_), std::move(token)));
  u = numeric::add(u, numeric::gather_rows(g.param(pos_embed_), std::move(pos)));
  return numeric::add(u, numeric::gather_rows(g.param(class_embed_), std::move(cls)));
}

Var ContextualTransformer::spatial_forward(Graph& g, Var u) const {
  Var x = u;
  for (const auto& block : spatial_) x = block(g, x, config_.positions, numeric::AttentionMask::kFull);
  return spatial_norm_(g, x);
}

Var ContextualTransformer::depth_input(Graph& g, Var h, std::span<const std::size_t> rows,
                                       std::span<const Code> history, std::size_t length) const {
  const std::size_t m = rows.size(), k = config_.codebook_size;
  if (length < 1 || length > config_.depth) throw std::invalid_argument("depth_logits: bad length");
  if (history.size() != m * (length - 1)) {
    throw std::invalid_argument("depth_logits: history must hold length-1 codes per row");
  }
  std::vector<std::ptrdiff_t> pos, from_h;
  std::vector<std::vector<std::size_t>> lists;
  pos.reserve(m * length);
  for (std::size_t i = 0; i < m; ++i) {
    if (rows[i] >= h.value().rows()) throw std::out_of_range("depth_logits: row out of range");
    for (std::size_t d = 0; d < length; ++d) {
      pos.push_back(static_cast<std::ptrdiff_t>(d));
      from_h.push_back(d == 0 ? static_cast<std::ptrdiff_t>(rows[i]) : -1);
      if (length > 1) {
        std::vector<std::size_t> list;
        for (std::size_t j = 0; j < d; ++j) {
          const Code c = history[i * (length - 1) + j];
          if (c >= k) throw std::out_of_range("depth_logits: history code out of range");
          list.push_back(c);
        }
        lists.push_back(std::move(list));
      }
    }
  }
  Var v = numeric::add(numeric::gather_rows(g.param(depth_pos_), std::move(pos)),
                       numeric::gather_rows(h, std::move(from_h)));
  if (length > 1) {
    Var hist = numeric::matmul(numeric::gather_sum(g.param(code_embed_), std::move(lists)),
                               g.param(hist_proj_));
    v = numeric::add(v, hist);
  }
  return v;
}

Var ContextualTransformer::depth_logits(Graph& g, Var h, std::span<const std::size_t> rows,
                                        std::span<const Code> history, std::size_t length) const {
  Var x = depth_input(g, h, rows, history, length);
  for (const auto& block : depth_blocks_) x = block(g, x, length, numeric::AttentionMask::kCausal);
  return head_(g, depth_norm_(g, x));
}

Tensor ContextualTransformer::context(std::span<const MaskedCodeSequence> seqs,
                                      std::span<const ConditionId> conditions) const {
  Graph g(Graph::Mode::kInference);
  Tensor h = spatial_forward(g, embed_masked(g, seqs, conditions)).value();
  numeric::require_finite(h, "context vectors");
  return h;
}

std::vector<double> ContextualTransformer::stack_distribution(std::span<const double> h_row) const {
  const std::size_t k = config_.codebook_size, d = config_.depth;
  if (h_row.size() != config_.d_model) throw std::invalid_argument("stack_distribution: bad row width");
  double states = 1.0;
  for (std::size_t i = 0; i < d; ++i) states *= static_cast<double>(k);
  if (states > 1e6) {
    throw std::invalid_argument("stack_distribution: K^D = " + std::to_string(states) +
                                " exceeds the 10^6 enumeration limit");
  }
  std::size_t prefixes = 1;
  for (std::size_t i = 0; i + 1 < d; ++i) prefixes *= k;
  std::vector<double> out(prefixes * k, 0.0);
  const std::size_t chunk = 4096;
  Tensor h({1, config_.d_model}, std::vector<double>(h_row.begin(), h_row.end()));
  for (std::size_t start = 0; start < prefixes; start += chunk) {
    const std::size_t count = std::min(chunk, prefixes - start);
    std::vector<std::size_t> rows(count, 0);
    std::vector<Code> history;
    history.reserve(count * (d - 1));
    for (std::size_t p = start; p < start + count; ++p) {
      // digits of p, most significant first
      std::vector<Code> digits(d - 1);
      std::size_t rest = p;
      for (std::size_t j = d - 1; j-- > 0;) {
        digits[j] = static_cast<Code>(rest % k);
        rest /= k;
      }
      history.insert(history.end(), digits.begin(), digits.end());
    }
    Graph g(Graph::Mode::kInference);
    const Tensor& logits = depth_logits(g, g.constant(h), rows, history, d).value();
    for (std::size_t i = 0; i < count; ++i) {
      double lp = 0.0;
      for (std::size_t j = 0; j + 1 < d; ++j) {
        auto ls = numeric::log_softmax(logits.row(i * d + j));
        lp += ls[history[i * (d - 1) + j]];
      }
      auto last = numeric::log_softmax(logits.row(i * d + d - 1));
      for (std::size_t c = 0; c < k; ++c) out[(start + i) * k + c] = std::exp(lp + last[c]);
    }
  }
  return out;
}

numeric::ParameterRefs ContextualTransformer::parameters() {
  numeric::ParameterRefs refs{&code_embed_, &input_proj_, &token_bias_, &pos_embed_, &class_embed_};
  for (auto& b : spatial_) b.collect(refs);
  spatial_norm_.collect(refs);
  refs.push_back(&depth_pos_);
  refs.push_back(&hist_proj_);
  for (auto& b : depth_blocks_) b.collect(refs);
  depth_norm_.collect(refs);
  head_.collect(refs);
  return refs;
}

numeric::ConstParameterRefs ContextualTransformer::parameters() const {
  auto refs = const_cast<ContextualTransformer*>(this)->parameters();
  return {refs.begin(), refs.end()};
}

numeric::ParameterRefs ContextualTransformer::trainable_parameters() {
  auto refs = parameters();
  if (config_.freeze_code_embeddings) refs.erase(refs.begin());
  return refs;
}

numeric::ConstParameterRefs ContextualTransformer::trainable_parameters() const {
  auto refs = parameters();
  if (config_.freeze_code_embeddings) refs.erase(refs.begin());
  return refs;
}

Var masked_nll(Graph& g, const ContextualTransformer& model, std::span<const MaskedExample> batch) {
  if (batch.empty()) throw std::invalid_argument("masked_nll: empty batch");
  const auto& cfg = model.config();
  std::vector<MaskedCodeSequence> seqs;
  std::vector<ConditionId> conds;
  seqs.reserve(batch.size());
  for (const auto& ex : batch) {
    seqs.push_back(ex.input);
    conds.push_back(ex.condition);
  }
  Var h = model.spatial_forward(g, model.embed_masked(g, seqs, conds));

  std::vector<std::size_t> rows, targets;
  std::vector<Code> history;
  std::vector<double> weights;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const auto& ex = batch[b];
    const CodeStackMap& tgt = ex.targets ? *ex.targets : ex.input.base;
    if (tgt.positions() != cfg.positions || tgt.depth() != cfg.depth) {
      throw std::invalid_argument("masked_nll: target shape does not match the model");
    }
    std::vector<std::size_t> masked;
    for (std::size_t n = 0; n < cfg.positions; ++n) {
      if (ex.input.masked(n)) masked.push_back(n);
    }
    if (masked.empty()) throw std::invalid_argument("masked_nll: example without masked positions");
    const double w = 1.0 / (static_cast<double>(batch.size()) * static_cast<double>(masked.size()));
    for (std::size_t n : masked) {
      rows.push_back(b * cfg.positions + n);
      for (std::size_t d = 0; d < cfg.depth; ++d) {
        const Code c = tgt.at(n, d);
        if (c >= cfg.codebook_size) throw std::out_of_range("masked_nll: target code out of range");
        targets.push_back(c);
        weights.push_back(w);
        if (d + 1 < cfg.depth) history.push_back(c);
      }
    }
  }
  Var logits = model.depth_logits(g, h, rows, history, cfg.depth);
  return numeric::cross_entropy(logits, targets, weights);
}

std::size_t mask_count(double r, std::size_t n) {
  const double gamma = std::cos(std::numbers::pi * r / 2.0);
  const double raw = std::ceil(gamma * static_cast<double>(n));
  if (!(raw >= 1.0)) return 1;
  return std::min(n, static_cast<std::size_t>(raw));
}

MaskVector sample_training_mask(std::size_t n, numeric::Rng& rng) {
  if (n == 0) throw std::invalid_argument("sample_training_mask: N must be at least 1");
  const std::size_t count = mask_count(rng.uniform(), n);
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  rng.shuffle(std::span<std::size_t>(order));
  MaskVector m(n);
  for (std::size_t i = 0; i < count; ++i) m.set(order[i]);
  return m;
}

ConditionId condition_dropout(ConditionId condition, double p_drop, numeric::Rng& rng) {
  if (!(p_drop >= 0.0 && p_drop <= 1.0)) throw std::invalid_argument("condition_dropout: p outside [0, 1]");
  const double u = rng.uniform();
  return u < p_drop ? ConditionId::null() : condition;
}

DistributionFn tempered_distribution(double temperature) {
  if (!(temperature >= 0.0)) throw std::invalid_argument("temperature must be non-negative");
  return [temperature](std::span<const double> cond, std::span<const double>) {
    if (temperature == 0.0) {
      std::vector<double> out(cond.size(), 0.0);
      out[static_cast<std::size_t>(std::max_element(cond.begin(), cond.end()) - cond.begin())] = 1.0;
      return out;
    }
    if (temperature == 1.0) return numeric::softmax(cond);
    std::vector<double> scaled(cond.begin(), cond.end());
    for (double& v : scaled) v /= temperature;
    return numeric::softmax(scaled);
  };
}

std::vector<StackSample> predict_stacks(const ContextualTransformer& model, const Tensor& h_cond,
                                        const Tensor* h_uncond, std::span<const std::size_t> rows,
                                        const DistributionFn& distribution, numeric::Rng& rng) {
  const std::size_t depth = model.config().depth, m = rows.size();
  std::vector<StackSample> out(m);
  if (m == 0) return out;
  if (h_uncond && !h_uncond->same_shape(h_cond)) {
    throw std::invalid_argument("predict_stacks: conditional and unconditional contexts differ in shape");
  }
  std::vector<Code> history;
  for (std::size_t d = 0; d < depth; ++d) {
    const std::size_t length = d + 1;
    history.clear();
    for (std::size_t i = 0; i < m; ++i) history.insert(history.end(), out[i].codes.begin(), out[i].codes.end());
    Graph g(Graph::Mode::kInference);
    const Tensor& lc = model.depth_logits(g, g.constant(h_cond), rows, history, length).value();
    const Tensor* lu = nullptr;
    if (h_uncond) lu = &model.depth_logits(g, g.constant(*h_uncond), rows, history, length).value();
    for (std::size_t i = 0; i < m; ++i) {
      auto cond = lc.row(i * length + d);
      std::span<const double> uncond;
      if (lu) uncond = lu->row(i * length + d);
      std::vector<double> q = distribution(cond, uncond);
      const std::size_t k = rng.categorical(q);
      out[i].codes.push_back(static_cast<Code>(k));
      out[i].log_prob += std::log(q[k]);
    }
  }
  return out;
}

rq::CodeStack predict_stack(const ContextualTransformer& model, std::span<const double> h_n,
                            const DistributionFn& distribution, numeric::Rng& rng) {
  Tensor h({1, h_n.size()}, std::vector<double>(h_n.begin(), h_n.end()));
  const std::size_t row = 0;
  auto samples = predict_stacks(model, h, nullptr, std::span<const std::size_t>(&row, 1), distribution, rng);
  return rq::CodeStack{std::move(samples[0].codes)};
}

double transformer_train_step(ContextualTransformer& model, numeric::OptimizerState& state,
                              std::span<const TrainingItem> batch,
                              const TransformerStepOptions& options, numeric::Rng& rng) {
  if (batch.empty()) throw std::invalid_argument("transformer_train_step: empty batch");
  const std::size_t n = model.config().positions;
  std::vector<MaskedExample> examples;
  examples.reserve(batch.size());
  for (const auto& item : batch) {
    if (!item.codes || !item.codes->fully_populated()) {
      throw std::invalid_argument("transformer_train_step: training maps must be fully populated");
    }
    MaskVector mask = sample_training_mask(n, rng);
    ConditionId cond = condition_dropout(item.condition, options.condition_drop, rng);
    examples.push_back(MaskedExample{MaskedCodeSequence(*item.codes, std::move(mask)), cond, std::nullopt});
  }
  auto all = model.parameters();
  for (auto* p : all) p->zero_grad();
  double loss_value = 0.0;
  {
    Graph g;
    Var loss = masked_nll(g, model, examples);
    loss_value = loss.value().item();
    if (!std::isfinite(loss_value)) throw NumericError("transformer training: non-finite loss");
    g.backward(loss);
  }
  auto params = model.trainable_parameters();
  numeric::adamw_step(params, state, options.adamw, options.lr);
  for (auto* p : params) {
    if (options.float_storage) numeric::round_to_float(p->value);
    numeric::require_finite(p->value, p->name.c_str());
  }
  if (options.float_storage) {
    for (auto& t : state.first_moment) numeric::round_to_float(t);
    for (auto& t : state.second_moment) numeric::round_to_float(t);
  }
  return loss_value;
}

}  // namespace draftrevise::transformer
