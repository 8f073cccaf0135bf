#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "draftrevise/autoencoder/code_map.hpp"
#include "draftrevise/numeric/nn.hpp"
#include "draftrevise/numeric/optim.hpp"
#include "draftrevise/rq/quantizer.hpp"

namespace draftrevise::transformer {

using autoencoder::CodeStackMap;
using rq::Code;

/// Binary vector over the N positions; 1 = masked.
class MaskVector {
 public:
  MaskVector() = default;
  explicit MaskVector(std::size_t n, bool value = false) : bits_(n, value ? 1 : 0) {}

  std::size_t size() const { return bits_.size(); }
  std::size_t count() const;
  bool operator[](std::size_t n) const { return bits_[n] != 0; }
  void set(std::size_t n, bool value = true) { bits_.at(n) = value ? 1 : 0; }
  std::vector<std::size_t> indices() const;

  friend bool operator==(const MaskVector&, const MaskVector&) = default;

 private:
  std::vector<std::uint8_t> bits_;
};

/// A code map viewed through a mask. Reads at a masked position return
/// kMaskCode at every depth; so does any position whose base stack already
/// holds MASK (a partially generated map).
struct MaskedCodeSequence {
  CodeStackMap base;
  MaskVector mask;

  MaskedCodeSequence() = default;
  MaskedCodeSequence(CodeStackMap base_, MaskVector mask_);
  /// Positions already holding MASK are the only masked ones.
  explicit MaskedCodeSequence(CodeStackMap base_);

  std::size_t positions() const { return base.positions(); }
  bool masked(std::size_t n) const { return mask[n] || base.masked(n); }
  Code code(std::size_t n, std::size_t d) const { return masked(n) ? rq::kMaskCode : base.at(n, d); }
};

/// Class index or the unconditional NULL condition.
class ConditionId {
 public:
  static ConditionId null() { return ConditionId(); }
  static ConditionId of(std::size_t cls) { return ConditionId(cls); }

  bool is_null() const { return !value_.has_value(); }
  std::size_t index() const { return value_.value(); }
  /// Row of the class table; NULL maps to the last row.
  std::size_t row(std::size_t num_classes) const;

  friend bool operator==(const ConditionId&, const ConditionId&) = default;

 private:
  ConditionId() = default;
  explicit ConditionId(std::size_t cls) : value_(cls) {}
  std::optional<std::size_t> value_;
};

struct TransformerConfig {
  std::size_t spatial_blocks = 4;
  std::size_t depth_blocks = 2;
  std::size_t d_model = 128;
  std::size_t heads = 2;
  std::size_t ff_multiplier = 4;
  std::size_t codebook_size = 64;  // K
  std::size_t depth = 4;           // D
  std::size_t positions = 16;      // N
  std::size_t code_dim = 16;       // n_z
  std::size_t num_classes = 8;     // real classes; the table has one more row for NULL
  double init_std = 0.02;
  bool freeze_code_embeddings = false;

  /// Throws ConfigError when the configuration is inconsistent.
  void validate() const;
};

/// Bidirectional spatial transformer over positions plus a causal depth
/// transformer over the codes of one stack.
///
///   u_n  = PE_N(n) + c(condition) + (W_in . sum_d e(S_nd) + b_code  |  e_MASK)
///   h    = LN(spatial blocks(u))
///   v_n1 = PE_D(1) + h_n,   v_nd = PE_D(d) + W_hist . sum_{d'<d} e(S_nd')
///   p_nd = W_head . LN(depth blocks(v_n))
///
/// W_hist has no bias, so at D = 1 the depth input is h_n alone.
class ContextualTransformer {
 public:
  ContextualTransformer() = default;
  ContextualTransformer(const TransformerConfig& config, numeric::Rng& rng);

  const TransformerConfig& config() const { return config_; }

  /// Copies the autoencoder codebook into the code-embedding table.
  void init_code_embeddings(const rq::Codebook& codebook);

  /// [B*N x d_model] input rows for a batch of sequences.
  numeric::Var embed_masked(numeric::Graph& g, std::span<const MaskedCodeSequence> seqs,
                            std::span<const ConditionId> conditions) const;
  /// Context vectors h, same shape as `u`.
  numeric::Var spatial_forward(numeric::Graph& g, numeric::Var u) const;

  /// Depth logits for the rows `rows` of `h`. `history` holds, per selected
  /// row, the first `length - 1` codes of its stack (teacher forcing or
  /// already-sampled codes). Returns [rows.size() * length x K]; row
  /// i * length + d holds p_{n,d+1}.
  numeric::Var depth_logits(numeric::Graph& g, numeric::Var h, std::span<const std::size_t> rows,
                            std::span<const Code> history, std::size_t length) const;

  /// Inference-mode context vectors for a batch.
  numeric::Tensor context(std::span<const MaskedCodeSequence> seqs,
                          std::span<const ConditionId> conditions) const;

  /// Exact distribution over all K^D stacks for one context row, in
  /// lexicographic order (k_1 most significant). Throws std::invalid_argument
  /// when K^D exceeds 10^6.
  std::vector<double> stack_distribution(std::span<const double> h_row) const;

  numeric::ParameterRefs parameters();
  numeric::ConstParameterRefs parameters() const;
  /// Parameters updated by training: all of them unless code embeddings are frozen.
  numeric::ParameterRefs trainable_parameters();
  numeric::ConstParameterRefs trainable_parameters() const;

  /// Direct access for probes.
  numeric::Parameter& code_embeddings() { return code_embed_; }
  numeric::Parameter& history_projection() { return hist_proj_; }

 private:
  numeric::Var depth_input(numeric::Graph& g, numeric::Var h, std::span<const std::size_t> rows,
                           std::span<const Code> history, std::size_t length) const;

  TransformerConfig config_;
  numeric::Parameter code_embed_;   // [K x n_z]
  numeric::Parameter input_proj_;   // [n_z x d_model]
  numeric::Parameter token_bias_;   // [2 x d_model]: row 0 code bias, row 1 e_MASK
  numeric::Parameter pos_embed_;    // [N x d_model]
  numeric::Parameter class_embed_;  // [(C + 1) x d_model]
  std::vector<numeric::TransformerBlock> spatial_;
  numeric::LayerNorm spatial_norm_;
  numeric::Parameter depth_pos_;    // [D x d_model]
  numeric::Parameter hist_proj_;    // [n_z x d_model]
  std::vector<numeric::TransformerBlock> depth_blocks_;
  numeric::LayerNorm depth_norm_;
  numeric::Linear head_;
};

/// One masked-modeling example. `targets` defaults to `input.base`; giving it
/// separately lets probes change the codes hidden under the mask while the
/// scored targets stay fixed.
struct MaskedExample {
  MaskedCodeSequence input;
  ConditionId condition = ConditionId::null();
  std::optional<CodeStackMap> targets;
};

/// mean over examples of (1 / |m|) sum_{masked n} sum_d -log p(S_nd | S_{n,<d}, S_\m).
/// Every example must mask at least one position.
numeric::Var masked_nll(numeric::Graph& g, const ContextualTransformer& model,
                        std::span<const MaskedExample> batch);

/// ceil(cos(pi r / 2) * N), clamped to [1, N].
std::size_t mask_count(double r, std::size_t n);

/// r ~ U[0, 1), |m| = mask_count(r, N), positions uniform without replacement.
MaskVector sample_training_mask(std::size_t n, numeric::Rng& rng);

/// NULL with probability p_drop. Always consumes exactly one draw.
ConditionId condition_dropout(ConditionId condition, double p_drop, numeric::Rng& rng);

/// Maps (conditional logits, unconditional logits or empty) to a sampling
/// distribution over K codes.
using DistributionFn =
    std::function<std::vector<double>(std::span<const double>, std::span<const double>)>;

/// softmax(logits / temperature); temperature 0 gives a one-hot argmax
/// (lowest index on ties). Unconditional logits are ignored.
DistributionFn tempered_distribution(double temperature = 1.0);

struct StackSample {
  std::vector<Code> codes;
  /// sum_d log q(k_d) under the distribution actually sampled from.
  double log_prob = 0.0;
};

/// Samples stacks for `rows` of `h_cond` depth by depth, feeding each sampled
/// code into the next depth input. `h_uncond`, when non-null, supplies the
/// unconditional context of the same rows for guidance. Draws are made in
/// depth-major, row-minor order from `rng`.
std::vector<StackSample> predict_stacks(const ContextualTransformer& model,
                                        const numeric::Tensor& h_cond,
                                        const numeric::Tensor* h_uncond,
                                        std::span<const std::size_t> rows,
                                        const DistributionFn& distribution, numeric::Rng& rng);

/// Single-position convenience form.
rq::CodeStack predict_stack(const ContextualTransformer& model, std::span<const double> h_n,
                            const DistributionFn& distribution, numeric::Rng& rng);

struct TrainingItem {
  const CodeStackMap* codes = nullptr;
  ConditionId condition = ConditionId::null();
};

struct TransformerStepOptions {
  double lr = 1e-4;
  numeric::AdamWConfig adamw;
  double condition_drop = 0.1;
  bool float_storage = true;
};

/// Samples a training mask and condition dropout per item from `rng`, then
/// takes one AdamW step on masked_nll. Returns the loss.
double transformer_train_step(ContextualTransformer& model, numeric::OptimizerState& state,
                              std::span<const TrainingItem> batch,
                              const TransformerStepOptions& options, numeric::Rng& rng);

}  // namespace draftrevise::transformer
