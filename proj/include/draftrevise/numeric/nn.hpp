#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "draftrevise/numeric/autograd.hpp"
#include "draftrevise/numeric/ops.hpp"
#include "draftrevise/numeric/rng.hpp"

namespace draftrevise::numeric {

using ParameterRefs = std::vector<Parameter*>;
using ConstParameterRefs = std::vector<const Parameter*>;

/// Affine map x . W + b with W [in x out].
struct Linear {
  Linear() = default;
  /// Weights ~ N(0, init_std^2); init_std <= 0 selects 1/sqrt(in). Bias zero.
  Linear(const std::string& name, std::size_t in, std::size_t out, Rng& rng,
         double init_std = 0.0);

  Var operator()(Graph& g, Var x) const;
  std::size_t in() const { return weight.value.shape()[0]; }
  std::size_t out() const { return weight.value.shape()[1]; }
  void collect(ParameterRefs& out);

  Parameter weight;
  Parameter bias;
};

struct LayerNorm {
  LayerNorm() = default;
  LayerNorm(const std::string& name, std::size_t width);

  Var operator()(Graph& g, Var x) const;
  void collect(ParameterRefs& out);

  Parameter gain;
  Parameter bias;
};

/// Pre-norm transformer block:
///   x += W_o . attn(LN1 x);  x += W_2 . gelu(W_1 . LN2 x)
/// No dropout.
struct TransformerBlock {
  TransformerBlock() = default;
  TransformerBlock(const std::string& name, std::size_t d_model, std::size_t heads,
                   std::size_t ff_width, Rng& rng, double init_std);

  Var operator()(Graph& g, Var x, std::size_t seq_len, AttentionMask mask) const;
  void collect(ParameterRefs& out);

  std::size_t heads = 1;
  LayerNorm ln_attn;
  Linear query, key, value, output;
  LayerNorm ln_ff;
  Linear ff_in, ff_out;
};

}  // namespace draftrevise::numeric
