#include "draftrevise/numeric/nn.hpp"

#include <cmath>

namespace draftrevise::numeric {

namespace {

Tensor gaussian(Shape shape, double stddev, Rng& rng) {
  Tensor t(std::move(shape), 0.0);
  for (double& v : t.values()) v = stddev * rng.normal();
  return t;
}

}  // namespace

Linear::Linear(const std::string& name, std::size_t in, std::size_t out, Rng& rng,
               double init_std)
    : weight(name + ".weight",
             gaussian({in, out}, init_std > 0.0 ? init_std : 1.0 / std::sqrt(double(in)), rng)),
      bias(name + ".bias", Tensor(Shape{out}, 0.0)) {}

Var Linear::operator()(Graph& g, Var x) const {
  return linear(x, g.param(weight), g.param(bias));
}

void Linear::collect(ParameterRefs& out) {
  out.push_back(&weight);
  out.push_back(&bias);
}

LayerNorm::LayerNorm(const std::string& name, std::size_t width)
    : gain(name + ".gain", Tensor(Shape{width}, 1.0)),
      bias(name + ".bias", Tensor(Shape{width}, 0.0)) {}

Var LayerNorm::operator()(Graph& g, Var x) const {
  return layer_norm(x, g.param(gain), g.param(bias));
}

void LayerNorm::collect(ParameterRefs& out) {
  out.push_back(&gain);
  out.push_back(&bias);
}

TransformerBlock::TransformerBlock(const std::string& name, std::size_t d_model,
                                   std::size_t heads_, std::size_t ff_width, Rng& rng,
                                   double init_std)
    : heads(heads_),
      ln_attn(name + ".ln_attn", d_model),
      query(name + ".query", d_model, d_model, rng, init_std),
      key(name + ".key", d_model, d_model, rng, init_std),
      value(name + ".value", d_model, d_model, rng, init_std),
      output(name + ".output", d_model, d_model, rng, init_std),
      ln_ff(name + ".ln_ff", d_model),
      ff_in(name + ".ff_in", d_model, ff_width, rng, init_std),
      ff_out(name + ".ff_out", ff_width, d_model, rng, init_std) {}

Var TransformerBlock::operator()(Graph& g, Var x, std::size_t seq_len,
                                 AttentionMask mask) const {
  Var a = ln_attn(g, x);
  AttentionSpec spec;
  spec.seq_len = seq_len;
  spec.heads = heads;
  spec.mask = mask;
  Var attended = attention(query(g, a), key(g, a), value(g, a), spec);
  x = add(x, output(g, attended));
  Var f = ff_out(g, gelu(ff_in(g, ln_ff(g, x))));
  return add(x, f);
}

void TransformerBlock::collect(ParameterRefs& out) {
  ln_attn.collect(out);
  query.collect(out);
  key.collect(out);
  value.collect(out);
  output.collect(out);
  ln_ff.collect(out);
  ff_in.collect(out);
  ff_out.collect(out);
}

}  // namespace draftrevise::numeric
