#include "draftrevise/autoencoder/autoencoder.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include "draftrevise/errors.hpp"
#include "draftrevise/numeric/ops.hpp"

namespace draftrevise::autoencoder {

using numeric::Graph;
using numeric::Tensor;
using numeric::Var;

Autoencoder::Autoencoder(const AutoencoderConfig& config, numeric::Rng& rng) : config_(config) {
  if (config.patch == 0 || config.channels == 0 || config.latent_dim == 0 || config.hidden == 0) {
    throw std::invalid_argument("Autoencoder: all dimensions must be positive");
  }
  const std::size_t p = config.patch_width();
  enc_in_ = numeric::Linear("rqvae.enc_in", p, config.hidden, rng);
  enc_out_ = numeric::Linear("rqvae.enc_out", config.hidden, config.latent_dim, rng);
  dec_in_ = numeric::Linear("rqvae.dec_in", config.latent_dim, config.hidden, rng);
  dec_out_ = numeric::Linear("rqvae.dec_out", config.hidden, p, rng);
}

Tensor Autoencoder::patches(const Image& image) const {
  const std::size_t f = config_.patch;
  if (image.channels != config_.channels) {
    throw std::invalid_argument("Autoencoder: expected " + std::to_string(config_.channels) +
                                " channels, got " + std::to_string(image.channels));
  }
  if (image.height == 0 || image.width == 0 || image.height % f != 0 || image.width % f != 0) {
    throw std::invalid_argument("Autoencoder: image " + std::to_string(image.height) + "x" +
                                std::to_string(image.width) + " is not divisible into " +
                                std::to_string(f) + "x" + std::to_string(f) + " patches");
  }
  const std::size_t gh = image.height / f, gw = image.width / f, c = config_.channels;
  Tensor out({gh * gw, config_.patch_width()}, 0.0);
  for (std::size_t ph = 0; ph < gh; ++ph) {
    for (std::size_t pw = 0; pw < gw; ++pw) {
      auto row = out.row(ph * gw + pw);
      std::size_t i = 0;
      for (std::size_t y = 0; y < f; ++y)
        for (std::size_t x = 0; x < f; ++x)
          for (std::size_t ch = 0; ch < c; ++ch) row[i++] = image.at(ph * f + y, pw * f + x, ch);
    }
  }
  return out;
}

Image Autoencoder::assemble(const Tensor& patches, std::size_t grid_h, std::size_t grid_w) const {
  const std::size_t f = config_.patch, c = config_.channels;
  if (patches.rows() != grid_h * grid_w || patches.cols() != config_.patch_width()) {
    throw std::invalid_argument("Autoencoder: patch matrix " + numeric::shape_string(patches.shape()) +
                                " does not match a " + std::to_string(grid_h) + "x" +
                                std::to_string(grid_w) + " grid");
  }
  Image img(grid_h * f, grid_w * f, c);
  for (std::size_t ph = 0; ph < grid_h; ++ph) {
    for (std::size_t pw = 0; pw < grid_w; ++pw) {
      auto row = patches.row(ph * grid_w + pw);
      std::size_t i = 0;
      for (std::size_t y = 0; y < f; ++y)
        for (std::size_t x = 0; x < f; ++x)
          for (std::size_t ch = 0; ch < c; ++ch) img.at(ph * f + y, pw * f + x, ch) = row[i++];
    }
  }
  return img;
}

Var Autoencoder::encode(Graph& g, Var patches) const {
  return enc_out_(g, numeric::gelu(enc_in_(g, patches)));
}

Var Autoencoder::decode(Graph& g, Var latents) const {
  return dec_out_(g, numeric::gelu(dec_in_(g, latents)));
}

FeatureMap Autoencoder::encode(const Image& image) const {
  Tensor p = patches(image);
  Graph g(Graph::Mode::kInference);
  FeatureMap out;
  out.height = image.height / config_.patch;
  out.width = image.width / config_.patch;
  out.values = encode(g, g.constant(std::move(p))).value();
  numeric::require_finite(out.values, "encoder output");
  return out;
}

Image Autoencoder::decode(const FeatureMap& quantized) const {
  if (quantized.values.rank() != 2 || quantized.values.cols() != config_.latent_dim ||
      quantized.values.rows() != quantized.positions() || quantized.positions() == 0) {
    throw std::invalid_argument("Autoencoder::decode: feature map " +
                                numeric::shape_string(quantized.values.shape()) +
                                " does not match a " + std::to_string(quantized.height) + "x" +
                                std::to_string(quantized.width) + " grid of width " +
                                std::to_string(config_.latent_dim));
  }
  Graph g(Graph::Mode::kInference);
  const Tensor& out = decode(g, g.constant(quantized.values)).value();
  numeric::require_finite(out, "decoder output");
  return assemble(out, quantized.height, quantized.width);
}

Image Autoencoder::decode(const CodeStackMap& codes, const rq::Codebook& codebook) const {
  return decode(dequantize(codes, codebook));
}

numeric::ParameterRefs Autoencoder::parameters() {
  numeric::ParameterRefs refs;
  enc_in_.collect(refs);
  enc_out_.collect(refs);
  dec_in_.collect(refs);
  dec_out_.collect(refs);
  return refs;
}

numeric::ConstParameterRefs Autoencoder::parameters() const {
  auto refs = const_cast<Autoencoder*>(this)->parameters();
  return {refs.begin(), refs.end()};
}

QuantizedMap quantize_map(const FeatureMap& z, const rq::Codebook& codebook, std::size_t depth) {
  const std::size_t n = z.positions();
  if (z.values.rows() != n || z.values.cols() != codebook.dim()) {
    throw std::invalid_argument("quantize_map: feature map does not match codebook width");
  }
  QuantizedMap out;
  out.codes = CodeStackMap(z.height, z.width, depth, codebook.size());
  out.quantized = FeatureMap{z.height, z.width, Tensor({n, codebook.dim()}, 0.0)};
  out.partial_sums.assign(depth, Tensor({n, codebook.dim()}, 0.0));
  out.encodings.reserve(n);
  double commit = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    auto zi = z.values.row(i);
    rq::RqEncoding enc = rq::rq_encode(zi, codebook, depth);
    out.codes.set_stack(i, enc.stack.codes);
    // running partial sum z_hat^(d) = z - r_d would differ in round-off from
    // the direct embedding sum; use the sum so decode(codes) matches exactly
    std::vector<double> acc(codebook.dim(), 0.0);
    for (std::size_t d = 0; d < depth; ++d) {
      auto e = codebook.embedding(enc.stack.codes[d]);
      auto row = out.partial_sums[d].row(i);
      for (std::size_t c = 0; c < acc.size(); ++c) {
        acc[c] += e[c];
        row[c] = acc[c];
        const double diff = zi[c] - acc[c];
        commit += diff * diff;
      }
    }
    auto q = out.quantized.values.row(i);
    for (std::size_t c = 0; c < acc.size(); ++c) q[c] = acc[c];
    out.encodings.push_back(std::move(enc));
  }
  out.commitment = commit / static_cast<double>(n * codebook.dim());
  return out;
}

FeatureMap dequantize(const CodeStackMap& codes, const rq::Codebook& codebook) {
  if (!codes.fully_populated()) throw std::invalid_argument("dequantize: map holds MASK codes");
  if (codes.codebook_size() != codebook.size()) {
    throw std::invalid_argument("dequantize: map K does not match codebook");
  }
  FeatureMap out{codes.height(), codes.width(), Tensor({codes.positions(), codebook.dim()}, 0.0)};
  for (std::size_t n = 0; n < codes.positions(); ++n) {
    auto row = out.values.row(n);
    for (Code k : codes.stack(n)) {
      auto e = codebook.embedding(k);
      for (std::size_t c = 0; c < row.size(); ++c) row[c] += e[c];
    }
  }
  return out;
}

Tensor batch_patches(const Autoencoder& model, std::span<const Image> batch) {
  if (batch.empty()) throw std::invalid_argument("batch_patches: empty batch");
  const std::size_t p = model.config().patch_width();
  std::vector<double> all;
  for (const Image& img : batch) {
    Tensor t = model.patches(img);
    all.insert(all.end(), t.values().begin(), t.values().end());
  }
  const std::size_t rows = all.size() / p;
  return Tensor({rows, p}, std::move(all));
}

Var autoencoder_objective(Graph& g, const Autoencoder& model, const rq::Codebook& codebook,
                          const Tensor& patches, std::size_t depth, double beta,
                          QuantizedMap* out, LossBreakdown* parts) {
  if (!(beta > 0.0)) throw std::invalid_argument("autoencoder objective: beta must be positive");
  Var x = g.constant(patches);
  Var z = model.encode(g, x);
  FeatureMap zmap{1, patches.rows(), z.value()};
  QuantizedMap q = quantize_map(zmap, codebook, depth);
  Var zq = rq::straight_through(z, q.quantized.values);
  Var recon = numeric::mse(model.decode(g, zq), x);
  Var commit = numeric::mse(z, g.constant(q.partial_sums[0]));
  for (std::size_t d = 1; d < depth; ++d) {
    commit = numeric::add(commit, numeric::mse(z, g.constant(q.partial_sums[d])));
  }
  Var total = numeric::add(recon, numeric::scale(commit, beta));
  if (parts) {
    parts->reconstruction = recon.value().item();
    parts->commitment = commit.value().item();
    parts->total = total.value().item();
  }
  if (out) *out = std::move(q);
  return total;
}

LossBreakdown autoencoder_train_step(Autoencoder& model, rq::Codebook& codebook,
                                     numeric::OptimizerState& state, std::span<const Image> batch,
                                     const TrainStepOptions& options, std::uint64_t step,
                                     numeric::Rng& rng) {
  const Tensor patches = batch_patches(model, batch);
  auto params = model.parameters();
  for (auto* p : params) p->zero_grad();

  LossBreakdown parts;
  QuantizedMap q;
  {
    Graph g;
    Var loss = autoencoder_objective(g, model, codebook, patches, options.depth, options.beta, &q,
                                     &parts);
    if (!std::isfinite(parts.total)) {
      throw NumericError("autoencoder training: non-finite loss at step " + std::to_string(step));
    }
    g.backward(loss);
  }
  numeric::adamw_step(params, state, options.adamw, options.lr);

  rq::EmaBatch ema(codebook.size(), codebook.dim());
  Tensor pool({q.encodings.size() * options.depth, codebook.dim()}, 0.0);
  std::size_t row = 0;
  for (const auto& enc : q.encodings) {
    ema.add(enc);
    for (std::size_t d = 0; d < options.depth; ++d, ++row) {
      auto dst = pool.row(row);
      for (std::size_t c = 0; c < dst.size(); ++c) dst[c] = enc.residuals[d][c];
    }
  }
  rq::ema_codebook_update(codebook, ema);
  if (step == 0 || step >= options.warmup) {
    parts.reseeded = rq::reseed_dead_codes(codebook, pool, options.dead_code_threshold, rng);
  }

  if (options.float_storage) {
    for (auto* p : params) numeric::round_to_float(p->value);
    for (auto& m : state.first_moment) numeric::round_to_float(m);
    for (auto& v : state.second_moment) numeric::round_to_float(v);
    numeric::round_to_float(codebook.embeddings());
    numeric::round_to_float(codebook.cluster_size());
    numeric::round_to_float(codebook.embed_sum());
  }
  for (auto* p : params) numeric::require_finite(p->value, "autoencoder parameters");
  numeric::require_finite(codebook.embeddings(), "codebook embeddings");
  return parts;
}

}  // namespace draftrevise::autoencoder
