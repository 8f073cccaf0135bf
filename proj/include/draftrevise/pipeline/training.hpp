#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "draftrevise/autoencoder/autoencoder.hpp"
#include "draftrevise/pipeline/config.hpp"
#include "draftrevise/pipeline/data.hpp"
#include "draftrevise/pipeline/io.hpp"
#include "draftrevise/transformer/model.hpp"

namespace draftrevise::pipeline {

/// Seed for one purpose (init, data, steps, ...) derived from the run seed.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t purpose);

namespace purpose {
inline constexpr std::uint64_t kTrainData = 1;
inline constexpr std::uint64_t kHeldoutData = 2;
inline constexpr std::uint64_t kRqvaeInit = 3;
inline constexpr std::uint64_t kRqvaeSteps = 4;
inline constexpr std::uint64_t kTransformerInit = 5;
inline constexpr std::uint64_t kTransformerSteps = 6;
inline constexpr std::uint64_t kSampling = 7;
inline constexpr std::uint64_t kEval = 8;
}  // namespace purpose

std::vector<Sprite> training_sprites(const RunConfig& c);
std::vector<Sprite> heldout_sprites(const RunConfig& c);
std::vector<Image> images_of(std::span<const Sprite> sprites);
SyntheticCodes synthetic_codes(const RunConfig& c);

struct RqvaeState {
  RunConfig config;
  autoencoder::Autoencoder model;
  rq::Codebook codebook;
  numeric::OptimizerState optimizer;
  std::uint64_t step = 0;
};

RqvaeState init_rqvae(const RunConfig& c);
Checkpoint to_checkpoint(const RqvaeState& s);
/// The run config comes from the checkpoint's snapshot.
RqvaeState rqvae_from_checkpoint(const Checkpoint& ck);
RqvaeState load_rqvae(const std::string& path);

struct RqvaeRow {
  std::uint64_t step = 0;
  double lr = 0.0;
  autoencoder::LossBreakdown loss;
};

/// Continues from s.step up to min(stop_at, rqvae_steps). Each step draws its
/// batch and re-seeding from an Rng keyed by (seed, step), so stopping and
/// resuming reproduces an uninterrupted run.
void train_rqvae(RqvaeState& s, std::span<const Image> data, std::uint64_t stop_at,
                 const std::function<void(const RqvaeRow&)>& log = {});

/// Encoder plus residual quantization at the configured depth; H/f x W/f grid.
CodeStackMap encode_codes(const RqvaeState& s, const Image& image);
Image decode_codes(const RqvaeState& s, const CodeStackMap& codes);
/// Mean squared pixel error of encode -> quantize -> decode.
double reconstruction_mse(const RqvaeState& s, std::span<const Image> images);

/// Training or held-out code maps: quantized sprites (rqvae required) or
/// samples of the synthetic distribution.
std::vector<LabeledCodes> code_dataset(const RunConfig& c, const RqvaeState* rqvae, bool heldout);

struct TransformerState {
  RunConfig config;
  transformer::ContextualTransformer model;
  numeric::OptimizerState optimizer;
  std::uint64_t step = 0;
};

/// For sprites the code embeddings start from the autoencoder codebook;
/// ConfigError when K, D or n_z disagree with it.
TransformerState init_transformer(const RunConfig& c, const RqvaeState* rqvae);
Checkpoint to_checkpoint(const TransformerState& s);
TransformerState transformer_from_checkpoint(const Checkpoint& ck);
TransformerState load_transformer(const std::string& path);

struct TransformerRow {
  std::uint64_t step = 0;
  double lr = 0.0;
  double loss = 0.0;
};

void train_transformer(TransformerState& s, std::span<const LabeledCodes> data, std::uint64_t stop_at,
                       const std::function<void(const TransformerRow&)>& log = {});

/// Same positions, new grid shape.
CodeStackMap reshape(const CodeStackMap& m, std::size_t height, std::size_t width);

}  // namespace draftrevise::pipeline
