#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "draftrevise/autoencoder/code_map.hpp"
#include "draftrevise/numeric/nn.hpp"
#include "draftrevise/numeric/optim.hpp"
#include "draftrevise/rq/quantizer.hpp"

namespace draftrevise::autoencoder {

/// Row-major H x W x C image; pixel values nominally in [0, 1].
struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 0;
  std::vector<double> pixels;

  Image() = default;
  Image(std::size_t h, std::size_t w, std::size_t c, double fill = 0.0)
      : height(h), width(w), channels(c), pixels(h * w * c, fill) {}

  double& at(std::size_t y, std::size_t x, std::size_t c) { return pixels[(y * width + x) * channels + c]; }
  double at(std::size_t y, std::size_t x, std::size_t c) const {
    return pixels[(y * width + x) * channels + c];
  }
  friend bool operator==(const Image&, const Image&) = default;
};

/// H x W grid of n_z-dimensional vectors; values is [H*W x n_z] in raster order.
struct FeatureMap {
  std::size_t height = 0;
  std::size_t width = 0;
  numeric::Tensor values;

  std::size_t positions() const { return height * width; }
  friend bool operator==(const FeatureMap&, const FeatureMap&) = default;
};

struct AutoencoderConfig {
  std::size_t patch = 4;      // downsampling factor f
  std::size_t channels = 3;
  std::size_t latent_dim = 16;  // n_z
  std::size_t hidden = 64;

  std::size_t patch_width() const { return patch * patch * channels; }
};

/// Patch encoder/decoder. Each f x f patch is flattened and mapped by
///   enc: Linear -> GELU -> Linear  (f*f*C -> hidden -> n_z)
///   dec: Linear -> GELU -> Linear  (n_z -> hidden -> f*f*C)
/// so a feature vector depends only on its own patch.
class Autoencoder {
 public:
  Autoencoder() = default;
  Autoencoder(const AutoencoderConfig& config, numeric::Rng& rng);

  const AutoencoderConfig& config() const { return config_; }

  /// [positions x f*f*C] patch matrix. Throws std::invalid_argument when the
  /// image is not divisible into patches or has the wrong channel count.
  numeric::Tensor patches(const Image& image) const;
  Image assemble(const numeric::Tensor& patches, std::size_t grid_h, std::size_t grid_w) const;

  numeric::Var encode(numeric::Graph& g, numeric::Var patches) const;
  numeric::Var decode(numeric::Graph& g, numeric::Var latents) const;

  FeatureMap encode(const Image& image) const;
  /// Throws std::invalid_argument on a latent width or row-count mismatch.
  Image decode(const FeatureMap& quantized) const;
  /// Sum of code embeddings per stack; the map must be fully populated.
  Image decode(const CodeStackMap& codes, const rq::Codebook& codebook) const;

  numeric::ParameterRefs parameters();
  numeric::ConstParameterRefs parameters() const;

 private:
  AutoencoderConfig config_;
  numeric::Linear enc_in_, enc_out_, dec_in_, dec_out_;
};

struct QuantizedMap {
  CodeStackMap codes;
  /// z_hat^(D) per position.
  FeatureMap quantized;
  /// z_hat^(d) for d = 1..D, each [positions x n_z].
  std::vector<numeric::Tensor> partial_sums;
  /// Per-position encodings, kept for EMA statistics.
  std::vector<rq::RqEncoding> encodings;
  /// mean over positions and channels of sum_d (z - z_hat^(d))^2.
  double commitment = 0.0;
};

QuantizedMap quantize_map(const FeatureMap& z, const rq::Codebook& codebook, std::size_t depth);

/// Embedding sum per stack as a feature map.
FeatureMap dequantize(const CodeStackMap& codes, const rq::Codebook& codebook);

struct LossBreakdown {
  double total = 0.0;
  double reconstruction = 0.0;
  double commitment = 0.0;
  std::size_t reseeded = 0;
};

/// Records reconstruction + beta * commitment for a stack of patch rows.
/// The quantizer is bypassed with straight_through; the commitment term sees
/// the partial sums as constants, so its gradient reaches only the encoder.
/// `out`, when given, receives the quantization of the batch.
numeric::Var autoencoder_objective(numeric::Graph& g, const Autoencoder& model,
                                   const rq::Codebook& codebook, const numeric::Tensor& patches,
                                   std::size_t depth, double beta, QuantizedMap* out = nullptr,
                                   LossBreakdown* parts = nullptr);

struct TrainStepOptions {
  double beta = 0.25;
  std::size_t depth = 4;
  double lr = 1e-3;
  numeric::AdamWConfig adamw;
  double dead_code_threshold = 0.1;
  /// Dead-code re-seeding starts at this step. Step 0 always seeds the whole
  /// codebook from batch residuals.
  std::uint64_t warmup = 100;
  /// Snap parameters, moments and codebook state to the float grid.
  bool float_storage = true;
};

/// One optimizer step over `batch`: AdamW on encoder/decoder, then the EMA
/// codebook update and dead-code re-seeding. `step` is the 0-based global
/// step; `rng` drives re-seeding only. Throws NumericError on a non-finite loss.
LossBreakdown autoencoder_train_step(Autoencoder& model, rq::Codebook& codebook,
                                     numeric::OptimizerState& state,
                                     std::span<const Image> batch,
                                     const TrainStepOptions& options, std::uint64_t step,
                                     numeric::Rng& rng);

/// Stacked patch rows of several images.
numeric::Tensor batch_patches(const Autoencoder& model, std::span<const Image> batch);

}  // namespace draftrevise::autoencoder
