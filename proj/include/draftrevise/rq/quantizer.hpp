#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "draftrevise/numeric/autograd.hpp"
#include "draftrevise/numeric/rng.hpp"
#include "draftrevise/numeric/tensor.hpp"

namespace draftrevise::rq {

/// Code index in [0, K). Codes are 0-based.
using Code = std::uint32_t;

/// Sentinel stored at every depth of a masked position.
inline constexpr Code kMaskCode = std::numeric_limits<Code>::max();

struct CodebookOptions {
  double decay = 0.99;
  double laplace_eps = 1e-5;
};

/// The single codebook shared by all quantization depths, together with its
/// exponential-moving-average statistics.
class Codebook {
 public:
  /// Empty codebook (K = 0); only useful as a placeholder.
  Codebook() = default;
  /// K zero embeddings of width `dim`; K must be at least 2.
  Codebook(std::size_t size, std::size_t dim, CodebookOptions options = {});
  /// Takes ownership of a [K x dim] embedding table; K must be at least 2.
  explicit Codebook(numeric::Tensor embeddings, CodebookOptions options = {});

  static Codebook gaussian(std::size_t size, std::size_t dim, double stddev, numeric::Rng& rng,
                           CodebookOptions options = {});

  std::size_t size() const { return size_; }
  std::size_t dim() const { return dim_; }
  const CodebookOptions& options() const { return options_; }

  std::span<const double> embedding(Code k) const { return embeddings_.row(k); }
  const numeric::Tensor& embeddings() const { return embeddings_; }
  numeric::Tensor& embeddings() { return embeddings_; }
  const numeric::Tensor& cluster_size() const { return cluster_size_; }
  numeric::Tensor& cluster_size() { return cluster_size_; }
  const numeric::Tensor& embed_sum() const { return embed_sum_; }
  numeric::Tensor& embed_sum() { return embed_sum_; }

  friend bool operator==(const Codebook&, const Codebook&) = default;

 private:
  std::size_t size_ = 0;
  std::size_t dim_ = 0;
  CodebookOptions options_;
  numeric::Tensor embeddings_;
  numeric::Tensor cluster_size_;
  numeric::Tensor embed_sum_;
};

/// Codes (k_1 .. k_D), coarse to fine.
struct CodeStack {
  std::vector<Code> codes;

  std::size_t depth() const { return codes.size(); }
  friend bool operator==(const CodeStack&, const CodeStack&) = default;
};

/// argmin_k ||z - e(k)||^2; the lowest index wins ties.
Code vq_nearest(std::span<const double> z, const Codebook& codebook);

struct RqEncoding {
  CodeStack stack;
  /// r_0 = z, r_d = r_{d-1} - e(k_d); D + 1 entries.
  std::vector<std::vector<double>> residuals;
};

/// Depth-D residual quantization of one vector.
RqEncoding rq_encode(std::span<const double> z, const Codebook& codebook, std::size_t depth);

/// Sum of the first d code embeddings of `stack`; 1 <= d <= depth.
std::vector<double> rq_partial_decode(const CodeStack& stack, const Codebook& codebook,
                                      std::size_t d);

/// All partial sums z_hat^(1) .. z_hat^(D).
std::vector<std::vector<double>> rq_partial_sums(const CodeStack& stack, const Codebook& codebook);

/// sum_d ||z - z_hat^(d)||^2 for one vector. The partial sums are constants;
/// in training the gradient reaches only the encoder side (see autoencoder).
double commitment_loss(std::span<const double> z,
                       const std::vector<std::vector<double>>& partial_sums);

/// Per-batch assignment statistics feeding the EMA update. Assignments from
/// every depth are pooled into the one shared codebook.
class EmaBatch {
 public:
  EmaBatch(std::size_t size, std::size_t dim);

  void add(std::span<const double> residual, Code code);
  /// Adds every (r_{d-1}, k_d) pair of an encoding.
  void add(const RqEncoding& encoding);

  const std::vector<double>& counts() const { return counts_; }
  const numeric::Tensor& sums() const { return sums_; }
  std::size_t assignments() const { return assignments_; }

 private:
  std::vector<double> counts_;
  numeric::Tensor sums_;
  std::size_t assignments_ = 0;
};

/// One EMA step:
///   N_k <- g N_k + (1 - g) n_k,  m_k <- g m_k + (1 - g) sum r,
///   e_k <- m_k / ((N_k + eps) / (sum N + K eps) * sum N).
/// Codes whose EMA count is still exactly zero keep their embedding.
void ema_codebook_update(Codebook& codebook, const EmaBatch& batch);

/// Re-seeds every code whose EMA count is below `threshold` with a residual
/// drawn uniformly from `pool` (rows). The re-seeded code restarts with count
/// 1. Returns the number of codes re-seeded.
std::size_t reseed_dead_codes(Codebook& codebook, const numeric::Tensor& pool, double threshold,
                              numeric::Rng& rng);

/// Quantizer bypass for training: forward value `quantized`, backward
/// gradient copied to `z` unchanged.
numeric::Var straight_through(numeric::Var z, const numeric::Tensor& quantized);

}  // namespace draftrevise::rq
