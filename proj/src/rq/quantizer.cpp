#include "draftrevise/rq/quantizer.hpp"

#include <stdexcept>
#include <string>

#include "draftrevise/numeric/ops.hpp"

namespace draftrevise::rq {

namespace {

void check_size(std::size_t size) {
  if (size < 2) {
    throw std::invalid_argument("Codebook: at least 2 codes required, got " +
                                std::to_string(size));
  }
}

double squared_distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

}  // namespace

Codebook::Codebook(std::size_t size, std::size_t dim, CodebookOptions options)
    : Codebook(numeric::Tensor({size, dim}, 0.0), options) {}

Codebook::Codebook(numeric::Tensor embeddings, CodebookOptions options)
    : size_(embeddings.rank() == 2 ? embeddings.shape()[0] : 0),
      dim_(embeddings.rank() == 2 ? embeddings.shape()[1] : 0),
      options_(options),
      embeddings_(std::move(embeddings)),
      cluster_size_({size_}, 0.0),
      embed_sum_({size_, dim_}, 0.0) {
  check_size(size_);
  if (dim_ == 0) throw std::invalid_argument("Codebook: embedding width must be positive");
  if (!(options_.decay > 0.0 && options_.decay < 1.0)) {
    throw std::invalid_argument("Codebook: EMA decay must lie in (0, 1)");
  }
  if (!(options_.laplace_eps > 0.0)) {
    throw std::invalid_argument("Codebook: Laplace epsilon must be positive");
  }
  numeric::require_finite(embeddings_, "codebook embeddings");
}

Codebook Codebook::gaussian(std::size_t size, std::size_t dim, double stddev, numeric::Rng& rng,
                            CodebookOptions options) {
  numeric::Tensor e({size, dim}, 0.0);
  for (double& v : e.values()) v = stddev * rng.normal();
  return Codebook(std::move(e), options);
}

Code vq_nearest(std::span<const double> z, const Codebook& codebook) {
  if (codebook.size() == 0) throw std::invalid_argument("vq_nearest: empty codebook");
  if (z.size() != codebook.dim()) {
    throw std::invalid_argument("vq_nearest: vector width " + std::to_string(z.size()) +
                                " does not match codebook width " +
                                std::to_string(codebook.dim()));
  }
  Code best = 0;
  double best_distance = squared_distance(z, codebook.embedding(0));
  for (Code k = 1; k < codebook.size(); ++k) {
    const double d = squared_distance(z, codebook.embedding(k));
    if (d < best_distance) {
      best_distance = d;
      best = k;
    }
  }
  return best;
}

RqEncoding rq_encode(std::span<const double> z, const Codebook& codebook, std::size_t depth) {
  if (depth == 0) throw std::invalid_argument("rq_encode: depth must be at least 1");
  RqEncoding out;
  out.stack.codes.reserve(depth);
  out.residuals.reserve(depth + 1);
  out.residuals.emplace_back(z.begin(), z.end());
  for (std::size_t d = 0; d < depth; ++d) {
    const std::vector<double>& r = out.residuals.back();
    const Code k = vq_nearest(r, codebook);
    auto e = codebook.embedding(k);
    std::vector<double> next(r.size());
    for (std::size_t i = 0; i < r.size(); ++i) next[i] = r[i] - e[i];
    out.stack.codes.push_back(k);
    out.residuals.push_back(std::move(next));
  }
  return out;
}

std::vector<double> rq_partial_decode(const CodeStack& stack, const Codebook& codebook,
                                      std::size_t d) {
  if (d < 1 || d > stack.depth()) {
    throw std::out_of_range("rq_partial_decode: depth " + std::to_string(d) + " outside [1, " +
                            std::to_string(stack.depth()) + "]");
  }
  std::vector<double> out(codebook.dim(), 0.0);
  for (std::size_t i = 0; i < d; ++i) {
    const Code k = stack.codes[i];
    if (k >= codebook.size()) throw std::out_of_range("rq_partial_decode: code out of range");
    auto e = codebook.embedding(k);
    for (std::size_t c = 0; c < out.size(); ++c) out[c] += e[c];
  }
  return out;
}

std::vector<std::vector<double>> rq_partial_sums(const CodeStack& stack,
                                                 const Codebook& codebook) {
  std::vector<std::vector<double>> sums;
  sums.reserve(stack.depth());
  for (std::size_t d = 1; d <= stack.depth(); ++d) {
    sums.push_back(rq_partial_decode(stack, codebook, d));
  }
  return sums;
}

double commitment_loss(std::span<const double> z,
                       const std::vector<std::vector<double>>& partial_sums) {
  double loss = 0.0;
  for (const auto& zhat : partial_sums) {
    if (zhat.size() != z.size()) throw std::invalid_argument("commitment_loss: width mismatch");
    loss += squared_distance(z, zhat);
  }
  return loss;
}

EmaBatch::EmaBatch(std::size_t size, std::size_t dim) : counts_(size, 0.0), sums_({size, dim}, 0.0) {}

void EmaBatch::add(std::span<const double> residual, Code code) {
  if (code >= counts_.size()) throw std::out_of_range("EmaBatch: code out of range");
  if (residual.size() != sums_.cols()) throw std::invalid_argument("EmaBatch: width mismatch");
  counts_[code] += 1.0;
  auto row = sums_.row(code);
  for (std::size_t c = 0; c < row.size(); ++c) row[c] += residual[c];
  ++assignments_;
}

void EmaBatch::add(const RqEncoding& encoding) {
  for (std::size_t d = 0; d < encoding.stack.depth(); ++d) {
    add(encoding.residuals[d], encoding.stack.codes[d]);
  }
}

void ema_codebook_update(Codebook& codebook, const EmaBatch& batch) {
  const std::size_t k = codebook.size();
  if (batch.counts().size() != k || batch.sums().cols() != codebook.dim()) {
    throw std::invalid_argument("ema_codebook_update: batch does not match codebook");
  }
  const double g = codebook.options().decay;
  const double eps = codebook.options().laplace_eps;
  numeric::Tensor& cluster = codebook.cluster_size();
  numeric::Tensor& sums = codebook.embed_sum();
  double total = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    cluster[i] = g * cluster[i] + (1.0 - g) * batch.counts()[i];
    auto s = sums.row(i);
    auto b = batch.sums().row(i);
    for (std::size_t c = 0; c < s.size(); ++c) s[c] = g * s[c] + (1.0 - g) * b[c];
    total += cluster[i];
  }
  for (std::size_t i = 0; i < k; ++i) {
    if (cluster[i] == 0.0) continue;
    const double smoothed = (cluster[i] + eps) / (total + static_cast<double>(k) * eps) * total;
    auto e = codebook.embeddings().row(i);
    auto s = sums.row(i);
    for (std::size_t c = 0; c < e.size(); ++c) e[c] = s[c] / smoothed;
  }
}

std::size_t reseed_dead_codes(Codebook& codebook, const numeric::Tensor& pool, double threshold,
                              numeric::Rng& rng) {
  if (pool.rows() == 0) return 0;
  if (pool.cols() != codebook.dim()) throw std::invalid_argument("reseed_dead_codes: width mismatch");
  std::size_t reseeded = 0;
  for (std::size_t i = 0; i < codebook.size(); ++i) {
    if (codebook.cluster_size()[i] >= threshold) continue;
    auto src = pool.row(rng.below(pool.rows()));
    auto e = codebook.embeddings().row(i);
    auto s = codebook.embed_sum().row(i);
    for (std::size_t c = 0; c < e.size(); ++c) e[c] = s[c] = src[c];
    codebook.cluster_size()[i] = 1.0;
    ++reseeded;
  }
  return reseeded;
}

numeric::Var straight_through(numeric::Var z, const numeric::Tensor& quantized) {
  return numeric::pass_through(z, quantized);
}

}  // namespace draftrevise::rq
