#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "draftrevise/numeric/autograd.hpp"
#include "draftrevise/numeric/tensor.hpp"

namespace draftrevise::numeric {

// Differentiable operations. Unless noted, inputs are viewed as matrices
// (rows x cols, see Tensor) and shapes must match exactly.

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double factor);

/// Adds a length-cols vector to every row.
Var add_bias(Var x, Var bias);

/// [R x K] . [K x N] -> [R x N]; `b` must be rank 2.
Var matmul(Var a, Var b);

/// x . weight + bias, weight [in x out], bias [out].
Var linear(Var x, Var weight, Var bias);

/// Exact GELU: 0.5 x (1 + erf(x / sqrt 2)).
Var gelu(Var x);

/// Row-wise normalization to zero mean and unit variance, then gain/bias.
Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5);

/// Row-wise softmax with max subtraction.
Var softmax(Var x);

enum class AttentionMask { kFull, kCausal };

struct AttentionSpec {
  std::size_t seq_len = 1;
  std::size_t heads = 1;
  AttentionMask mask = AttentionMask::kFull;
  /// Optional seq_len x seq_len override; nonzero entries mark keys a query may
  /// attend to. Takes precedence over `mask` when non-empty.
  std::vector<std::uint8_t> allowed;
};

/// Multi-head scaled dot-product attention over groups of `seq_len` rows.
/// q, k, v are [groups*seq_len x d_model]; d_model must divide by `heads`.
/// Throws std::invalid_argument if some query row has no allowed key.
Var attention(Var q, Var k, Var v, const AttentionSpec& spec);

/// Row gather; index -1 yields a zero row.
Var gather_rows(Var table, std::vector<std::ptrdiff_t> index);

/// Output row i is the sum of table rows listed in lists[i] (empty -> zeros).
Var gather_sum(Var table, std::vector<std::vector<std::size_t>> lists);

/// Sum over rows r of weight[r] * -log softmax(logits_r)[target_r].
/// An empty `weights` span means all ones.
Var cross_entropy(Var logits, std::span<const std::size_t> targets,
                  std::span<const double> weights = {});

/// Soft-target form: -sum_r sum_k target[r,k] log softmax(logits_r)_k.
/// Each target row must be a distribution.
Var cross_entropy(Var logits, const Tensor& target);

Var sum(Var x);
Var mean(Var x);

/// mean((a - b)^2)
Var mse(Var a, Var b);

/// Forward value is `replacement`; the backward pass copies the incoming
/// gradient to `x` unchanged.
Var pass_through(Var x, const Tensor& replacement);

/// Same value as `x`, detached from the tape.
Var stop_gradient(Var x);

// Plain evaluations (no tape).

std::vector<double> softmax(std::span<const double> logits);
std::vector<double> log_softmax(std::span<const double> logits);
double log_sum_exp(std::span<const double> logits);
double cross_entropy_from_logits(std::span<const double> logits, std::size_t target);

// Dense kernels shared by ops and callers that bypass the tape.

/// c[R x N] += a[R x K] . b[K x N]
void gemm_accumulate(const double* a, const double* b, double* c, std::size_t r,
                     std::size_t k, std::size_t n);
/// c[R x K] += a[R x N] . b[K x N]^T
void gemm_nt_accumulate(const double* a, const double* b, double* c, std::size_t r,
                        std::size_t n, std::size_t k);
/// c[K x N] += a[R x K]^T . b[R x N]
void gemm_tn_accumulate(const double* a, const double* b, double* c, std::size_t r,
                        std::size_t k, std::size_t n);

}  // namespace draftrevise::numeric
