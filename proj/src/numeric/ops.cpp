#include "draftrevise/numeric/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <numbers>
#include <stdexcept>
#include <string>

#include "draftrevise/errors.hpp"

namespace draftrevise::numeric {

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_string(a.shape()) +
                                " vs " + shape_string(b.shape()));
  }
}

void require_finite_input(std::span<const double> xs, const char* op) {
  for (double x : xs) {
    if (!std::isfinite(x)) throw NumericError(std::string(op) + ": non-finite input");
  }
}

Shape with_last_dim(const Shape& shape, std::size_t last) {
  Shape out = shape.empty() ? Shape{1} : shape;
  out.back() = last;
  return out;
}

void accumulate(Tensor* dst, const Tensor& src, double factor = 1.0) {
  if (!dst) return;
  double* d = dst->data();
  const double* s = src.data();
  for (std::size_t i = 0; i < src.size(); ++i) d[i] += factor * s[i];
}

}  // namespace

// Kernels ------------------------------------------------------------------

void gemm_accumulate(const double* a, const double* b, double* c, std::size_t r,
                     std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < r; ++i) {
    double* __restrict crow = c + i * n;
    const double* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = arow[p];
      const double* __restrict brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
  }
}

void gemm_nt_accumulate(const double* a, const double* b, double* c, std::size_t r,
                        std::size_t n, std::size_t k) {
  std::vector<double> bt(n * k);
  for (std::size_t p = 0; p < k; ++p) {
    for (std::size_t j = 0; j < n; ++j) bt[j * k + p] = b[p * n + j];
  }
  gemm_accumulate(a, bt.data(), c, r, n, k);
}

void gemm_tn_accumulate(const double* a, const double* b, double* c, std::size_t r,
                        std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < r; ++i) {
    const double* arow = a + i * k;
    const double* __restrict brow = b + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = arow[p];
      double* __restrict crow = c + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
  }
}

// Elementwise ----------------------------------------------------------------

Var add(Var a, Var b) {
  Graph& g = a.graph();
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_same_shape(av, bv, "add");
  Tensor out = av;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return g.record(std::move(out), {a, b}, [a, b](Graph& gr, const Tensor& go, const Tensor&) {
    accumulate(gr.grad_buffer(a), go);
    accumulate(gr.grad_buffer(b), go);
  });
}

Var sub(Var a, Var b) {
  Graph& g = a.graph();
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_same_shape(av, bv, "sub");
  Tensor out = av;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  return g.record(std::move(out), {a, b}, [a, b](Graph& gr, const Tensor& go, const Tensor&) {
    accumulate(gr.grad_buffer(a), go);
    accumulate(gr.grad_buffer(b), go, -1.0);
  });
}

Var mul(Var a, Var b) {
  Graph& g = a.graph();
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_same_shape(av, bv, "mul");
  Tensor out = av;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return g.record(std::move(out), {a, b}, [a, b](Graph& gr, const Tensor& go, const Tensor&) {
    const Tensor& av2 = gr.value(a);
    const Tensor& bv2 = gr.value(b);
    if (Tensor* ga = gr.grad_buffer(a)) {
      for (std::size_t i = 0; i < go.size(); ++i) (*ga)[i] += go[i] * bv2[i];
    }
    if (Tensor* gb = gr.grad_buffer(b)) {
      for (std::size_t i = 0; i < go.size(); ++i) (*gb)[i] += go[i] * av2[i];
    }
  });
}

Var scale(Var a, double factor) {
  Tensor out = a.value();
  for (double& x : out.values()) x *= factor;
  return a.graph().record(std::move(out), {a},
                          [a, factor](Graph& gr, const Tensor& go, const Tensor&) {
                            accumulate(gr.grad_buffer(a), go, factor);
                          });
}

Var add_bias(Var x, Var bias) {
  const Tensor& xv = x.value();
  const Tensor& bv = bias.value();
  const std::size_t cols = xv.cols();
  if (bv.size() != cols) {
    throw std::invalid_argument("add_bias: bias " + shape_string(bv.shape()) + " vs input " +
                                shape_string(xv.shape()));
  }
  Tensor out = xv;
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto row = out.row(r);
    for (std::size_t c = 0; c < cols; ++c) row[c] += bv[c];
  }
  return x.graph().record(std::move(out), {x, bias},
                          [x, bias](Graph& gr, const Tensor& go, const Tensor&) {
                            accumulate(gr.grad_buffer(x), go);
                            if (Tensor* gb = gr.grad_buffer(bias)) {
                              const std::size_t n = go.cols();
                              for (std::size_t r = 0; r < go.rows(); ++r) {
                                for (std::size_t c = 0; c < n; ++c) (*gb)[c] += go[r * n + c];
                              }
                            }
                          });
}

// Matrix products ------------------------------------------------------------

namespace {

void check_matmul(const Tensor& av, const Tensor& bv, const char* op) {
  if (bv.rank() != 2 || av.cols() != bv.shape()[0]) {
    throw std::invalid_argument(std::string(op) + ": cannot multiply " + shape_string(av.shape()) +
                                " by " + shape_string(bv.shape()));
  }
}

void matmul_backward(Graph& gr, Var a, Var b, const Tensor& go) {
  const Tensor& av = gr.value(a);
  const Tensor& bv = gr.value(b);
  const std::size_t r = av.rows();
  const std::size_t k = av.cols();
  const std::size_t n = bv.shape()[1];
  if (Tensor* ga = gr.grad_buffer(a)) gemm_nt_accumulate(go.data(), bv.data(), ga->data(), r, n, k);
  if (Tensor* gb = gr.grad_buffer(b)) gemm_tn_accumulate(av.data(), go.data(), gb->data(), r, k, n);
}

}  // namespace

Var matmul(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  check_matmul(av, bv, "matmul");
  const std::size_t n = bv.shape()[1];
  Tensor out(with_last_dim(av.shape(), n), 0.0);
  gemm_accumulate(av.data(), bv.data(), out.data(), av.rows(), av.cols(), n);
  return a.graph().record(std::move(out), {a, b},
                          [a, b](Graph& gr, const Tensor& go, const Tensor&) {
                            matmul_backward(gr, a, b, go);
                          });
}

Var linear(Var x, Var weight, Var bias) {
  const Tensor& xv = x.value();
  const Tensor& wv = weight.value();
  const Tensor& bv = bias.value();
  check_matmul(xv, wv, "linear");
  const std::size_t n = wv.shape()[1];
  if (bv.size() != n) throw std::invalid_argument("linear: bias length mismatch");
  Tensor out(with_last_dim(xv.shape(), n), 0.0);
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto row = out.row(r);
    for (std::size_t c = 0; c < n; ++c) row[c] = bv[c];
  }
  gemm_accumulate(xv.data(), wv.data(), out.data(), xv.rows(), xv.cols(), n);
  return x.graph().record(std::move(out), {x, weight, bias},
                          [x, weight, bias](Graph& gr, const Tensor& go, const Tensor&) {
                            matmul_backward(gr, x, weight, go);
                            if (Tensor* gb = gr.grad_buffer(bias)) {
                              const std::size_t cols = go.cols();
                              for (std::size_t r = 0; r < go.rows(); ++r) {
                                for (std::size_t c = 0; c < cols; ++c) {
                                  (*gb)[c] += go[r * cols + c];
                                }
                              }
                            }
                          });
}

// Nonlinearities -------------------------------------------------------------

Var gelu(Var x) {
  Tensor out = x.value();
  for (double& v : out.values()) v = 0.5 * v * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0));
  return x.graph().record(std::move(out), {x}, [x](Graph& gr, const Tensor& go, const Tensor&) {
    Tensor* gx = gr.grad_buffer(x);
    const Tensor& xv = gr.value(x);
    const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
    for (std::size_t i = 0; i < go.size(); ++i) {
      const double v = xv[i];
      const double cdf = 0.5 * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0));
      const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
      (*gx)[i] += go[i] * (cdf + v * pdf);
    }
  });
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
  const Tensor& xv = x.value();
  const std::size_t cols = xv.cols();
  if (cols == 0) throw std::invalid_argument("layer_norm: empty rows");
  if (gain.value().size() != cols || bias.value().size() != cols) {
    throw std::invalid_argument("layer_norm: gain/bias length mismatch");
  }
  require_finite_input(xv.values(), "layer_norm");
  const Tensor& gv = gain.value();
  const Tensor& bv = bias.value();
  Tensor out(xv.shape(), 0.0);
  for (std::size_t r = 0; r < xv.rows(); ++r) {
    auto in = xv.row(r);
    auto o = out.row(r);
    double mu = 0.0;
    for (double v : in) mu += v;
    mu /= static_cast<double>(cols);
    double var = 0.0;
    for (double v : in) var += (v - mu) * (v - mu);
    var /= static_cast<double>(cols);
    const double inv = 1.0 / std::sqrt(var + eps);
    for (std::size_t c = 0; c < cols; ++c) o[c] = (in[c] - mu) * inv * gv[c] + bv[c];
  }
  return x.graph().record(
      std::move(out), {x, gain, bias},
      [x, gain, bias, eps](Graph& gr, const Tensor& go, const Tensor&) {
        const Tensor& xv2 = gr.value(x);
        const Tensor& gv2 = gr.value(gain);
        Tensor* gx = gr.grad_buffer(x);
        Tensor* gg = gr.grad_buffer(gain);
        Tensor* gb = gr.grad_buffer(bias);
        const std::size_t n = xv2.cols();
        const double dn = static_cast<double>(n);
        std::vector<double> xhat(n), gxhat(n);
        for (std::size_t r = 0; r < xv2.rows(); ++r) {
          auto in = xv2.row(r);
          double mu = 0.0;
          for (double v : in) mu += v;
          mu /= dn;
          double var = 0.0;
          for (double v : in) var += (v - mu) * (v - mu);
          var /= dn;
          const double inv = 1.0 / std::sqrt(var + eps);
          double mean_g = 0.0;
          double mean_gx = 0.0;
          for (std::size_t c = 0; c < n; ++c) {
            xhat[c] = (in[c] - mu) * inv;
            const double gor = go[r * n + c];
            gxhat[c] = gor * gv2[c];
            mean_g += gxhat[c];
            mean_gx += gxhat[c] * xhat[c];
            if (gg) (*gg)[c] += gor * xhat[c];
            if (gb) (*gb)[c] += gor;
          }
          mean_g /= dn;
          mean_gx /= dn;
          if (gx) {
            for (std::size_t c = 0; c < n; ++c) {
              (*gx)[r * n + c] += inv * (gxhat[c] - mean_g - xhat[c] * mean_gx);
            }
          }
        }
      });
}

// Softmax family -------------------------------------------------------------

double log_sum_exp(std::span<const double> logits) {
  require_finite_input(logits, "log_sum_exp");
  if (logits.empty()) throw std::invalid_argument("log_sum_exp: empty input");
  const double m = *std::max_element(logits.begin(), logits.end());
  double s = 0.0;
  for (double v : logits) s += std::exp(v - m);
  return m + std::log(s);
}

std::vector<double> softmax(std::span<const double> logits) {
  require_finite_input(logits, "softmax");
  if (logits.empty()) throw std::invalid_argument("softmax: empty input");
  const double m = *std::max_element(logits.begin(), logits.end());
  std::vector<double> out(logits.size());
  double s = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - m);
    s += out[i];
  }
  for (double& v : out) v /= s;
  return out;
}

std::vector<double> log_softmax(std::span<const double> logits) {
  const double lse = log_sum_exp(logits);
  std::vector<double> out(logits.begin(), logits.end());
  for (double& v : out) v -= lse;
  return out;
}

double cross_entropy_from_logits(std::span<const double> logits, std::size_t target) {
  if (target >= logits.size()) {
    throw std::out_of_range("cross_entropy: target " + std::to_string(target) + " outside [0, " +
                            std::to_string(logits.size()) + ")");
  }
  return log_sum_exp(logits) - logits[target];
}

Var softmax(Var x) {
  const Tensor& xv = x.value();
  Tensor out(xv.shape(), 0.0);
  for (std::size_t r = 0; r < xv.rows(); ++r) {
    auto p = softmax(xv.row(r));
    std::copy(p.begin(), p.end(), out.row(r).begin());
  }
  return x.graph().record(std::move(out), {x}, [x](Graph& gr, const Tensor& go, const Tensor& y) {
    Tensor* gx = gr.grad_buffer(x);
    const std::size_t n = y.cols();
    for (std::size_t r = 0; r < y.rows(); ++r) {
      double dot = 0.0;
      for (std::size_t c = 0; c < n; ++c) dot += go[r * n + c] * y[r * n + c];
      for (std::size_t c = 0; c < n; ++c) {
        (*gx)[r * n + c] += y[r * n + c] * (go[r * n + c] - dot);
      }
    }
  });
}

Var cross_entropy(Var logits, std::span<const std::size_t> targets,
                  std::span<const double> weights) {
  const Tensor& lv = logits.value();
  const std::size_t rows = lv.rows();
  const std::size_t k = lv.cols();
  if (targets.size() != rows) throw std::invalid_argument("cross_entropy: one target per row");
  if (!weights.empty() && weights.size() != rows) {
    throw std::invalid_argument("cross_entropy: one weight per row");
  }
  std::vector<std::size_t> tgt(targets.begin(), targets.end());
  std::vector<double> w(rows, 1.0);
  if (!weights.empty()) w.assign(weights.begin(), weights.end());
  double loss = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    if (w[r] == 0.0) {
      if (tgt[r] >= k) throw std::out_of_range("cross_entropy: target out of range");
      continue;
    }
    loss += w[r] * cross_entropy_from_logits(lv.row(r), tgt[r]);
  }
  return logits.graph().record(
      Tensor::scalar(loss), {logits},
      [logits, tgt = std::move(tgt), w = std::move(w)](Graph& gr, const Tensor& go,
                                                       const Tensor&) {
        const Tensor& lv2 = gr.value(logits);
        Tensor* gl = gr.grad_buffer(logits);
        const std::size_t n = lv2.cols();
        const double g0 = go[0];
        for (std::size_t r = 0; r < lv2.rows(); ++r) {
          if (w[r] == 0.0) continue;
          auto p = softmax(lv2.row(r));
          const double f = g0 * w[r];
          for (std::size_t c = 0; c < n; ++c) (*gl)[r * n + c] += f * p[c];
          (*gl)[r * n + tgt[r]] -= f;
        }
      });
}

Var cross_entropy(Var logits, const Tensor& target) {
  const Tensor& lv = logits.value();
  require_same_shape(lv, target, "cross_entropy");
  const std::size_t n = lv.cols();
  double loss = 0.0;
  for (std::size_t r = 0; r < lv.rows(); ++r) {
    double mass = 0.0;
    for (std::size_t c = 0; c < n; ++c) {
      const double t = target[r * n + c];
      if (!(t >= 0.0)) throw std::invalid_argument("cross_entropy: negative target probability");
      mass += t;
    }
    if (std::abs(mass - 1.0) > 1e-9) {
      throw std::invalid_argument("cross_entropy: target row does not sum to 1");
    }
    const auto lp = log_softmax(lv.row(r));
    for (std::size_t c = 0; c < n; ++c) loss -= target[r * n + c] * lp[c];
  }
  return logits.graph().record(
      Tensor::scalar(loss), {logits},
      [logits, target](Graph& gr, const Tensor& go, const Tensor&) {
        const Tensor& lv2 = gr.value(logits);
        Tensor* gl = gr.grad_buffer(logits);
        const std::size_t cols = lv2.cols();
        for (std::size_t r = 0; r < lv2.rows(); ++r) {
          auto p = softmax(lv2.row(r));
          double mass = 0.0;
          for (std::size_t c = 0; c < cols; ++c) mass += target[r * cols + c];
          for (std::size_t c = 0; c < cols; ++c) {
            (*gl)[r * cols + c] += go[0] * (p[c] * mass - target[r * cols + c]);
          }
        }
      });
}

// Attention ------------------------------------------------------------------

namespace {

std::vector<std::uint8_t> allowed_matrix(const AttentionSpec& spec) {
  const std::size_t l = spec.seq_len;
  if (!spec.allowed.empty()) {
    if (spec.allowed.size() != l * l) {
      throw std::invalid_argument("attention: allowed mask must be seq_len x seq_len");
    }
    for (std::size_t i = 0; i < l; ++i) {
      bool any = false;
      for (std::size_t j = 0; j < l; ++j) any = any || spec.allowed[i * l + j] != 0;
      if (!any) {
        throw std::invalid_argument("attention: query " + std::to_string(i) +
                                    " has no allowed key");
      }
    }
    return spec.allowed;
  }
  std::vector<std::uint8_t> allowed(l * l, 1);
  if (spec.mask == AttentionMask::kCausal) {
    for (std::size_t i = 0; i < l; ++i) {
      for (std::size_t j = i + 1; j < l; ++j) allowed[i * l + j] = 0;
    }
  }
  return allowed;
}

}  // namespace

Var attention(Var q, Var k, Var v, const AttentionSpec& spec) {
  const Tensor& qv = q.value();
  const Tensor& kv = k.value();
  const Tensor& vv = v.value();
  require_same_shape(qv, kv, "attention");
  require_same_shape(qv, vv, "attention");
  const std::size_t l = spec.seq_len;
  const std::size_t h = spec.heads;
  const std::size_t width = qv.cols();
  if (l == 0 || h == 0 || width % h != 0 || qv.rows() % l != 0) {
    throw std::invalid_argument("attention: inconsistent seq_len/heads for input " +
                                shape_string(qv.shape()));
  }
  const std::size_t groups = qv.rows() / l;
  const std::size_t dh = width / h;
  const double inv_scale = 1.0 / std::sqrt(static_cast<double>(dh));
  auto allowed = std::make_shared<const std::vector<std::uint8_t>>(allowed_matrix(spec));
  auto probs = std::make_shared<std::vector<double>>(groups * h * l * l, 0.0);

  Tensor out(qv.shape(), 0.0);
  std::vector<double> scores(l);
  for (std::size_t g = 0; g < groups; ++g) {
    for (std::size_t head = 0; head < h; ++head) {
      const std::size_t off = head * dh;
      for (std::size_t i = 0; i < l; ++i) {
        const double* qi = qv.data() + (g * l + i) * width + off;
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < l; ++j) {
          if (!(*allowed)[i * l + j]) continue;
          const double* kj = kv.data() + (g * l + j) * width + off;
          double s = 0.0;
          for (std::size_t c = 0; c < dh; ++c) s += qi[c] * kj[c];
          scores[j] = s * inv_scale;
          mx = std::max(mx, scores[j]);
        }
        if (!std::isfinite(mx)) throw NumericError("attention: non-finite scores");
        double total = 0.0;
        double* p = probs->data() + ((g * h + head) * l + i) * l;
        for (std::size_t j = 0; j < l; ++j) {
          if (!(*allowed)[i * l + j]) continue;
          p[j] = std::exp(scores[j] - mx);
          total += p[j];
        }
        double* oi = out.data() + (g * l + i) * width + off;
        for (std::size_t j = 0; j < l; ++j) {
          if (!(*allowed)[i * l + j]) continue;
          p[j] /= total;
          const double* vj = vv.data() + (g * l + j) * width + off;
          for (std::size_t c = 0; c < dh; ++c) oi[c] += p[j] * vj[c];
        }
      }
    }
  }

  return q.graph().record(
      std::move(out), {q, k, v},
      [q, k, v, l, h, dh, groups, inv_scale, allowed, probs](Graph& gr, const Tensor& go,
                                                             const Tensor&) {
        const Tensor& qv2 = gr.value(q);
        const Tensor& kv2 = gr.value(k);
        const Tensor& vv2 = gr.value(v);
        Tensor* gq = gr.grad_buffer(q);
        Tensor* gk = gr.grad_buffer(k);
        Tensor* gv = gr.grad_buffer(v);
        const std::size_t width = qv2.cols();
        std::vector<double> gp(l), gs(l);
        for (std::size_t g = 0; g < groups; ++g) {
          for (std::size_t head = 0; head < h; ++head) {
            const std::size_t off = head * dh;
            for (std::size_t i = 0; i < l; ++i) {
              const double* p = probs->data() + ((g * h + head) * l + i) * l;
              const double* goi = go.data() + (g * l + i) * width + off;
              double dot = 0.0;
              for (std::size_t j = 0; j < l; ++j) {
                if (!(*allowed)[i * l + j]) continue;
                const double* vj = vv2.data() + (g * l + j) * width + off;
                double s = 0.0;
                for (std::size_t c = 0; c < dh; ++c) s += goi[c] * vj[c];
                gp[j] = s;
                dot += p[j] * s;
                if (gv) {
                  double* gvj = gv->data() + (g * l + j) * width + off;
                  for (std::size_t c = 0; c < dh; ++c) gvj[c] += p[j] * goi[c];
                }
              }
              const double* qi = qv2.data() + (g * l + i) * width + off;
              for (std::size_t j = 0; j < l; ++j) {
                if (!(*allowed)[i * l + j]) continue;
                gs[j] = p[j] * (gp[j] - dot) * inv_scale;
                const double* kj = kv2.data() + (g * l + j) * width + off;
                if (gq) {
                  double* gqi = gq->data() + (g * l + i) * width + off;
                  for (std::size_t c = 0; c < dh; ++c) gqi[c] += gs[j] * kj[c];
                }
                if (gk) {
                  double* gkj = gk->data() + (g * l + j) * width + off;
                  for (std::size_t c = 0; c < dh; ++c) gkj[c] += gs[j] * qi[c];
                }
              }
            }
          }
        }
      });
}

// Gathers --------------------------------------------------------------------

Var gather_rows(Var table, std::vector<std::ptrdiff_t> index) {
  const Tensor& tv = table.value();
  const std::size_t cols = tv.cols();
  const auto rows = static_cast<std::ptrdiff_t>(tv.rows());
  Tensor out(Shape{index.size(), cols}, 0.0);
  for (std::size_t i = 0; i < index.size(); ++i) {
    const std::ptrdiff_t src = index[i];
    if (src < -1 || src >= rows) {
      throw std::out_of_range("gather_rows: index " + std::to_string(src) + " outside table of " +
                              std::to_string(rows) + " rows");
    }
    if (src < 0) continue;
    auto from = tv.row(static_cast<std::size_t>(src));
    std::copy(from.begin(), from.end(), out.row(i).begin());
  }
  return table.graph().record(
      std::move(out), {table},
      [table, index = std::move(index)](Graph& gr, const Tensor& go, const Tensor&) {
        Tensor* gt = gr.grad_buffer(table);
        const std::size_t n = go.cols();
        for (std::size_t i = 0; i < index.size(); ++i) {
          if (index[i] < 0) continue;
          double* dst = gt->data() + static_cast<std::size_t>(index[i]) * n;
          const double* src = go.data() + i * n;
          for (std::size_t c = 0; c < n; ++c) dst[c] += src[c];
        }
      });
}

Var gather_sum(Var table, std::vector<std::vector<std::size_t>> lists) {
  const Tensor& tv = table.value();
  const std::size_t cols = tv.cols();
  Tensor out(Shape{lists.size(), cols}, 0.0);
  for (std::size_t i = 0; i < lists.size(); ++i) {
    auto o = out.row(i);
    for (std::size_t src : lists[i]) {
      if (src >= tv.rows()) {
        throw std::out_of_range("gather_sum: index " + std::to_string(src) +
                                " outside table of " + std::to_string(tv.rows()) + " rows");
      }
      auto from = tv.row(src);
      for (std::size_t c = 0; c < cols; ++c) o[c] += from[c];
    }
  }
  return table.graph().record(
      std::move(out), {table},
      [table, lists = std::move(lists)](Graph& gr, const Tensor& go, const Tensor&) {
        Tensor* gt = gr.grad_buffer(table);
        const std::size_t n = go.cols();
        for (std::size_t i = 0; i < lists.size(); ++i) {
          const double* src = go.data() + i * n;
          for (std::size_t row : lists[i]) {
            double* dst = gt->data() + row * n;
            for (std::size_t c = 0; c < n; ++c) dst[c] += src[c];
          }
        }
      });
}

// Reductions -----------------------------------------------------------------

Var sum(Var x) {
  double s = 0.0;
  for (double v : x.value().values()) s += v;
  return x.graph().record(Tensor::scalar(s), {x}, [x](Graph& gr, const Tensor& go, const Tensor&) {
    Tensor* gx = gr.grad_buffer(x);
    for (double& v : gx->values()) v += go[0];
  });
}

Var mean(Var x) {
  const std::size_t n = x.value().size();
  if (n == 0) throw std::invalid_argument("mean: empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(n));
}

Var mse(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_same_shape(av, bv, "mse");
  if (av.size() == 0) throw std::invalid_argument("mse: empty tensor");
  double s = 0.0;
  for (std::size_t i = 0; i < av.size(); ++i) s += (av[i] - bv[i]) * (av[i] - bv[i]);
  const double inv_n = 1.0 / static_cast<double>(av.size());
  return a.graph().record(
      Tensor::scalar(s * inv_n), {a, b}, [a, b, inv_n](Graph& gr, const Tensor& go, const Tensor&) {
        const Tensor& av2 = gr.value(a);
        const Tensor& bv2 = gr.value(b);
        Tensor* ga = gr.grad_buffer(a);
        Tensor* gb = gr.grad_buffer(b);
        const double f = 2.0 * inv_n * go[0];
        for (std::size_t i = 0; i < av2.size(); ++i) {
          const double d = f * (av2[i] - bv2[i]);
          if (ga) (*ga)[i] += d;
          if (gb) (*gb)[i] -= d;
        }
      });
}

Var pass_through(Var x, const Tensor& replacement) {
  require_same_shape(x.value(), replacement, "pass_through");
  return x.graph().record(replacement, {x}, [x](Graph& gr, const Tensor& go, const Tensor&) {
    accumulate(gr.grad_buffer(x), go);
  });
}

Var stop_gradient(Var x) { return x.graph().constant(x.value()); }

}  // namespace draftrevise::numeric
