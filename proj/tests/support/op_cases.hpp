#pragma once

// Random small instances of every differentiable numeric op, each reduced to
// a scalar through a fixed random projection so that all input entries get
// generic (non-degenerate) gradients.

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "draftrevise/numeric/nn.hpp"
#include "draftrevise/numeric/ops.hpp"
#include "support/gradcheck.hpp"

namespace draftrevise::testing {

struct GradCase {
  std::vector<std::unique_ptr<numeric::Parameter>> owned;
  std::vector<numeric::Parameter*> borrowed;
  std::shared_ptr<void> keep_alive;
  LossBuilder loss;

  std::vector<numeric::Parameter*> params() const {
    std::vector<numeric::Parameter*> out;
    for (const auto& p : owned) out.push_back(p.get());
    out.insert(out.end(), borrowed.begin(), borrowed.end());
    return out;
  }
};

inline numeric::Tensor random_tensor(numeric::Shape shape, numeric::Rng& rng, double scale = 1.0) {
  numeric::Tensor t(std::move(shape), 0.0);
  for (double& v : t.values()) v = scale * rng.normal();
  return t;
}

inline numeric::Parameter* add_param(GradCase& c, numeric::Shape shape, numeric::Rng& rng,
                                     double scale = 1.0) {
  c.owned.push_back(std::make_unique<numeric::Parameter>(
      "p" + std::to_string(c.owned.size()), random_tensor(std::move(shape), rng, scale)));
  return c.owned.back().get();
}

/// sum(out * projection) for a fixed random projection.
inline numeric::Var project(numeric::Graph& g, numeric::Var out,
                            const std::shared_ptr<numeric::Tensor>& projection) {
  return numeric::sum(numeric::mul(out, g.constant(*projection)));
}

using CaseFactory = std::function<GradCase(numeric::Rng&)>;

struct NamedCase {
  std::string name;
  CaseFactory make;
};

inline std::vector<NamedCase> numeric_op_cases() {
  using namespace numeric;
  std::vector<NamedCase> cases;

  auto binary = [](const std::string& name, Var (*op)(Var, Var)) {
    return NamedCase{name, [op](Rng& rng) {
                       GradCase c;
                       const std::size_t r = 1 + rng.below(4), k = 1 + rng.below(5);
                       auto* a = add_param(c, {r, k}, rng);
                       auto* b = add_param(c, {r, k}, rng);
                       auto proj = std::make_shared<Tensor>(random_tensor({r, k}, rng));
                       c.loss = [a, b, proj, op](Graph& g) {
                         return project(g, op(g.param(*a), g.param(*b)), proj);
                       };
                       return c;
                     }};
  };
  cases.push_back(binary("add", &add));
  cases.push_back(binary("sub", &sub));
  cases.push_back(binary("mul", &mul));

  cases.push_back({"scale", [](Rng& rng) {
                     GradCase c;
                     auto* a = add_param(c, {3, 4}, rng);
                     const double f = rng.normal();
                     auto proj = std::make_shared<Tensor>(random_tensor({3, 4}, rng));
                     c.loss = [a, f, proj](Graph& g) { return project(g, scale(g.param(*a), f), proj); };
                     return c;
                   }});

  cases.push_back({"add_bias", [](Rng& rng) {
                     GradCase c;
                     const std::size_t r = 1 + rng.below(4), k = 1 + rng.below(5);
                     auto* x = add_param(c, {r, k}, rng);
                     auto* b = add_param(c, {k}, rng);
                     auto proj = std::make_shared<Tensor>(random_tensor({r, k}, rng));
                     c.loss = [x, b, proj](Graph& g) {
                       return project(g, add_bias(g.param(*x), g.param(*b)), proj);
                     };
                     return c;
                   }});

  cases.push_back({"matmul", [](Rng& rng) {
                     GradCase c;
                     const std::size_t r = 1 + rng.below(4), k = 1 + rng.below(5),
                                       n = 1 + rng.below(4);
                     auto* a = add_param(c, {r, k}, rng);
                     auto* b = add_param(c, {k, n}, rng);
                     auto proj = std::make_shared<Tensor>(random_tensor({r, n}, rng));
                     c.loss = [a, b, proj](Graph& g) {
                       return project(g, matmul(g.param(*a), g.param(*b)), proj);
                     };
                     return c;
                   }});

  cases.push_back({"linear", [](Rng& rng) {
                     GradCase c;
                     const std::size_t r = 1 + rng.below(4), k = 1 + rng.below(5),
                                       n = 1 + rng.below(4);
                     auto* x = add_param(c, {r, k}, rng);
                     auto* w = add_param(c, {k, n}, rng);
                     auto* b = add_param(c, {n}, rng);
                     auto proj = std::make_shared<Tensor>(random_tensor({r, n}, rng));
                     c.loss = [x, w, b, proj](Graph& g) {
                       return project(g, linear(g.param(*x), g.param(*w), g.param(*b)), proj);
                     };
                     return c;
                   }});

  cases.push_back({"gelu", [](Rng& rng) {
                     GradCase c;
                     auto* x = add_param(c, {3, 5}, rng, 1.5);
                     auto proj = std::make_shared<Tensor>(random_tensor({3, 5}, rng));
                     c.loss = [x, proj](Graph& g) { return project(g, gelu(g.param(*x)), proj); };
                     return c;
                   }});

  cases.push_back({"layer_norm", [](Rng& rng) {
                     GradCase c;
                     const std::size_t r = 1 + rng.below(3), k = 2 + rng.below(6);
                     auto* x = add_param(c, {r, k}, rng);
                     auto* gain = add_param(c, {k}, rng);
                     auto* bias = add_param(c, {k}, rng);
                     auto proj = std::make_shared<Tensor>(random_tensor({r, k}, rng));
                     c.loss = [x, gain, bias, proj](Graph& g) {
                       return project(
                           g, layer_norm(g.param(*x), g.param(*gain), g.param(*bias)), proj);
                     };
                     return c;
                   }});

  cases.push_back({"softmax", [](Rng& rng) {
                     GradCase c;
                     auto* x = add_param(c, {2, 5}, rng, 2.0);
                     auto proj = std::make_shared<Tensor>(random_tensor({2, 5}, rng));
                     c.loss = [x, proj](Graph& g) { return project(g, softmax(g.param(*x)), proj); };
                     return c;
                   }});

  auto attention_case = [](const std::string& name, AttentionMask mask) {
    return NamedCase{name, [mask](Rng& rng) {
                       GradCase c;
                       const std::size_t l = 1 + rng.below(4), heads = 1 + rng.below(2),
                                         groups = 1 + rng.below(2);
                       const std::size_t width = heads * (1 + rng.below(3));
                       auto* q = add_param(c, {groups * l, width}, rng);
                       auto* k = add_param(c, {groups * l, width}, rng);
                       auto* v = add_param(c, {groups * l, width}, rng);
                       auto proj =
                           std::make_shared<Tensor>(random_tensor({groups * l, width}, rng));
                       AttentionSpec spec;
                       spec.seq_len = l;
                       spec.heads = heads;
                       spec.mask = mask;
                       c.loss = [q, k, v, proj, spec](Graph& g) {
                         return project(
                             g, attention(g.param(*q), g.param(*k), g.param(*v), spec), proj);
                       };
                       return c;
                     }};
  };
  cases.push_back(attention_case("attention_full", AttentionMask::kFull));
  cases.push_back(attention_case("attention_causal", AttentionMask::kCausal));

  cases.push_back({"gather_rows", [](Rng& rng) {
                     GradCase c;
                     auto* table = add_param(c, {4, 3}, rng);
                     std::vector<std::ptrdiff_t> idx;
                     for (int i = 0; i < 6; ++i) {
                       idx.push_back(static_cast<std::ptrdiff_t>(rng.below(5)) - 1);
                     }
                     auto proj = std::make_shared<Tensor>(random_tensor({6, 3}, rng));
                     c.loss = [table, idx, proj](Graph& g) {
                       return project(g, gather_rows(g.param(*table), idx), proj);
                     };
                     return c;
                   }});

  cases.push_back({"gather_sum", [](Rng& rng) {
                     GradCase c;
                     auto* table = add_param(c, {5, 3}, rng);
                     std::vector<std::vector<std::size_t>> lists(4);
                     for (auto& l : lists) {
                       const std::size_t n = rng.below(4);
                       for (std::size_t i = 0; i < n; ++i) l.push_back(rng.below(5));
                     }
                     auto proj = std::make_shared<Tensor>(random_tensor({4, 3}, rng));
                     c.loss = [table, lists, proj](Graph& g) {
                       return project(g, gather_sum(g.param(*table), lists), proj);
                     };
                     return c;
                   }});

  cases.push_back({"cross_entropy", [](Rng& rng) {
                     GradCase c;
                     const std::size_t r = 1 + rng.below(4), k = 2 + rng.below(5);
                     auto* x = add_param(c, {r, k}, rng, 2.0);
                     std::vector<std::size_t> targets;
                     std::vector<double> weights;
                     for (std::size_t i = 0; i < r; ++i) {
                       targets.push_back(rng.below(k));
                       weights.push_back(rng.uniform());
                     }
                     c.loss = [x, targets, weights](Graph& g) {
                       return cross_entropy(g.param(*x), targets, weights);
                     };
                     return c;
                   }});

  cases.push_back({"cross_entropy_soft", [](Rng& rng) {
                     GradCase c;
                     const std::size_t r = 1 + rng.below(3), k = 2 + rng.below(4);
                     auto* x = add_param(c, {r, k}, rng, 2.0);
                     Tensor target({r, k}, 0.0);
                     for (std::size_t i = 0; i < r; ++i) {
                       double s = 0.0;
                       for (std::size_t j = 0; j < k; ++j) s += target.at(i, j) = rng.uniform();
                       for (std::size_t j = 0; j < k; ++j) target.at(i, j) /= s;
                     }
                     c.loss = [x, target](Graph& g) { return cross_entropy(g.param(*x), target); };
                     return c;
                   }});

  cases.push_back({"mean", [](Rng& rng) {
                     GradCase c;
                     auto* x = add_param(c, {3, 4}, rng);
                     c.loss = [x](Graph& g) { return mean(mul(g.param(*x), g.param(*x))); };
                     return c;
                   }});

  cases.push_back({"mse", [](Rng& rng) {
                     GradCase c;
                     auto* a = add_param(c, {3, 4}, rng);
                     auto* b = add_param(c, {3, 4}, rng);
                     c.loss = [a, b](Graph& g) { return mse(g.param(*a), g.param(*b)); };
                     return c;
                   }});

  cases.push_back({"transformer_block", [](Rng& rng) {
                     GradCase c;
                     auto block = std::make_shared<TransformerBlock>("blk", 4, 2, 8, rng, 0.5);
                     std::vector<Parameter*> refs;
                     block->collect(refs);
                     const std::size_t l = 3;
                     auto* x = add_param(c, {2 * l, 4}, rng);
                     auto proj = std::make_shared<Tensor>(random_tensor({2 * l, 4}, rng));
                     const bool causal = rng.below(2) == 1;
                     c.borrowed = refs;
                     c.keep_alive = block;
                     c.loss = [block, x, proj, l, causal](Graph& g) {
                       return project(
                           g,
                           (*block)(g, g.param(*x), l,
                                    causal ? AttentionMask::kCausal : AttentionMask::kFull),
                           proj);
                     };
                     return c;
                   }});
  return cases;
}

}  // namespace draftrevise::testing
