#include <cmath>
#include <numbers>

#include "doctest.h"
#include "draftrevise/errors.hpp"
#include "draftrevise/numeric/nn.hpp"
#include "draftrevise/numeric/ops.hpp"
#include "draftrevise/numeric/optim.hpp"
#include "support/gradcheck.hpp"
#include "support/op_cases.hpp"

using namespace draftrevise;
using namespace draftrevise::numeric;

TEST_CASE("softmax") {
  SUBCASE("uniform logits") {
    auto p = softmax(std::vector<double>{0, 0, 0, 0});
    for (double v : p) CHECK(v == doctest::Approx(0.25).epsilon(1e-15));
  }
  SUBCASE("ln 2 versus 0") {
    auto p = softmax(std::vector<double>{std::log(2.0), 0.0});
    CHECK(p[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-14));
    CHECK(p[1] == doctest::Approx(1.0 / 3.0).epsilon(1e-14));
  }
  SUBCASE("random vector matches direct evaluation") {
    Rng rng(3);
    for (int trial = 0; trial < 20; ++trial) {
      std::vector<double> x(5);
      for (double& v : x) v = 3.0 * rng.normal();
      auto p = softmax(x);
      double total = 0.0, direct_total = 0.0;
      for (double v : x) direct_total += std::exp(v);
      for (std::size_t i = 0; i < 5; ++i) {
        total += p[i];
        CHECK(std::abs(p[i] - std::exp(x[i]) / direct_total) < 1e-14);
      }
      CHECK(std::abs(total - 1.0) < 1e-12);
    }
  }
  SUBCASE("large logits stay finite") {
    auto p = softmax(std::vector<double>{1000.0, 999.0});
    CHECK(std::isfinite(p[0]));
    CHECK(p[0] > p[1]);
  }
  SUBCASE("non-finite input is an error") {
    CHECK_THROWS_AS(softmax(std::vector<double>{0.0, NAN}), NumericError);
    CHECK_THROWS_AS(softmax(std::vector<double>{INFINITY, 0.0}), NumericError);
  }
}

TEST_CASE("layer_norm") {
  Graph g(Graph::Mode::kInference);
  Var gain = g.constant(Tensor({3}, 1.0));
  Var bias = g.constant(Tensor({3}, 0.0));
  SUBCASE("constant row collapses to zero") {
    Var y = layer_norm(g.constant(Tensor({1, 3}, {2.5, 2.5, 2.5})), gain, bias);
    for (double v : y.value().values()) CHECK(v == 0.0);
  }
  SUBCASE("already normalized row") {
    Var g2 = g.constant(Tensor({2}, 1.0));
    Var b2 = g.constant(Tensor({2}, 0.0));
    Var y = layer_norm(g.constant(Tensor({1, 2}, {1.0, -1.0})), g2, b2);
    const double expected = 1.0 / std::sqrt(1.0 + 1e-5);
    CHECK(y.value()[0] == doctest::Approx(expected).epsilon(1e-15));
    CHECK(y.value()[1] == doctest::Approx(-expected).epsilon(1e-15));
  }
  SUBCASE("random row has zero mean") {
    Rng rng(5);
    Tensor x({1, 7});
    for (double& v : x.values()) v = 10.0 * rng.normal() + 4.0;
    Var g7 = g.constant(Tensor({7}, 1.0));
    Var b7 = g.constant(Tensor({7}, 0.0));
    Var y = layer_norm(g.constant(x), g7, b7);
    double m = 0.0;
    for (double v : y.value().values()) m += v;
    CHECK(std::abs(m / 7.0) < 1e-10);
  }
}

TEST_CASE("attention") {
  Graph g(Graph::Mode::kInference);
  AttentionSpec spec;
  SUBCASE("single position returns its value") {
    spec.seq_len = 1;
    Var q = g.constant(Tensor({1, 2}, {0.3, -1.0}));
    Var k = g.constant(Tensor({1, 2}, {2.0, 0.5}));
    Var v = g.constant(Tensor({1, 2}, {7.0, -3.0}));
    Var out = attention(q, k, v, spec);
    CHECK(out.value()[0] == 7.0);
    CHECK(out.value()[1] == -3.0);
  }
  SUBCASE("causal rows ignore future values") {
    Rng rng(9);
    spec.seq_len = 4;
    spec.heads = 2;
    spec.mask = AttentionMask::kCausal;
    Tensor q = testing::random_tensor({4, 4}, rng);
    Tensor k = testing::random_tensor({4, 4}, rng);
    Tensor v = testing::random_tensor({4, 4}, rng);
    Tensor before = attention(g.constant(q), g.constant(k), g.constant(v), spec).value();
    for (std::size_t c = 0; c < 4; ++c) v.at(3, c) += 5.0;
    k.at(2, 1) -= 2.0;
    Tensor after = attention(g.constant(q), g.constant(k), g.constant(v), spec).value();
    for (std::size_t i = 0; i < 8; ++i) CHECK(before[i] == after[i]);  // rows 0,1
    bool changed = false;
    for (std::size_t i = 12; i < 16; ++i) changed = changed || before[i] != after[i];
    CHECK(changed);
  }
  SUBCASE("three positions match a direct weighted sum") {
    Rng rng(11);
    spec.seq_len = 3;
    Tensor q = testing::random_tensor({3, 2}, rng);
    Tensor k = testing::random_tensor({3, 2}, rng);
    Tensor v = testing::random_tensor({3, 2}, rng);
    Tensor out = attention(g.constant(q), g.constant(k), g.constant(v), spec).value();
    for (std::size_t i = 0; i < 3; ++i) {
      double w[3], total = 0.0;
      for (std::size_t j = 0; j < 3; ++j) {
        w[j] = std::exp((q.at(i, 0) * k.at(j, 0) + q.at(i, 1) * k.at(j, 1)) / std::sqrt(2.0));
        total += w[j];
      }
      for (std::size_t c = 0; c < 2; ++c) {
        const double expected =
            (w[0] * v.at(0, c) + w[1] * v.at(1, c) + w[2] * v.at(2, c)) / total;
        CHECK(std::abs(out.at(i, c) - expected) < 1e-13);
      }
    }
  }
  SUBCASE("row without allowed keys is an error") {
    spec.seq_len = 2;
    spec.allowed = {1, 0, 0, 0};
    Var x = g.constant(Tensor({2, 2}, 1.0));
    CHECK_THROWS_AS(attention(x, x, x, spec), std::invalid_argument);
  }
}

TEST_CASE("cross_entropy_from_logits") {
  CHECK(cross_entropy_from_logits(std::vector<double>{1, 1, 1, 1}, 2) ==
        doctest::Approx(std::log(4.0)).epsilon(1e-15));
  CHECK(cross_entropy_from_logits(std::vector<double>{0, 100, 0}, 1) < 1e-10);
  Rng rng(2);
  for (int t = 0; t < 10; ++t) {
    std::vector<double> x(6);
    for (double& v : x) v = 2.0 * rng.normal();
    const std::size_t target = rng.below(6);
    double s = 0.0;
    for (double v : x) s += std::exp(v);
    CHECK(std::abs(cross_entropy_from_logits(x, target) - (std::log(s) - x[target])) < 1e-12);
  }
  CHECK_THROWS_AS(cross_entropy_from_logits(std::vector<double>{0, 0}, 2), std::out_of_range);

  Graph g(Graph::Mode::kInference);
  Var logits = g.constant(Tensor({2, 3}, 0.0));
  std::vector<std::size_t> bad{0, 3};
  CHECK_THROWS_AS(cross_entropy(logits, bad), std::out_of_range);
  Tensor not_a_distribution({2, 3}, 0.5);
  CHECK_THROWS_AS(cross_entropy(logits, not_a_distribution), std::invalid_argument);
}

TEST_CASE("adamw_step") {
  AdamWConfig no_decay;
  no_decay.weight_decay = 0.0;
  SUBCASE("zero gradient leaves parameters unchanged") {
    Parameter p("p", Tensor({3}, {1.0, -2.0, 0.5}));
    std::vector<Parameter*> params{&p};
    auto state = OptimizerState::for_parameters(params);
    adamw_step(params, state, no_decay, 0.1);
    CHECK(p.value == Tensor({3}, {1.0, -2.0, 0.5}));
  }
  SUBCASE("first step moves by about lr times sign") {
    Parameter p("p", Tensor::scalar(1.0));
    p.grad[0] = 1.0;
    std::vector<Parameter*> params{&p};
    auto state = OptimizerState::for_parameters(params);
    adamw_step(params, state, no_decay, 0.1);
    // mhat = 1, vhat = 1 -> update = lr / (1 + eps)
    CHECK(p.value[0] == doctest::Approx(1.0 - 0.1 / (1.0 + 1e-8)).epsilon(1e-15));
    CHECK(state.step == 1);
  }
  SUBCASE("decoupled decay with zero gradient") {
    AdamWConfig cfg;
    cfg.weight_decay = 0.01;
    Parameter p("p", Tensor({2}, {3.0, -1.0}));
    std::vector<Parameter*> params{&p};
    auto state = OptimizerState::for_parameters(params);
    adamw_step(params, state, cfg, 0.5);
    CHECK(p.value[0] == doctest::Approx(3.0 * (1.0 - 0.5 * 0.01)).epsilon(1e-15));
    CHECK(p.value[1] == doctest::Approx(-1.0 * (1.0 - 0.5 * 0.01)).epsilon(1e-15));
  }
  SUBCASE("negative learning rate is an error") {
    Parameter p("p", Tensor::scalar(1.0));
    std::vector<Parameter*> params{&p};
    auto state = OptimizerState::for_parameters(params);
    CHECK_THROWS_AS(adamw_step(params, state, no_decay, -1e-3), std::invalid_argument);
  }
}

TEST_CASE("cosine_lr") {
  CHECK(cosine_lr(0, 1000) == doctest::Approx(1e-4).epsilon(1e-15));
  CHECK(cosine_lr(1000, 1000) == 0.0);
  CHECK(cosine_lr(500, 1000) == doctest::Approx(5e-5).epsilon(1e-12));
  CHECK(cosine_lr(5000, 1000) == 0.0);
  CHECK(cosine_lr(250, 1000, 1.0, 0.5) > cosine_lr(750, 1000, 1.0, 0.5));
}

TEST_CASE("analytic gradients match central differences") {
  Rng rng(101);
  for (const auto& named : testing::numeric_op_cases()) {
    CAPTURE(named.name);
    for (int trial = 0; trial < 5; ++trial) {
      auto c = named.make(rng);
      auto result = testing::check_gradients(c.params(), c.loss);
      CHECK(result.max_rel_error < 1e-5);
    }
  }
}

TEST_CASE("gradients accumulate across backward passes") {
  Parameter p("p", Tensor({2}, {1.0, 2.0}));
  for (int i = 0; i < 2; ++i) {
    Graph g;
    Var x = g.param(p);
    g.backward(sum(mul(x, x)));
  }
  CHECK(p.grad[0] == 4.0);
  CHECK(p.grad[1] == 8.0);
  Graph g;
  Var x = g.param(p);
  g.backward(sum(x));
  CHECK(g.size() == 0);  // tape freed after backward
}

TEST_CASE("forward and backward are bit-reproducible") {
  auto run = [] {
    Rng rng(77);
    TransformerBlock block("b", 8, 2, 16, rng, 0.3);
    std::vector<Parameter*> refs;
    block.collect(refs);
    Tensor x = testing::random_tensor({6, 8}, rng);
    Graph g;
    Var y = block(g, g.constant(x), 3, AttentionMask::kFull);
    Tensor out = y.value();
    g.backward(sum(mul(y, y)));
    std::vector<Tensor> grads;
    for (auto* p : refs) grads.push_back(p->grad);
    return std::make_pair(out, grads);
  };
  auto a = run();
  auto b = run();
  CHECK(a.first == b.first);
  CHECK(a.second == b.second);
}

TEST_CASE("rng helpers") {
  Rng a(1), b(1);
  for (int i = 0; i < 5; ++i) CHECK(a.next() == b.next());
  Rng s1 = Rng::stream(4, 0), s2 = Rng::stream(4, 1);
  CHECK(s1.next() != s2.next());
  Rng r(8);
  for (int i = 0; i < 1000; ++i) {
    const double u = r.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    CHECK(r.below(7) < 7);
  }
  std::vector<double> w{0.0, 1.0, 0.0};
  CHECK(r.categorical(w) == 1);
  CHECK_THROWS(r.categorical(std::vector<double>{0.0, 0.0}));
}
