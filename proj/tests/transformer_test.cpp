#include <cmath>
#include <memory>
#include <numbers>
#include <stdexcept>

#include "doctest.h"
#include "draftrevise/numeric/ops.hpp"
#include "draftrevise/transformer/model.hpp"
#include "support/gradcheck.hpp"
#include "support/stats.hpp"

using namespace draftrevise;
using namespace draftrevise::transformer;
using numeric::Graph;
using numeric::Rng;
using numeric::Tensor;
using numeric::Var;

namespace {

TransformerConfig small_config(std::size_t depth = 2) {
  TransformerConfig c;
  c.spatial_blocks = 1;
  c.depth_blocks = 1;
  c.d_model = 8;
  c.heads = 2;
  c.ff_multiplier = 2;
  c.codebook_size = 4;
  c.depth = depth;
  c.positions = 3;
  c.code_dim = 3;
  c.num_classes = 2;
  c.init_std = 0.5;
  return c;
}

CodeStackMap random_map(const TransformerConfig& c, Rng& rng) {
  CodeStackMap m(1, c.positions, c.depth, c.codebook_size);
  for (std::size_t n = 0; n < c.positions; ++n)
    for (std::size_t d = 0; d < c.depth; ++d) m.set(n, d, static_cast<Code>(rng.below(c.codebook_size)));
  return m;
}

MaskVector random_mask(std::size_t n, Rng& rng, bool nonempty = true) {
  MaskVector m(n);
  for (std::size_t i = 0; i < n; ++i) m.set(i, rng.below(2) == 1);
  if (nonempty && m.count() == 0) m.set(rng.below(n));
  return m;
}

ConditionId random_condition(const TransformerConfig& c, Rng& rng) {
  const std::size_t r = rng.below(c.num_classes + 1);
  return r == c.num_classes ? ConditionId::null() : ConditionId::of(r);
}

Tensor logits_for(const ContextualTransformer& model, const MaskedCodeSequence& seq, ConditionId cond,
                  const std::vector<std::size_t>& rows, const std::vector<Code>& history) {
  Graph g(Graph::Mode::kInference);
  Var h = model.spatial_forward(g, model.embed_masked(g, std::span(&seq, 1), std::span(&cond, 1)));
  return model.depth_logits(g, h, rows, history, model.config().depth).value();
}

}  // namespace

TEST_CASE("mask_count schedule") {
  CHECK(mask_count(0.0, 16) == 16);
  CHECK(mask_count(0.5, 16) == 12);
  CHECK(mask_count(std::nextafter(1.0, 0.0), 16) == 1);
  CHECK(mask_count(0.999, 7) == 1);
  for (std::size_t n = 1; n < 40; ++n)
    for (double r = 0.0; r < 1.0; r += 0.01) {
      const auto c = mask_count(r, n);
      CHECK(c >= 1);
      CHECK(c <= n);
    }
}

TEST_CASE("sample_training_mask laws") {
  Rng rng(12);
  const std::size_t n = 16, draws = 10000;
  std::vector<double> size_hist(n + 1, 0.0), position_hist(n, 0.0);
  double masked_total = 0.0;
  for (std::size_t i = 0; i < draws; ++i) {
    MaskVector m = sample_training_mask(n, rng);
    size_hist[m.count()] += 1.0;
    for (std::size_t p : m.indices()) position_hist[p] += 1.0;
    masked_total += static_cast<double>(m.count());
  }
  // |m| = c  iff  cos(pi r / 2) in ((c-1)/N, c/N]
  std::vector<double> expected(n + 1, 0.0);
  for (std::size_t c = 1; c <= n; ++c) {
    const double lo = std::acos(static_cast<double>(c) / n), hi = std::acos(static_cast<double>(c - 1) / n);
    expected[c] = draws * (hi - lo) * 2.0 / std::numbers::pi;
  }
  CHECK(size_hist[0] == 0.0);
  CHECK(testing::chi_square_p(size_hist, expected) > 0.01);
  std::vector<double> uniform(n, masked_total / n);
  CHECK(testing::chi_square_p(position_hist, uniform) > 0.01);
}

TEST_CASE("condition_dropout") {
  Rng rng(3);
  for (int i = 0; i < 100; ++i) {
    CHECK(condition_dropout(ConditionId::of(2), 0.0, rng) == ConditionId::of(2));
    CHECK(condition_dropout(ConditionId::of(2), 1.0, rng).is_null());
  }
  int nulls = 0;
  for (int i = 0; i < 10000; ++i) nulls += condition_dropout(ConditionId::of(1), 0.1, rng).is_null();
  CHECK(std::abs(nulls / 10000.0 - 0.1) < 0.01);
  CHECK_THROWS_AS(condition_dropout(ConditionId::of(1), 1.5, rng), std::invalid_argument);
}

TEST_CASE("embed_masked") {
  Rng rng(21);
  auto cfg = small_config(3);
  ContextualTransformer model(cfg, rng);
  auto refs = model.parameters();
  auto param = [&](const std::string& name) -> const Tensor& {
    for (auto* p : refs)
      if (p->name == name) return p->value;
    throw std::logic_error(name);
  };
  const ConditionId cond = ConditionId::of(1);

  SUBCASE("fully masked rows differ only by position embedding") {
    MaskedCodeSequence seq(random_map(cfg, rng), MaskVector(cfg.positions, true));
    Graph g(Graph::Mode::kInference);
    const Tensor u = model.embed_masked(g, std::span(&seq, 1), std::span(&cond, 1)).value();
    const Tensor& pe = param("transformer.pos_embed");
    for (std::size_t n = 1; n < cfg.positions; ++n)
      for (std::size_t c = 0; c < cfg.d_model; ++c)
        CHECK(std::abs((u.at(n, c) - pe.at(n, c)) - (u.at(0, c) - pe.at(0, c))) < 1e-14);
  }
  SUBCASE("stack (k, k, k) contributes D e(k)") {
    CodeStackMap base = random_map(cfg, rng);
    const Code k = 2;
    for (std::size_t d = 0; d < cfg.depth; ++d) base.set(1, d, k);
    MaskedCodeSequence seq(base, MaskVector(cfg.positions));
    Graph g(Graph::Mode::kInference);
    const Tensor u = model.embed_masked(g, std::span(&seq, 1), std::span(&cond, 1)).value();
    const Tensor& e = param("transformer.code_embed");
    const Tensor& w = param("transformer.input_proj");
    const Tensor& tok = param("transformer.token_bias");
    const Tensor& pe = param("transformer.pos_embed");
    const Tensor& cls = param("transformer.class_embed");
    for (std::size_t c = 0; c < cfg.d_model; ++c) {
      double expect = tok.at(0, c) + pe.at(1, c) + cls.at(1, c);
      for (std::size_t j = 0; j < cfg.code_dim; ++j) expect += 3.0 * e.at(k, j) * w.at(j, c);
      CHECK(std::abs(u.at(1, c) - expect) < 1e-12);
    }
  }
  SUBCASE("one extra masked bit changes exactly one row") {
    for (int trial = 0; trial < 50; ++trial) {
      CodeStackMap base = random_map(cfg, rng);
      MaskVector m = random_mask(cfg.positions, rng, false);
      std::size_t flip = rng.below(cfg.positions);
      m.set(flip, false);
      MaskVector m2 = m;
      m2.set(flip, true);
      MaskedCodeSequence a(base, m), b(base, m2);
      Graph g(Graph::Mode::kInference);
      const Tensor ua = model.embed_masked(g, std::span(&a, 1), std::span(&cond, 1)).value();
      const Tensor ub = model.embed_masked(g, std::span(&b, 1), std::span(&cond, 1)).value();
      for (std::size_t n = 0; n < cfg.positions; ++n) {
        bool same = true;
        for (std::size_t c = 0; c < cfg.d_model; ++c) same = same && ua.at(n, c) == ub.at(n, c);
        CHECK(same == (n != flip));
      }
    }
  }
  SUBCASE("bad inputs") {
    CodeStackMap wrong(1, cfg.positions + 1, cfg.depth, cfg.codebook_size, 0);
    MaskedCodeSequence seq(wrong);
    Graph g(Graph::Mode::kInference);
    CHECK_THROWS_AS(model.embed_masked(g, std::span(&seq, 1), std::span(&cond, 1)), std::invalid_argument);
    MaskedCodeSequence ok(random_map(cfg, rng));
    ConditionId bad = ConditionId::of(cfg.num_classes);
    CHECK_THROWS_AS(model.embed_masked(g, std::span(&ok, 1), std::span(&bad, 1)), std::out_of_range);
  }
}

TEST_CASE("spatial_forward") {
  Rng rng(31);
  auto cfg = small_config();
  cfg.spatial_blocks = 2;
  ContextualTransformer model(cfg, rng);
  SUBCASE("bidirectional: the last position moves the first") {
    Tensor u({cfg.positions, cfg.d_model}, 0.0);
    for (double& v : u.values()) v = rng.normal();
    Graph g(Graph::Mode::kInference);
    const Tensor h = model.spatial_forward(g, g.constant(u)).value();
    Tensor u2 = u;
    u2.at(cfg.positions - 1, 0) += 0.5;
    const Tensor h2 = model.spatial_forward(g, g.constant(u2)).value();
    double diff = 0.0;
    for (std::size_t c = 0; c < cfg.d_model; ++c) diff += std::abs(h.at(0, c) - h2.at(0, c));
    CHECK(diff > 1e-6);
  }
  SUBCASE("permutation equivariance") {
    for (int trial = 0; trial < 10; ++trial) {
      Tensor u({cfg.positions, cfg.d_model}, 0.0);
      for (double& v : u.values()) v = rng.normal();
      std::vector<std::size_t> perm{2, 0, 1};
      Tensor up = u;
      for (std::size_t n = 0; n < 3; ++n)
        for (std::size_t c = 0; c < cfg.d_model; ++c) up.at(n, c) = u.at(perm[n], c);
      Graph g(Graph::Mode::kInference);
      const Tensor h = model.spatial_forward(g, g.constant(u)).value();
      const Tensor hp = model.spatial_forward(g, g.constant(up)).value();
      for (std::size_t n = 0; n < 3; ++n)
        for (std::size_t c = 0; c < cfg.d_model; ++c) CHECK(std::abs(hp.at(n, c) - h.at(perm[n], c)) < 1e-12);
    }
  }
  SUBCASE("single position is a deterministic function of its input") {
    auto one = small_config();
    one.positions = 1;
    ContextualTransformer m1(one, rng);
    Tensor u({1, one.d_model}, 0.0);
    for (double& v : u.values()) v = rng.normal();
    Graph g(Graph::Mode::kInference);
    CHECK(m1.spatial_forward(g, g.constant(u)).value() == m1.spatial_forward(g, g.constant(u)).value());
  }
}

TEST_CASE("depth_logits") {
  Rng rng(41);
  SUBCASE("causal in depth") {
    auto cfg = small_config(4);
    ContextualTransformer model(cfg, rng);
    for (int trial = 0; trial < 30; ++trial) {
      MaskedCodeSequence seq(random_map(cfg, rng), random_mask(cfg.positions, rng));
      const ConditionId cond = random_condition(cfg, rng);
      std::vector<std::size_t> rows{rng.below(cfg.positions)};
      std::vector<Code> hist(cfg.depth - 1);
      for (auto& c : hist) c = static_cast<Code>(rng.below(cfg.codebook_size));
      const Tensor base = logits_for(model, seq, cond, rows, hist);
      // change the history entry feeding depth j+1 onwards; depths <= j stay put
      const std::size_t j = rng.below(cfg.depth - 1);
      auto hist2 = hist;
      hist2[j] = static_cast<Code>((hist[j] + 1) % cfg.codebook_size);
      const Tensor other = logits_for(model, seq, cond, rows, hist2);
      for (std::size_t d = 0; d <= j; ++d)
        for (std::size_t k = 0; k < cfg.codebook_size; ++k) CHECK(base.at(d, k) == other.at(d, k));
      double moved = 0.0;
      for (std::size_t k = 0; k < cfg.codebook_size; ++k) moved += std::abs(base.at(j + 1, k) - other.at(j + 1, k));
      CHECK(moved > 0.0);
      for (std::size_t d = 0; d < cfg.depth; ++d) {
        auto p = numeric::softmax(base.row(d));
        double s = 0.0;
        for (double v : p) s += v;
        CHECK(std::abs(s - 1.0) < 1e-12);
      }
    }
  }
  SUBCASE("depth 1 ignores the history projection") {
    auto cfg = small_config(1);
    ContextualTransformer model(cfg, rng);
    MaskedCodeSequence seq(random_map(cfg, rng), random_mask(cfg.positions, rng));
    const ConditionId cond = ConditionId::of(0);
    std::vector<std::size_t> rows{0, 1, 2};
    const Tensor before = logits_for(model, seq, cond, rows, {});
    model.history_projection().value.fill(0.0);
    CHECK(logits_for(model, seq, cond, rows, {}) == before);
    for (double& v : model.history_projection().value.values()) v = 100.0 * rng.normal();
    CHECK(logits_for(model, seq, cond, rows, {}) == before);
  }
}

TEST_CASE("masked_nll") {
  Rng rng(51);
  SUBCASE("untrained model sits near ln K per position and depth") {
    TransformerConfig cfg;
    cfg.spatial_blocks = 2;
    cfg.d_model = 64;
    ContextualTransformer model(cfg, rng);
    std::vector<MaskedExample> batch;
    for (int i = 0; i < 16; ++i) {
      CodeStackMap m(4, 4, cfg.depth, cfg.codebook_size);
      for (std::size_t n = 0; n < 16; ++n)
        for (std::size_t d = 0; d < cfg.depth; ++d) m.set(n, d, static_cast<Code>(rng.below(64)));
      batch.push_back({MaskedCodeSequence(m, sample_training_mask(16, rng)), ConditionId::of(i % 8), {}});
    }
    Graph g(Graph::Mode::kInference);
    const double loss = masked_nll(g, model, batch).value().item();
    MESSAGE("initial loss per depth " << loss / cfg.depth << " vs ln K " << std::log(64.0));
    CHECK(std::abs(loss / cfg.depth - std::log(64.0)) < 0.05);
  }
  SUBCASE("end-to-end gradient check") {
    for (int trial = 0; trial < 20; ++trial) {
      auto cfg = small_config(1 + rng.below(3));
      auto model = std::make_shared<ContextualTransformer>(cfg, rng);
      auto batch = std::make_shared<std::vector<MaskedExample>>();
      for (int i = 0; i < 2; ++i) {
        batch->push_back({MaskedCodeSequence(random_map(cfg, rng), random_mask(cfg.positions, rng)),
                          random_condition(cfg, rng), {}});
      }
      auto loss = [model, batch](Graph& g) { return masked_nll(g, *model, *batch); };
      auto result = testing::check_gradients(model->parameters(), loss);
      CHECK(result.max_rel_error < 1e-5);
    }
  }
  SUBCASE("hidden base codes do not matter") {
    auto cfg = small_config(2);
    ContextualTransformer model(cfg, rng);
    for (int trial = 0; trial < 200; ++trial) {
      CodeStackMap base = random_map(cfg, rng);
      MaskVector mask = random_mask(cfg.positions, rng);
      CodeStackMap other = base;
      for (std::size_t n : mask.indices())
        for (std::size_t d = 0; d < cfg.depth; ++d) other.set(n, d, static_cast<Code>(rng.below(cfg.codebook_size)));
      const ConditionId cond = random_condition(cfg, rng);
      MaskedExample a{MaskedCodeSequence(base, mask), cond, base};
      MaskedExample b{MaskedCodeSequence(other, mask), cond, base};
      Graph g(Graph::Mode::kInference);
      CHECK(masked_nll(g, model, std::span(&a, 1)).value().item() ==
            masked_nll(g, model, std::span(&b, 1)).value().item());
      CHECK(model.context(std::span(&a.input, 1), std::span(&cond, 1)) ==
            model.context(std::span(&b.input, 1), std::span(&cond, 1)));
    }
  }
  SUBCASE("example without masked positions is rejected") {
    auto cfg = small_config();
    ContextualTransformer model(cfg, rng);
    MaskedExample ex{MaskedCodeSequence(random_map(cfg, rng)), ConditionId::null(), {}};
    Graph g(Graph::Mode::kInference);
    CHECK_THROWS_AS(masked_nll(g, model, std::span(&ex, 1)), std::invalid_argument);
  }
}

TEST_CASE("predict_stack") {
  Rng rng(61);
  auto cfg = small_config(3);
  ContextualTransformer model(cfg, rng);
  MaskedCodeSequence seq(random_map(cfg, rng), MaskVector(cfg.positions, true));
  const ConditionId cond = ConditionId::of(0);
  const Tensor h = model.context(std::span(&seq, 1), std::span(&cond, 1));

  SUBCASE("zero temperature is the greedy stack") {
    Rng a(1), b(2);
    auto greedy = tempered_distribution(0.0);
    auto s1 = predict_stack(model, h.row(0), greedy, a);
    auto s2 = predict_stack(model, h.row(0), greedy, b);
    CHECK(s1 == s2);
    // greedy code at each depth is the argmax given the greedy prefix
    std::vector<Code> hist(s1.codes.begin(), s1.codes.end() - 1);
    Graph g(Graph::Mode::kInference);
    std::vector<std::size_t> rows{0};
    const Tensor logits = model.depth_logits(g, g.constant(h), rows, hist, cfg.depth).value();
    for (std::size_t d = 0; d < cfg.depth; ++d) {
      auto row = logits.row(d);
      CHECK(s1.codes[d] == static_cast<Code>(std::max_element(row.begin(), row.end()) - row.begin()));
    }
  }
  SUBCASE("same rng state, same stack") {
    Rng a(9), b(9);
    auto dist = tempered_distribution(1.0);
    for (int i = 0; i < 20; ++i) CHECK(predict_stack(model, h.row(1), dist, a) == predict_stack(model, h.row(1), dist, b));
  }
  SUBCASE("first-depth frequencies follow the softmax") {
    Graph g(Graph::Mode::kInference);
    std::vector<std::size_t> rows{2};
    const Tensor logits = model.depth_logits(g, g.constant(h), rows, {}, 1).value();
    auto p = numeric::softmax(logits.row(0));
    std::vector<double> counts(cfg.codebook_size, 0.0);
    auto dist = tempered_distribution(1.0);
    for (int i = 0; i < 10000; ++i) counts[predict_stack(model, h.row(2), dist, rng).codes[0]] += 1.0;
    double tv = 0.0;
    for (std::size_t k = 0; k < cfg.codebook_size; ++k) tv += 0.5 * std::abs(counts[k] / 10000.0 - p[k]);
    CHECK(tv < 0.03);
  }
  SUBCASE("stack_distribution sums to one and matches the chain rule") {
    auto probs = model.stack_distribution(h.row(0));
    double total = 0.0;
    for (double v : probs) total += v;
    CHECK(std::abs(total - 1.0) < 1e-12);
    const std::vector<Code> stack{1, 3, 2};
    std::vector<Code> hist{1, 3};
    Graph g(Graph::Mode::kInference);
    std::vector<std::size_t> rows{0};
    const Tensor logits = model.depth_logits(g, g.constant(h), rows, hist, 3).value();
    double p = 1.0;
    for (std::size_t d = 0; d < 3; ++d) p *= numeric::softmax(logits.row(d))[stack[d]];
    CHECK(std::abs(probs[(1 * 4 + 3) * 4 + 2] - p) < 1e-14);
  }
}

TEST_CASE("transformer_train_step") {
  auto cfg = small_config(2);
  cfg.init_std = 0.1;
  cfg.d_model = 16;
  auto run = [&](std::uint64_t seed) {
    Rng init(seed);
    ContextualTransformer model(cfg, init);
    auto state = numeric::OptimizerState::for_parameters(model.trainable_parameters());
    // two fixed maps, one per class
    CodeStackMap a(1, 3, 2, 4, 0), b(1, 3, 2, 4, 3);
    std::vector<TrainingItem> batch;
    for (int i = 0; i < 8; ++i) batch.push_back({i % 2 ? &a : &b, ConditionId::of(i % 2)});
    Rng rng(seed + 1);
    TransformerStepOptions opt;
    opt.lr = 3e-3;
    std::vector<double> losses;
    for (int step = 0; step < 150; ++step) losses.push_back(transformer_train_step(model, state, batch, opt, rng));
    return losses;
  };
  auto l1 = run(5);
  CHECK(l1 == run(5));
  MESSAGE("loss " << l1.front() << " -> " << l1.back());
  CHECK(l1.back() < 0.5 * l1.front());

  SUBCASE("frozen code embeddings stay fixed") {
    auto frozen = cfg;
    frozen.freeze_code_embeddings = true;
    Rng init(1);
    ContextualTransformer model(frozen, init);
    const Tensor before = model.code_embeddings().value;
    auto state = numeric::OptimizerState::for_parameters(model.trainable_parameters());
    CodeStackMap a(1, 3, 2, 4, 1);
    std::vector<TrainingItem> batch{{&a, ConditionId::of(0)}};
    Rng rng(2);
    for (int i = 0; i < 5; ++i) transformer_train_step(model, state, batch, {}, rng);
    CHECK(model.code_embeddings().value == before);
  }
}
