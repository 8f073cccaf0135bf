#include "draftrevise/pipeline/training.hpp"

#include <algorithm>
#include <stdexcept>
#include <utility>

#include "draftrevise/errors.hpp"
#include "draftrevise/numeric/rng.hpp"

namespace draftrevise::pipeline {

using numeric::Rng;

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t p) { return numeric::mix64(seed ^ numeric::mix64(p)); }

std::vector<Sprite> training_sprites(const RunConfig& c) {
  return make_sprites(c.get_size("sprite_count"), derive_seed(c.get_u64("seed"), purpose::kTrainData),
                      c.get_size("image_size"));
}

std::vector<Sprite> heldout_sprites(const RunConfig& c) {
  return make_sprites(c.get_size("heldout_count"), derive_seed(c.get_u64("seed"), purpose::kHeldoutData),
                      c.get_size("image_size"));
}

std::vector<Image> images_of(std::span<const Sprite> sprites) {
  std::vector<Image> out;
  out.reserve(sprites.size());
  for (const auto& s : sprites) out.push_back(s.image);
  return out;
}

SyntheticCodes synthetic_codes(const RunConfig& c) {
  return make_synthetic_codes(c.get_size("synth_positions"), c.get_size("synth_depth"),
                              c.get_size("synth_codebook"), c.get_size("synth_classes"),
                              c.get_u64("synth_structure_seed"));
}

// ---- autoencoder ------------------------------------------------------------

RqvaeState init_rqvae(const RunConfig& c) {
  if (is_synthetic(c)) throw ConfigError("the autoencoder trains on sprites; dataset is synthetic");
  RqvaeState s;
  s.config = c;
  Rng rng(derive_seed(c.get_u64("seed"), purpose::kRqvaeInit));
  s.model = autoencoder::Autoencoder(autoencoder_config(c), rng);
  // all zeros: step 0 seeds every code from batch residuals
  s.codebook = rq::Codebook(c.get_size("codebook_size"), c.get_size("latent_dim"), codebook_options(c));
  s.optimizer = numeric::OptimizerState::for_parameters(s.model.parameters());
  return s;
}

Checkpoint to_checkpoint(const RqvaeState& s) {
  Checkpoint ck;
  ck.config_text = s.config.to_text();
  ck.meta["kind"] = "rqvae";
  ck.meta["step"] = std::to_string(s.step);
  store_parameters(ck, s.model.parameters());
  ck.add("codebook.embeddings", s.codebook.embeddings());
  ck.add("codebook.cluster_size", s.codebook.cluster_size());
  ck.add("codebook.embed_sum", s.codebook.embed_sum());
  store_optimizer(ck, s.model.parameters(), s.optimizer);
  return ck;
}

RqvaeState rqvae_from_checkpoint(const Checkpoint& ck) {
  if (ck.meta_value("kind") != "rqvae") throw ConfigError("expected an autoencoder checkpoint");
  RqvaeState s = init_rqvae(RunConfig::from_text(ck.config_text, "checkpoint config"));
  load_parameters(ck, s.model.parameters());
  const std::size_t k = s.codebook.size(), dim = s.codebook.dim();
  s.codebook = rq::Codebook(ck.tensor("codebook.embeddings", {k, dim}), s.codebook.options());
  s.codebook.cluster_size() = ck.tensor("codebook.cluster_size", {k});
  s.codebook.embed_sum() = ck.tensor("codebook.embed_sum", {k, dim});
  load_optimizer(ck, std::as_const(s.model).parameters(), s.optimizer);
  s.step = std::stoull(ck.meta_value("step"));
  return s;
}

RqvaeState load_rqvae(const std::string& path) { return rqvae_from_checkpoint(Checkpoint::load(path)); }

void train_rqvae(RqvaeState& s, std::span<const Image> data, std::uint64_t stop_at,
                 const std::function<void(const RqvaeRow&)>& log) {
  const RunConfig& c = s.config;
  if (data.empty()) throw ConfigError("no training images");
  const std::uint64_t total = c.get_size("rqvae_steps");
  const std::size_t batch = c.get_size("rqvae_batch");
  if (batch == 0) throw ConfigError("rqvae_batch must be positive");
  autoencoder::TrainStepOptions opt;
  opt.beta = c.get_double("beta");
  opt.depth = c.get_size("depth");
  opt.adamw = {c.get_double("adam_beta1"), c.get_double("adam_beta2"), c.get_double("weight_decay"), 1e-8};
  opt.dead_code_threshold = c.get_double("dead_code_threshold");
  opt.warmup = c.get_size("rqvae_warmup");
  const std::uint64_t seed = derive_seed(c.get_u64("seed"), purpose::kRqvaeSteps);
  const std::uint64_t end = std::min(stop_at, total);
  std::vector<Image> items(batch);
  for (; s.step < end; ++s.step) {
    Rng rng = Rng::stream(seed, s.step);
    for (auto& img : items) img = data[rng.below(data.size())];
    opt.lr = numeric::cosine_lr(s.step, total, c.get_double("rqvae_lr"), c.get_double("rqvae_lr_final"));
    const auto loss = autoencoder::autoencoder_train_step(s.model, s.codebook, s.optimizer, items, opt, s.step, rng);
    if (log) log({s.step, opt.lr, loss});
  }
}

CodeStackMap encode_codes(const RqvaeState& s, const Image& image) {
  return autoencoder::quantize_map(s.model.encode(image), s.codebook, s.config.get_size("depth")).codes;
}

Image decode_codes(const RqvaeState& s, const CodeStackMap& codes) { return s.model.decode(codes, s.codebook); }

double reconstruction_mse(const RqvaeState& s, std::span<const Image> images) {
  if (images.empty()) return 0.0;
  double total = 0.0;
  for (const auto& img : images) {
    const auto q = autoencoder::quantize_map(s.model.encode(img), s.codebook, s.config.get_size("depth"));
    const Image rec = s.model.decode(q.quantized);
    double se = 0.0;
    for (std::size_t i = 0; i < img.pixels.size(); ++i) {
      const double d = rec.pixels[i] - img.pixels[i];
      se += d * d;
    }
    total += se / static_cast<double>(img.pixels.size());
  }
  return total / static_cast<double>(images.size());
}

std::vector<LabeledCodes> code_dataset(const RunConfig& c, const RqvaeState* rqvae, bool heldout) {
  const std::uint64_t seed = c.get_u64("seed");
  if (is_synthetic(c)) {
    const auto codes = synthetic_codes(c);
    return heldout ? sample_synthetic(codes, c.get_size("heldout_count"), derive_seed(seed, purpose::kHeldoutData))
                   : sample_synthetic(codes, c.get_size("synth_count"), derive_seed(seed, purpose::kTrainData));
  }
  if (!rqvae) throw ConfigError("sprite code maps need an autoencoder checkpoint");
  const auto sprites = heldout ? heldout_sprites(c) : training_sprites(c);
  std::vector<LabeledCodes> out;
  out.reserve(sprites.size());
  for (const auto& sp : sprites) out.push_back({encode_codes(*rqvae, sp.image), sp.label});
  return out;
}

// ---- transformer ------------------------------------------------------------

namespace {

void check_compatible(const RunConfig& c, const RqvaeState& r) {
  for (const char* key : {"image_size", "patch", "latent_dim", "codebook_size", "depth"}) {
    if (c.get(key) != r.config.get(key)) {
      throw ConfigError(std::string("config key '") + key + "' = " + c.get(key) +
                        " disagrees with the autoencoder checkpoint (" + r.config.get(key) + ")");
    }
  }
}

}  // namespace

TransformerState init_transformer(const RunConfig& c, const RqvaeState* rqvae) {
  TransformerState s;
  s.config = c;
  Rng rng(derive_seed(c.get_u64("seed"), purpose::kTransformerInit));
  s.model = transformer::ContextualTransformer(transformer_config(c), rng);
  if (!is_synthetic(c)) {
    if (!rqvae) throw ConfigError("sprite transformer needs an autoencoder checkpoint");
    check_compatible(c, *rqvae);
    s.model.init_code_embeddings(rqvae->codebook);
  }
  s.optimizer = numeric::OptimizerState::for_parameters(s.model.trainable_parameters());
  return s;
}

Checkpoint to_checkpoint(const TransformerState& s) {
  Checkpoint ck;
  ck.config_text = s.config.to_text();
  ck.meta["kind"] = "transformer";
  ck.meta["step"] = std::to_string(s.step);
  store_parameters(ck, s.model.parameters());
  store_optimizer(ck, s.model.trainable_parameters(), s.optimizer);
  return ck;
}

TransformerState transformer_from_checkpoint(const Checkpoint& ck) {
  if (ck.meta_value("kind") != "transformer") throw ConfigError("expected a transformer checkpoint");
  TransformerState s;
  s.config = RunConfig::from_text(ck.config_text, "checkpoint config");
  Rng rng(derive_seed(s.config.get_u64("seed"), purpose::kTransformerInit));
  s.model = transformer::ContextualTransformer(transformer_config(s.config), rng);
  load_parameters(ck, s.model.parameters());
  load_optimizer(ck, std::as_const(s.model).trainable_parameters(), s.optimizer);
  s.step = std::stoull(ck.meta_value("step"));
  return s;
}

TransformerState load_transformer(const std::string& path) {
  return transformer_from_checkpoint(Checkpoint::load(path));
}

void train_transformer(TransformerState& s, std::span<const LabeledCodes> data, std::uint64_t stop_at,
                       const std::function<void(const TransformerRow&)>& log) {
  const RunConfig& c = s.config;
  if (data.empty()) throw ConfigError("no training code maps");
  const auto& tc = s.model.config();
  for (const auto& d : data) {
    if (d.codes.positions() != tc.positions || d.codes.depth() != tc.depth ||
        d.codes.codebook_size() != tc.codebook_size) {
      throw ConfigError("code maps do not match the transformer dimensions");
    }
  }
  const std::uint64_t total = c.get_size("tf_steps");
  const std::size_t batch = c.get_size("tf_batch");
  if (batch == 0) throw ConfigError("tf_batch must be positive");
  transformer::TransformerStepOptions opt;
  opt.adamw = {c.get_double("adam_beta1"), c.get_double("adam_beta2"), c.get_double("weight_decay"), 1e-8};
  opt.condition_drop = c.get_double("condition_drop");
  const std::uint64_t seed = derive_seed(c.get_u64("seed"), purpose::kTransformerSteps);
  const std::uint64_t end = std::min(stop_at, total);
  std::vector<transformer::TrainingItem> items(batch);
  for (; s.step < end; ++s.step) {
    Rng rng = Rng::stream(seed, s.step);
    for (auto& item : items) {
      const auto& d = data[rng.below(data.size())];
      item = {&d.codes, transformer::ConditionId::of(d.label)};
    }
    opt.lr = numeric::cosine_lr(s.step, total, c.get_double("tf_lr"), c.get_double("tf_lr_final"));
    const double loss = transformer::transformer_train_step(s.model, s.optimizer, items, opt, rng);
    if (log) log({s.step, opt.lr, loss});
  }
}

CodeStackMap reshape(const CodeStackMap& m, std::size_t height, std::size_t width) {
  if (height * width != m.positions()) throw std::invalid_argument("reshape: position count differs");
  CodeStackMap out(height, width, m.depth(), m.codebook_size());
  for (std::size_t n = 0; n < m.positions(); ++n) out.set_stack(n, m.stack(n));
  return out;
}

}  // namespace draftrevise::pipeline
