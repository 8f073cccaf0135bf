#include "draftrevise/pipeline/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "draftrevise/errors.hpp"

namespace draftrevise::pipeline {

namespace {

enum class Kind { kSize, kU64, kDouble, kBool, kString, kChoice };

struct Key {
  const char* name;
  const char* value;
  Kind kind;
  const char* choices = "";
};

// Defaults are the sprite setup; configs/ holds the toy variant.
const std::vector<Key>& table() {
  static const std::vector<Key> keys = {
      {"seed", "0", Kind::kU64},
      {"dataset", "sprites", Kind::kChoice, "sprites synthetic"},
      {"image_size", "16", Kind::kSize},
      {"sprite_count", "4000", Kind::kSize},
      {"heldout_count", "256", Kind::kSize},
      {"synth_positions", "2", Kind::kSize},
      {"synth_depth", "2", Kind::kSize},
      {"synth_codebook", "3", Kind::kSize},
      {"synth_classes", "2", Kind::kSize},
      {"synth_count", "100000", Kind::kSize},
      {"synth_structure_seed", "1", Kind::kU64},
      {"patch", "4", Kind::kSize},
      {"latent_dim", "16", Kind::kSize},
      {"ae_hidden", "64", Kind::kSize},
      {"codebook_size", "64", Kind::kSize},
      {"depth", "4", Kind::kSize},
      {"beta", "0.25", Kind::kDouble},
      {"ema_decay", "0.99", Kind::kDouble},
      {"dead_code_threshold", "0.1", Kind::kDouble},
      {"rqvae_warmup", "100", Kind::kSize},
      {"rqvae_steps", "5000", Kind::kSize},
      {"rqvae_batch", "16", Kind::kSize},
      {"rqvae_lr", "3e-3", Kind::kDouble},
      {"rqvae_lr_final", "1e-4", Kind::kDouble},
      {"spatial_blocks", "2", Kind::kSize},
      {"depth_blocks", "1", Kind::kSize},
      {"d_model", "64", Kind::kSize},
      {"heads", "2", Kind::kSize},
      {"ff_multiplier", "4", Kind::kSize},
      {"init_std", "0.02", Kind::kDouble},
      {"freeze_code_embeddings", "false", Kind::kBool},
      {"tf_steps", "3000", Kind::kSize},
      {"tf_batch", "32", Kind::kSize},
      {"tf_lr", "1e-3", Kind::kDouble},
      {"tf_lr_final", "1e-5", Kind::kDouble},
      {"condition_drop", "0.1", Kind::kDouble},
      {"adam_beta1", "0.9", Kind::kDouble},
      {"adam_beta2", "0.95", Kind::kDouble},
      {"weight_decay", "1e-4", Kind::kDouble},
      {"t_draft", "16", Kind::kSize},
      {"t_revise", "2", Kind::kSize},
      {"revise_iters", "2", Kind::kSize},
      {"temperature", "0.8", Kind::kDouble},
      {"guidance", "1.8", Kind::kDouble},
      {"strategy", "random", Kind::kChoice, "random topc topc50"},
      {"class", "null", Kind::kString},
      {"samples", "16", Kind::kSize},
      {"eval_probes", "200", Kind::kSize},
      {"eval_temperature", "0.8", Kind::kDouble},
      {"eval_samples", "50000", Kind::kSize},
      {"eval_entropy_samples", "10000", Kind::kSize},
      {"eval_entropy_seeds", "5", Kind::kSize},
      {"eval_nll_batches", "8", Kind::kSize},
      {"timing_samples", "32", Kind::kSize},
      {"log_every", "100", Kind::kSize},
      {"rqvae_checkpoint", "", Kind::kString},
      {"transformer_checkpoint", "", Kind::kString},
  };
  return keys;
}

const Key* find_key(const std::string& name) {
  for (const auto& k : table())
    if (name == k.name) return &k;
  return nullptr;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
bool parse_integer(const std::string& text, T& out) {
  const char* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, out);
  return ec == std::errc() && ptr == end;
}

bool parse_double(const std::string& text, double& out) {
  if (text.empty()) return false;
  std::istringstream in(text);
  in.imbue(std::locale::classic());
  in >> out;
  return !in.fail() && in.eof() && std::isfinite(out);
}

void check_value(const Key& key, const std::string& value) {
  bool ok = true;
  switch (key.kind) {
    case Kind::kSize: {
      std::size_t v;
      ok = parse_integer(value, v);
      break;
    }
    case Kind::kU64: {
      std::uint64_t v;
      ok = parse_integer(value, v);
      break;
    }
    case Kind::kDouble: {
      double v;
      ok = parse_double(value, v);
      break;
    }
    case Kind::kBool:
      ok = value == "true" || value == "false";
      break;
    case Kind::kChoice: {
      std::istringstream in(key.choices);
      std::string c;
      ok = false;
      while (in >> c) ok = ok || c == value;
      break;
    }
    case Kind::kString:
      break;
  }
  if (!ok) throw ConfigError("config: bad value '" + value + "' for key '" + key.name + "'");
}

}  // namespace

RunConfig::RunConfig() {
  for (const auto& k : table()) values_[k.name] = k.value;
}

RunConfig RunConfig::from_text(const std::string& text, const std::string& origin) {
  RunConfig c;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected key = value");
    }
    try {
      c.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return c;
}

RunConfig RunConfig::from_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read config file " + path);
  std::ostringstream text;
  text << in.rdbuf();
  return from_text(text.str(), path);
}

void RunConfig::set(const std::string& key, const std::string& value) {
  const Key* k = find_key(key);
  if (!k) throw ConfigError("config: unknown key '" + key + "'");
  check_value(*k, value);
  values_[key] = value;
}

void RunConfig::set_assignment(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("expected key=value, got '" + assignment + "'");
  set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

const std::string& RunConfig::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("config: unknown key '" + key + "'");
  return it->second;
}

std::size_t RunConfig::get_size(const std::string& key) const {
  std::size_t v = 0;
  if (!parse_integer(get(key), v)) throw ConfigError("config: key '" + key + "' is not an integer");
  return v;
}

std::uint64_t RunConfig::get_u64(const std::string& key) const {
  std::uint64_t v = 0;
  if (!parse_integer(get(key), v)) throw ConfigError("config: key '" + key + "' is not an integer");
  return v;
}

double RunConfig::get_double(const std::string& key) const {
  double v = 0.0;
  if (!parse_double(get(key), v)) throw ConfigError("config: key '" + key + "' is not a number");
  return v;
}

bool RunConfig::get_bool(const std::string& key) const { return get(key) == "true"; }

std::string RunConfig::to_text() const {
  std::string out;
  for (const auto& k : table()) out += std::string(k.name) + " = " + values_.at(k.name) + "\n";
  return out;
}

const std::vector<std::string>& RunConfig::keys() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> v;
    for (const auto& k : table()) v.emplace_back(k.name);
    return v;
  }();
  return names;
}

Dataset dataset(const RunConfig& c) {
  return c.get("dataset") == "synthetic" ? Dataset::kSynthetic : Dataset::kSprites;
}

bool is_synthetic(const RunConfig& c) { return dataset(c) == Dataset::kSynthetic; }

autoencoder::AutoencoderConfig autoencoder_config(const RunConfig& c) {
  autoencoder::AutoencoderConfig a;
  a.patch = c.get_size("patch");
  a.channels = 3;
  a.latent_dim = c.get_size("latent_dim");
  a.hidden = c.get_size("ae_hidden");
  const std::size_t size = c.get_size("image_size");
  if (a.patch == 0 || size == 0 || size % a.patch != 0) {
    throw ConfigError("config: image_size must be a positive multiple of patch");
  }
  if (a.latent_dim == 0 || a.hidden == 0) throw ConfigError("config: latent_dim and ae_hidden must be positive");
  return a;
}

rq::CodebookOptions codebook_options(const RunConfig& c) {
  rq::CodebookOptions o;
  o.decay = c.get_double("ema_decay");
  if (!(o.decay > 0.0 && o.decay < 1.0)) throw ConfigError("config: ema_decay must lie in (0, 1)");
  return o;
}

std::size_t grid_height(const RunConfig& c) {
  if (is_synthetic(c)) return 1;
  return c.get_size("image_size") / autoencoder_config(c).patch;
}

std::size_t grid_width(const RunConfig& c) {
  if (is_synthetic(c)) return c.get_size("synth_positions");
  return c.get_size("image_size") / autoencoder_config(c).patch;
}

std::size_t positions(const RunConfig& c) { return grid_height(c) * grid_width(c); }

std::size_t code_depth(const RunConfig& c) {
  return c.get_size(is_synthetic(c) ? "synth_depth" : "depth");
}

std::size_t codebook_size(const RunConfig& c) {
  return c.get_size(is_synthetic(c) ? "synth_codebook" : "codebook_size");
}

std::size_t num_classes(const RunConfig& c) {
  // sprites: 4 shapes x 2 colours
  return is_synthetic(c) ? c.get_size("synth_classes") : 8;
}

transformer::TransformerConfig transformer_config(const RunConfig& c) {
  transformer::TransformerConfig t;
  t.spatial_blocks = c.get_size("spatial_blocks");
  t.depth_blocks = c.get_size("depth_blocks");
  t.d_model = c.get_size("d_model");
  t.heads = c.get_size("heads");
  t.ff_multiplier = c.get_size("ff_multiplier");
  t.codebook_size = codebook_size(c);
  t.depth = code_depth(c);
  t.positions = positions(c);
  t.code_dim = c.get_size("latent_dim");
  t.num_classes = num_classes(c);
  t.init_std = c.get_double("init_std");
  t.freeze_code_embeddings = c.get_bool("freeze_code_embeddings");
  t.validate();
  return t;
}

decoding::DecodePlan decode_plan(const RunConfig& c, std::size_t positions) {
  decoding::DecodePlan p;
  p.t_draft = c.get_size("t_draft");
  p.t_revise = c.get_size("t_revise");
  p.revise_iters = c.get_size("revise_iters");
  p.temperature = c.get_double("temperature");
  p.guidance = c.get_double("guidance");
  p.strategy = decoding::parse_strategy(c.get("strategy"));
  p.validate(positions);
  return p;
}

transformer::ConditionId condition(const RunConfig& c, std::size_t classes) {
  const std::string& v = c.get("class");
  if (v == "null") return transformer::ConditionId::null();
  std::size_t cls = 0;
  if (!parse_integer(v, cls) || cls >= classes) {
    throw ConfigError("config: class must be 'null' or an index below " + std::to_string(classes));
  }
  return transformer::ConditionId::of(cls);
}

}  // namespace draftrevise::pipeline
