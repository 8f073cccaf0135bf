#include "draftrevise/pipeline/commands.hpp"

#include <charconv>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>

#include "draftrevise/errors.hpp"
#include "draftrevise/pipeline/eval.hpp"
#include "draftrevise/pipeline/io.hpp"
#include "draftrevise/pipeline/parallel.hpp"
#include "draftrevise/pipeline/training.hpp"

namespace draftrevise::pipeline {

using transformer::ConditionId;

namespace {

std::string checkpoint_path(const CommandOptions& o, const char* key, const char* file) {
  const std::string& configured = o.config.get(key);
  return configured.empty() ? join_path(o.out, file) : configured;
}

std::string numbered(const std::string& prefix, std::size_t i, const std::string& suffix) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%04zu", i);
  return prefix + buf + suffix;
}

// Rows of an existing CSV below `step`, so a resumed run continues the file.
std::string csv_prefix(const std::string& path, const std::string& header, std::uint64_t step) {
  std::string out = header;
  if (step == 0 || !std::filesystem::exists(path)) return out;
  std::istringstream in(read_text(path));
  std::string line;
  std::getline(in, line);
  if (line + "\n" != header) throw IoError(path + ": unexpected CSV header, cannot resume into it");
  while (std::getline(in, line)) {
    std::uint64_t s = 0;
    auto [p, ec] = std::from_chars(line.data(), line.data() + line.size(), s);
    if (ec != std::errc() || p == line.data() + line.size() || *p != ',') throw IoError(path + ": bad CSV row");
    if (s < step) out += line + "\n";
  }
  return out;
}

bool should_log(const RunConfig& c, std::uint64_t step, std::uint64_t total) {
  const std::size_t every = c.get_size("log_every");
  return every > 0 && (step % every == 0 || step + 1 == total);
}

const char* condition_name(ConditionId c, std::string& buf) {
  buf = c.is_null() ? "null" : std::to_string(c.index());
  return buf.c_str();
}

struct Loaded {
  TransformerState transformer;
  std::optional<RqvaeState> rqvae;
};

Loaded load_models(const CommandOptions& o) {
  Loaded l{load_transformer(checkpoint_path(o, "transformer_checkpoint", "transformer.ckpt")), std::nullopt};
  if (!is_synthetic(l.transformer.config)) {
    l.rqvae = load_rqvae(checkpoint_path(o, "rqvae_checkpoint", "rqvae.ckpt"));
  }
  return l;
}

void write_map_files(const Loaded& m, const std::string& stem, const CodeStackMap& codes) {
  write_code_map(stem + ".rqcm", codes);
  if (m.rqvae) write_ppm(stem + ".ppm", decode_codes(*m.rqvae, codes));
}

}  // namespace

Region parse_region(const std::string& text) {
  Region r;
  std::size_t* fields[4] = {&r.x0, &r.y0, &r.x1, &r.y1};
  const char* p = text.data();
  const char* end = p + text.size();
  for (int i = 0; i < 4; ++i) {
    auto [next, ec] = std::from_chars(p, end, *fields[i]);
    if (ec != std::errc() || (i < 3 && (next == end || *next != ',')) || (i == 3 && next != end)) {
      throw ConfigError("region must look like x0,y0,x1,y1; got '" + text + "'");
    }
    p = next + 1;
  }
  if (r.x1 <= r.x0 || r.y1 <= r.y0) throw ConfigError("region '" + text + "' is empty");
  return r;
}

void gen_data_cmd(const CommandOptions& o) {
  const RunConfig& c = o.config;
  ensure_directory(o.out);
  std::string labels = "index,label\n";
  if (is_synthetic(c)) {
    const auto codes = synthetic_codes(c);
    std::string table = "class,state,codes,probability\n";
    for (std::size_t cls = 0; cls < codes.classes(); ++cls) {
      for (std::size_t s = 0; s < codes.states(); ++s) {
        const auto m = codes.state_map(s);
        std::string text;
        for (std::size_t n = 0; n < m.positions(); ++n) {
          if (n) text += ";";
          for (std::size_t d = 0; d < m.depth(); ++d) text += (d ? " " : "") + std::to_string(m.at(n, d));
        }
        table += std::to_string(cls) + "," + std::to_string(s) + "," + text + "," +
                 format_number(codes.table[cls][s]) + "\n";
      }
    }
    write_text(join_path(o.out, "synthetic_table.csv"), table);
    const auto data = code_dataset(c, nullptr, false);
    std::vector<CodeStackMap> maps;
    for (std::size_t i = 0; i < data.size(); ++i) {
      maps.push_back(data[i].codes);
      labels += std::to_string(i) + "," + std::to_string(data[i].label) + "\n";
    }
    write_code_maps(join_path(o.out, "codes.rqcm"), maps);
    std::cerr << "wrote " << codes.states() << "-state table and " << data.size() << " code maps\n";
  } else {
    const auto sprites = training_sprites(c);
    const std::string dir = join_path(o.out, "sprites");
    ensure_directory(dir);
    for (std::size_t i = 0; i < sprites.size(); ++i) {
      write_ppm(join_path(dir, numbered("", i, ".ppm")), sprites[i].image);
      labels += std::to_string(i) + "," + std::to_string(sprites[i].label) + "\n";
    }
    std::cerr << "wrote " << sprites.size() << " sprites\n";
  }
  write_text(join_path(o.out, "labels.csv"), labels);
}

void train_rqvae_cmd(const CommandOptions& o) {
  ensure_directory(o.out);
  RqvaeState s = o.resume ? load_rqvae(*o.resume) : init_rqvae(o.config);
  const RunConfig& c = s.config;
  const auto data = images_of(training_sprites(c));
  const std::string csv_path = join_path(o.out, "rqvae_loss.csv");
  std::string csv = csv_prefix(csv_path, "step,lr,loss,reconstruction,commitment,reseeded\n", s.step);
  const std::uint64_t total = c.get_size("rqvae_steps");
  const auto start = std::chrono::steady_clock::now();
  train_rqvae(s, data, o.stop_at.value_or(total), [&](const RqvaeRow& r) {
    csv += std::to_string(r.step) + "," + format_number(r.lr) + "," + format_number(r.loss.total) + "," +
           format_number(r.loss.reconstruction) + "," + format_number(r.loss.commitment) + "," +
           std::to_string(r.loss.reseeded) + "\n";
    if (should_log(c, r.step, total)) {
      std::cerr << "rqvae step " << r.step << " loss " << r.loss.total << " recon " << r.loss.reconstruction
                << "\n";
    }
  });
  write_text(csv_path, csv);
  to_checkpoint(s).save(join_path(o.out, "rqvae.ckpt"));
  const auto heldout = images_of(heldout_sprites(c));
  EvalReport report;
  report.add("step", static_cast<double>(s.step));
  report.add("heldout_mse", reconstruction_mse(s, heldout));
  report.add("residual_monotone_fraction", monotone_residual_fraction(s, heldout));
  write_text(join_path(o.out, "rqvae_eval.csv"), report.csv());
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  std::cerr << "rqvae done at step " << s.step << " in " << secs << " s\n";
}

void train_transformer_cmd(const CommandOptions& o) {
  ensure_directory(o.out);
  std::optional<TransformerState> s;
  if (o.resume) s = load_transformer(*o.resume);
  const RunConfig& c = s ? s->config : o.config;
  std::optional<RqvaeState> rqvae;
  if (!is_synthetic(c)) {
    const std::string& configured = c.get("rqvae_checkpoint");
    rqvae = load_rqvae(configured.empty() ? join_path(o.out, "rqvae.ckpt") : configured);
  }
  if (!s) s = init_transformer(c, rqvae ? &*rqvae : nullptr);
  const auto data = code_dataset(s->config, rqvae ? &*rqvae : nullptr, false);
  std::optional<SyntheticCodes> oracle;
  if (is_synthetic(c)) oracle = synthetic_codes(c);

  const std::string csv_path = join_path(o.out, "transformer_loss.csv");
  std::string csv = csv_prefix(csv_path, "step,lr,loss\n", s->step);
  const std::uint64_t total = c.get_size("tf_steps");
  double smoothed = 0.0;
  const auto start = std::chrono::steady_clock::now();
  train_transformer(*s, data, o.stop_at.value_or(total), [&](const TransformerRow& r) {
    csv += std::to_string(r.step) + "," + format_number(r.lr) + "," + format_number(r.loss) + "\n";
    smoothed = r.step == 0 ? r.loss : 0.98 * smoothed + 0.02 * r.loss;
    if (should_log(c, r.step, total)) {
      std::cerr << "transformer step " << r.step << " loss " << r.loss << " smoothed " << smoothed;
      if (oracle) std::cerr << " cond_tv(50) " << conditional_match(s->model, *oracle, 50, r.step).max_tv;
      std::cerr << "\n";
    }
  });
  write_text(csv_path, csv);
  to_checkpoint(*s).save(join_path(o.out, "transformer.ckpt"));
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  std::cerr << "transformer done at step " << s->step << " in " << secs << " s\n";
}

void sample_cmd(const CommandOptions& o) {
  ensure_directory(o.out);
  const Loaded m = load_models(o);
  const auto& model = m.transformer.model;
  const RunConfig& arch = m.transformer.config;
  const decoding::DecodePlan plan = decode_plan(o.config, model.config().positions);
  const ConditionId cond = condition(o.config, model.config().num_classes);
  const std::size_t count = o.config.get_size("samples");
  const std::uint64_t seed = derive_seed(o.config.get_u64("seed"), purpose::kSampling);

  struct Result {
    CodeStackMap codes;
    std::vector<CodeStackMap> stages;
    decoding::DecodeStats stats;
    std::uint64_t seed = 0;
  };
  std::vector<Result> results(count);
  const auto start = std::chrono::steady_clock::now();
  parallel_for(count, [&](std::size_t i) {
    auto& r = results[i];
    decoding::DecodePlan p = plan;
    p.seed = r.seed = sample_seed(seed, i);
    r.codes = decoding::draft_and_revise(p, cond, model, &r.stats, o.dump_stages ? &r.stages : nullptr);
  });
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  std::string cname;
  std::string csv = "index,class,seed,forward_passes,writes\n";
  for (std::size_t i = 0; i < count; ++i) {
    const auto& r = results[i];
    const std::string stem = join_path(o.out, numbered("sample_", i, ""));
    write_map_files(m, stem, reshape(r.codes, grid_height(arch), grid_width(arch)));
    for (std::size_t j = 0; j < r.stages.size(); ++j) {
      write_map_files(m, stem + "_stage" + std::to_string(j),
                      reshape(r.stages[j], grid_height(arch), grid_width(arch)));
    }
    csv += std::to_string(i) + "," + condition_name(cond, cname) + "," + std::to_string(r.seed) + "," +
           std::to_string(r.stats.forward_passes) + "," + std::to_string(r.stats.writes) + "\n";
  }
  write_text(join_path(o.out, "samples.csv"), csv);
  std::cerr << count << " samples, " << (count ? secs / count : 0.0) << " s per sample\n";
}

void inpaint_cmd(const CommandOptions& o) {
  if (!o.input) throw ConfigError("inpaint needs --input");
  if (!o.region) throw ConfigError("inpaint needs --region x0,y0,x1,y1");
  ensure_directory(o.out);
  const Loaded m = load_models(o);
  const auto& model = m.transformer.model;
  const RunConfig& arch = m.transformer.config;
  const std::size_t gh = grid_height(arch), gw = grid_width(arch);

  CodeStackMap source;
  if (m.rqvae) {
    const Image img = read_ppm(*o.input);
    const std::size_t size = arch.get_size("image_size");
    if (img.height != size || img.width != size) {
      throw ConfigError(*o.input + ": expected a " + std::to_string(size) + "x" + std::to_string(size) + " image");
    }
    source = encode_codes(*m.rqvae, img);
  } else {
    source = read_code_map(*o.input);
    if (source.positions() != gh * gw || source.depth() != model.config().depth ||
        source.codebook_size() != model.config().codebook_size) {
      throw ConfigError(*o.input + ": code map does not match the model");
    }
    source = reshape(source, gh, gw);
  }
  const Region& r = *o.region;
  if (r.x1 > gw || r.y1 > gh) {
    throw ConfigError("region exceeds the " + std::to_string(gw) + "x" + std::to_string(gh) + " code grid");
  }
  transformer::MaskVector region(gh * gw);
  for (std::size_t y = r.y0; y < r.y1; ++y)
    for (std::size_t x = r.x0; x < r.x1; ++x) region.set(y * gw + x);

  decoding::DecodePlan plan = decode_plan(o.config, model.config().positions);
  plan.seed = derive_seed(o.config.get_u64("seed"), purpose::kSampling);
  if (plan.t_draft > region.count() || plan.t_revise > region.count()) {
    throw ConfigError("T_draft and T_revise must not exceed the region size " + std::to_string(region.count()));
  }
  std::vector<CodeStackMap> stages;
  const auto out = decoding::inpaint(source, region, condition(o.config, model.config().num_classes), plan, model,
                                     nullptr, o.dump_stages ? &stages : nullptr);
  write_map_files(m, join_path(o.out, "source"), source);
  write_map_files(m, join_path(o.out, "inpaint"), out);
  for (std::size_t j = 0; j < stages.size(); ++j) {
    write_map_files(m, join_path(o.out, "inpaint_stage" + std::to_string(j)), stages[j]);
  }
  std::cerr << "inpainted " << region.count() << " of " << region.size() << " positions\n";
}

void eval_cmd(const CommandOptions& o) {
  ensure_directory(o.out);
  const Loaded m = load_models(o);
  const auto& model = m.transformer.model;
  const RunConfig& arch = m.transformer.config;
  const RunConfig& c = o.config;
  const std::uint64_t seed = derive_seed(c.get_u64("seed"), purpose::kEval);
  const std::size_t classes = model.config().num_classes;
  const std::size_t n = model.config().positions;
  const decoding::DecodePlan plan = decode_plan(c, n);

  EvalReport report;
  if (m.rqvae) {
    const auto heldout = images_of(heldout_sprites(arch));
    report.add("reconstruction_mse", reconstruction_mse(*m.rqvae, heldout));
    report.add("residual_monotone_fraction", monotone_residual_fraction(*m.rqvae, heldout));
    std::cerr << "notice: oracle rows (conditional_tv, sample_tv) need the synthetic dataset; omitted\n";
  }
  const auto heldout_codes = code_dataset(arch, m.rqvae ? &*m.rqvae : nullptr, true);
  report.add("masked_nll", heldout_nll(model, heldout_codes, c.get_size("eval_nll_batches"),
                                       arch.get_size("tf_batch"), seed));
  if (!m.rqvae) {
    const auto oracle = synthetic_codes(arch);
    const auto match = conditional_match(model, oracle, c.get_size("eval_probes"), seed);
    report.add("conditional_tv_max", match.max_tv);
    report.add("conditional_tv_mean", match.mean_tv);
    report.add("conditional_tv_uniform_max", match.uniform_max_tv);
    report.add("sample_tv", sample_match(model, oracle, plan, c.get_size("eval_samples"), seed));
  }
  const std::size_t es = c.get_size("eval_entropy_samples"), seeds = c.get_size("eval_entropy_seeds");
  for (auto strategy : {decoding::Strategy::kRandom, decoding::Strategy::kTopC, decoding::Strategy::kTopC50}) {
    decoding::DecodePlan draft_only = plan;
    draft_only.revise_iters = 0;
    draft_only.strategy = strategy;
    report.add("entropy_draft_" + decoding::strategy_name(strategy),
               sample_entropy(model, draft_only, classes, es, seeds, seed));
  }
  decoding::DecodePlan hot = plan, cold = plan;
  hot.temperature = 1.0;
  cold.temperature = c.get_double("eval_temperature");
  cold.validate(n);
  report.add("entropy_revise_tau1", sample_entropy(model, hot, classes, es, seeds, seed));
  report.add("entropy_revise_tau_eval", sample_entropy(model, cold, classes, es, seeds, seed));
  write_text(join_path(o.out, "eval.csv"), report.csv());

  std::cerr << report.csv();
  // wall clock goes to stderr only so every written file stays reproducible
  const std::size_t reps = c.get_size("timing_samples");
  for (std::size_t t : {std::max<std::size_t>(1, n / 8), n}) {
    decoding::DecodePlan p = plan;
    p.t_draft = t;
    const auto conds = cycled_conditions(classes, reps);
    const auto start = std::chrono::steady_clock::now();
    for (std::size_t i = 0; i < reps; ++i) {
      p.seed = sample_seed(seed, i);
      decoding::draft_and_revise(p, conds[i], model);
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::cerr << "timing t_draft " << t << " seconds_per_sample " << (reps ? secs / reps : 0.0) << "\n";
  }

}

}  // namespace draftrevise::pipeline
