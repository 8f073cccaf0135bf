#include <cstdint>
#include <iostream>
#include <optional>
#include <sstream>
#include <type_traits>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "draftrevise/errors.hpp"
#include "draftrevise/pipeline/commands.hpp"
#include "draftrevise/pipeline/parallel.hpp"

using namespace draftrevise;
using namespace draftrevise::pipeline;

namespace {

struct Flags {
  std::string config_path;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> t_draft, t_revise, revise_iters;
  std::optional<double> temperature, guidance;
  std::optional<std::string> strategy, cls, region, rqvae, transformer;
  CommandOptions options;
};

// later sources win: defaults, config file, --set, dedicated flags
RunConfig build_config(const Flags& f) {
  RunConfig c = f.config_path.empty() ? RunConfig() : RunConfig::from_file(f.config_path);
  for (const auto& s : f.sets) c.set_assignment(s);
  auto put = [&](const char* key, const auto& v) {
    if (v) {
      if constexpr (std::is_same_v<std::decay_t<decltype(*v)>, std::string>) {
        c.set(key, *v);
      } else {
        std::ostringstream os;
        os.precision(17);
        os << *v;
        c.set(key, os.str());
      }
    }
  };
  put("seed", f.seed);
  put("t_draft", f.t_draft);
  put("t_revise", f.t_revise);
  put("revise_iters", f.revise_iters);
  put("temperature", f.temperature);
  put("guidance", f.guidance);
  put("strategy", f.strategy);
  put("class", f.cls);
  put("rqvae_checkpoint", f.rqvae);
  put("transformer_checkpoint", f.transformer);
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Draft-and-Revise: residual-quantized image codes, masked stack modeling and decoding"};
  app.require_subcommand(1);
  Flags f;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", f.config_path, "key=value config file");
    sub->add_option("--set", f.sets, "override one config key (key=value), repeatable");
    sub->add_option("--seed", f.seed, "run seed");
    sub->add_option("--out", f.options.out, "output directory");
  };
  auto add_decode = [&](CLI::App* sub) {
    sub->add_option("--t-draft", f.t_draft, "draft partition size");
    sub->add_option("--t-revise", f.t_revise, "revise partition size");
    sub->add_option("--revise-iters", f.revise_iters, "number of revise passes M");
    sub->add_option("--temperature", f.temperature, "revise temperature");
    sub->add_option("--guidance", f.guidance, "revise guidance scale");
    sub->add_option("--strategy", f.strategy, "draft strategy")->check(CLI::IsMember({"random", "topc", "topc50"}));
    sub->add_option("--class", f.cls, "class index or 'null'");
    sub->add_option("--rqvae", f.rqvae, "autoencoder checkpoint");
    sub->add_option("--transformer", f.transformer, "transformer checkpoint");
  };

  auto* gen = app.add_subcommand("gen-data", "write the sprite set or the synthetic code table");
  add_common(gen);

  auto* rqvae = app.add_subcommand("train-rqvae", "train the patch autoencoder and shared codebook");
  add_common(rqvae);
  auto* tf = app.add_subcommand("train-transformer", "train the contextual transformer");
  add_common(tf);
  tf->add_option("--rqvae", f.rqvae, "autoencoder checkpoint");
  for (auto* sub : {rqvae, tf}) {
    sub->add_option("--resume", f.options.resume, "continue from this checkpoint");
    sub->add_option("--stop-at", f.options.stop_at, "stop after this many total steps");
  }

  auto* sample = app.add_subcommand("sample", "draft-and-revise sampling");
  add_common(sample);
  add_decode(sample);
  sample->add_flag("--dump-stages", f.options.dump_stages, "also write the draft and every revision");

  auto* inpaint = app.add_subcommand("inpaint", "regenerate a rectangle of an image's codes");
  add_common(inpaint);
  add_decode(inpaint);
  inpaint->add_flag("--dump-stages", f.options.dump_stages, "also write the draft and every revision");
  inpaint->add_option("--input", f.options.input, "PPM image (sprites) or code map (synthetic)")->required();
  inpaint->add_option("--region", f.region, "x0,y0,x1,y1 in code-grid coordinates, half-open")->required();

  auto* eval = app.add_subcommand("eval", "metrics against held-out data and the exact oracle");
  add_common(eval);
  add_decode(eval);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    worker_count();  // a bad DRAFTREVISE_THREADS fails before any work
    f.options.config = build_config(f);
    if (f.region) f.options.region = parse_region(*f.region);
    if (*gen) gen_data_cmd(f.options);
    if (*rqvae) train_rqvae_cmd(f.options);
    if (*tf) train_transformer_cmd(f.options);
    if (*sample) sample_cmd(f.options);
    if (*inpaint) inpaint_cmd(f.options);
    if (*eval) eval_cmd(f.options);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const IoError& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return 3;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 4;
  } catch (const std::invalid_argument& e) {
    // precondition failures reachable from user input
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
