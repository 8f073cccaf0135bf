#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "draftrevise/pipeline/config.hpp"

namespace draftrevise::pipeline {

/// Half-open rectangle [x0, x1) x [y0, y1) in code-grid (patch) coordinates.
struct Region {
  std::size_t x0 = 0, y0 = 0, x1 = 0, y1 = 0;
};

/// "x0,y0,x1,y1"; ConfigError on bad syntax or an empty rectangle.
Region parse_region(const std::string& text);

struct CommandOptions {
  RunConfig config;
  std::string out = ".";
  std::optional<std::string> resume;
  std::optional<std::uint64_t> stop_at;
  bool dump_stages = false;
  std::optional<std::string> input;
  std::optional<Region> region;
};

/// Each command writes under options.out and reports progress on stderr.
///
///   gen-data            sprites/*.ppm + labels.csv, or the synthetic table,
///                       codes.rqcm and labels.csv
///   train-rqvae         rqvae.ckpt, rqvae_loss.csv, rqvae_eval.csv
///   train-transformer   transformer.ckpt, transformer_loss.csv
///   sample              sample_XXXX.rqcm (+ .ppm), stages, samples.csv
///   inpaint             source.rqcm, inpaint.rqcm (+ .ppm)
///   eval                eval.csv (draft timing on stderr)
void gen_data_cmd(const CommandOptions& o);
void train_rqvae_cmd(const CommandOptions& o);
void train_transformer_cmd(const CommandOptions& o);
void sample_cmd(const CommandOptions& o);
void inpaint_cmd(const CommandOptions& o);
void eval_cmd(const CommandOptions& o);

}  // namespace draftrevise::pipeline
