#include <cstdlib>
#include <filesystem>
#include <algorithm>
#include <fstream>
#include <string>

#include <sys/wait.h>

#include "doctest.h"
#include "draftrevise/pipeline/io.hpp"

using namespace draftrevise::pipeline;
namespace fs = std::filesystem;

namespace {

const fs::path kRoot = fs::path(DRAFTREVISE_SCRATCH_DIR) / "cli";

int run(const std::string& args, const std::string& env = "") {
  const std::string cmd = env + " " DRAFTREVISE_CLI " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string bytes_of(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// A trained (if barely) synthetic model under `dir`.
std::string synth_setup(const fs::path& dir) {
  fs::remove_all(dir);
  fs::create_directories(dir);
  const std::string conf = (dir / "synth.conf").string();
  std::ofstream(conf) << "dataset = synthetic\nsynth_count = 300\nheldout_count = 30\nlatent_dim = 4\n"
                         "d_model = 8\nspatial_blocks = 1\nff_multiplier = 2\ntf_steps = 10\ntf_batch = 4\n"
                         "t_draft = 2\nt_revise = 1\nsamples = 3\n";
  REQUIRE(run("train-transformer --config " + conf + " --out " + dir.string()) == 0);
  return conf;
}

}  // namespace

TEST_CASE("exit codes") {
  const fs::path dir = kRoot / "exit";
  const std::string conf = synth_setup(dir);
  const std::string out = " --out " + dir.string();

  CHECK(run("") == 2);
  CHECK(run("no-such-command") == 2);
  CHECK(run("sample --bogus-flag") == 2);
  CHECK(run("sample --strategy greedy --config " + conf + out) == 2);
  CHECK(run("sample --config " + conf + out + " --set nope=1") == 2);
  CHECK(run("sample --config " + conf + out + " --t-draft 3") == 2);
  CHECK(run("sample --config " + conf + out + " --class 7") == 2);
  CHECK(run("sample --config " + conf + out + " --temperature 0") == 2);
  CHECK(run("sample --config " + (dir / "missing.conf").string() + out) == 3);
  CHECK(run("sample --config " + conf + " --transformer " + (dir / "missing.ckpt").string() + out) == 3);
  CHECK(run("inpaint --config " + conf + out + " --input " + (dir / "none.rqcm").string() + " --region 0,0,1,1") == 3);
  CHECK(run("sample --config " + conf + out) == 0);
  CHECK(run("inpaint --config " + conf + out + " --input " + (dir / "sample_0000.rqcm").string() +
            " --region 0,0,3,1") == 2);  // out of bounds
  CHECK(run("inpaint --config " + conf + out + " --input " + (dir / "sample_0000.rqcm").string() +
            " --region 1,0,2,1") == 2);  // T_draft = 2 > one position
  CHECK(run("train-transformer --config " + conf + out, "DRAFTREVISE_THREADS=zero") == 2);

  // a corrupt checkpoint is an I/O error
  std::ofstream(dir / "bad.ckpt") << "RQCKgarbage";
  CHECK(run("sample --config " + conf + out + " --transformer " + (dir / "bad.ckpt").string()) == 3);
}

TEST_CASE("dump-stages writes the draft and every revision") {
  const fs::path dir = kRoot / "stages";
  const std::string conf = synth_setup(dir);
  REQUIRE(run("sample --config " + conf + " --out " + dir.string() + " --revise-iters 2 --dump-stages") == 0);
  for (int j = 0; j < 3; ++j) CHECK(fs::exists(dir / ("sample_0000_stage" + std::to_string(j) + ".rqcm")));
  CHECK_FALSE(fs::exists(dir / "sample_0000_stage3.rqcm"));
  // the last stage is the sample itself
  CHECK(read_code_map((dir / "sample_0000_stage2.rqcm").string()) == read_code_map((dir / "sample_0000.rqcm").string()));
  const std::string csv = bytes_of(dir / "samples.csv");
  CHECK(csv.rfind("index,class,seed,forward_passes,writes\n", 0) == 0);
  // T_draft 2, then two revise passes with T_revise 1: 4 passes, 2 + 2 * 2 writes
  CHECK(csv.find("\n0,null,") != std::string::npos);
  CHECK(csv.find(",4,6\n") != std::string::npos);

  REQUIRE(run("inpaint --config " + conf + " --out " + dir.string() + " --input " +
              (dir / "sample_0001.rqcm").string() + " --region 1,0,2,1 --t-draft 1 --revise-iters 2 --dump-stages") == 0);
  const auto source = read_code_map((dir / "source.rqcm").string());
  const auto result = read_code_map((dir / "inpaint.rqcm").string());
  CHECK(std::ranges::equal(source.stack(0), result.stack(0)));
  for (int j = 0; j < 3; ++j) CHECK(fs::exists(dir / ("inpaint_stage" + std::to_string(j) + ".rqcm")));
}

TEST_CASE("seed flag changes samples, reruns do not") {
  const fs::path dir = kRoot / "seeds";
  const std::string conf = synth_setup(dir);
  const std::string base =
      "sample --config " + conf + " --transformer " + (dir / "transformer.ckpt").string() + " --set samples=40 --out ";
  REQUIRE(run(base + (dir / "a").string() + " --seed 1") == 0);
  REQUIRE(run(base + (dir / "b").string() + " --seed 1", "DRAFTREVISE_THREADS=3") == 0);
  REQUIRE(run(base + (dir / "c").string() + " --seed 2") == 0);
  // the checkpoint lives in dir, not in the sample directories
  CHECK(bytes_of(dir / "a" / "samples.csv") == bytes_of(dir / "b" / "samples.csv"));
  CHECK(bytes_of(dir / "a" / "samples.csv") != bytes_of(dir / "c" / "samples.csv"));
}

TEST_CASE("interrupted training resumes to the same checkpoint") {
  const fs::path dir = kRoot / "resume";
  fs::remove_all(dir);
  fs::create_directories(dir);
  const std::string conf = (dir / "sprites.conf").string();
  std::ofstream(conf) << "image_size = 8\nsprite_count = 32\nheldout_count = 8\nlatent_dim = 4\nae_hidden = 8\n"
                         "codebook_size = 8\ndepth = 2\nrqvae_warmup = 2\nrqvae_steps = 12\nrqvae_batch = 4\n"
                         "d_model = 8\nspatial_blocks = 1\nff_multiplier = 2\ntf_steps = 10\ntf_batch = 4\n";
  const std::string whole = (dir / "whole").string(), part = (dir / "part").string();
  REQUIRE(run("train-rqvae --config " + conf + " --out " + whole) == 0);
  REQUIRE(run("train-rqvae --config " + conf + " --out " + part + " --stop-at 5") == 0);
  REQUIRE(run("train-rqvae --config " + conf + " --out " + part + " --resume " + part + "/rqvae.ckpt") == 0);
  CHECK(bytes_of(dir / "whole" / "rqvae.ckpt") == bytes_of(dir / "part" / "rqvae.ckpt"));
  CHECK(bytes_of(dir / "whole" / "rqvae_loss.csv") == bytes_of(dir / "part" / "rqvae_loss.csv"));
  CHECK(bytes_of(dir / "whole" / "rqvae_eval.csv") == bytes_of(dir / "part" / "rqvae_eval.csv"));

  const std::string ae = " --rqvae " + whole + "/rqvae.ckpt";
  REQUIRE(run("train-transformer --config " + conf + " --out " + whole + ae) == 0);
  REQUIRE(run("train-transformer --config " + conf + " --out " + part + ae + " --stop-at 4") == 0);
  REQUIRE(run("train-transformer --config " + conf + " --out " + part + " --resume " + part +
              "/transformer.ckpt") == 0);
  CHECK(bytes_of(dir / "whole" / "transformer.ckpt") == bytes_of(dir / "part" / "transformer.ckpt"));
  CHECK(bytes_of(dir / "whole" / "transformer_loss.csv") == bytes_of(dir / "part" / "transformer_loss.csv"));

  // sprites inpainting with a different class than the source completes
  REQUIRE(run("gen-data --config " + conf + " --out " + whole) == 0);
  CHECK(run("inpaint --config " + conf + " --out " + whole + " --input " + whole +
            "/sprites/0000.ppm --region 0,0,1,2 --t-draft 2 --class 3") == 0);
  CHECK(fs::exists(dir / "whole" / "inpaint.ppm"));
}

TEST_CASE("loss curves fall") {
  const fs::path dir = kRoot / "loss";
  fs::remove_all(dir);
  const std::string conf = (kRoot / "loss.conf").string();
  fs::create_directories(kRoot);
  std::ofstream(conf) << "image_size = 8\nsprite_count = 64\nheldout_count = 8\nlatent_dim = 4\nae_hidden = 16\n"
                         "codebook_size = 16\ndepth = 2\nrqvae_warmup = 10\nrqvae_steps = 300\nrqvae_batch = 8\n";
  REQUIRE(run("train-rqvae --config " + conf + " --out " + dir.string()) == 0);
  std::ifstream in(dir / "rqvae_loss.csv");
  std::string line;
  std::getline(in, line);
  CHECK(line == "step,lr,loss,reconstruction,commitment,reseeded");
  // EMA-smoothed loss ends below where it started
  double ema = -1.0, first = -1.0;
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    std::size_t a = line.find(','), b = line.find(',', a + 1), c = line.find(',', b + 1);
    const double loss = std::stod(line.substr(b + 1, c - b - 1));
    ema = ema < 0.0 ? loss : 0.95 * ema + 0.05 * loss;
    if (rows == 20) first = ema;
    ++rows;
  }
  CHECK(rows == 300);
  CHECK(ema < first);
}
