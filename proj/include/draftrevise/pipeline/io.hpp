#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "draftrevise/autoencoder/autoencoder.hpp"
#include "draftrevise/numeric/optim.hpp"

namespace draftrevise::pipeline {

using autoencoder::CodeStackMap;
using autoencoder::Image;

/// Binary PPM (P6, maxval 255). Pixels are clamped to [0, 1] and rounded.
void write_ppm(const std::string& path, const Image& image);
/// Throws IoError on a missing file or anything but an 8-bit P6.
Image read_ppm(const std::string& path);

inline constexpr std::uint32_t kCodeMapVersion = 1;

/// One or more code-map records: "RQCM", u32 version, u32 H, W, D, K, then
/// H*W*D little-endian u32 codes in raster-then-depth order.
void write_code_maps(const std::string& path, const std::vector<CodeStackMap>& maps);
void write_code_map(const std::string& path, const CodeStackMap& map);
std::vector<CodeStackMap> read_code_maps(const std::string& path);
/// Exactly one record.
CodeStackMap read_code_map(const std::string& path);

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// "RQCK", u32 version, config snapshot, key=value metadata, then named
/// sections of little-endian f32 values tagged with their shape.
struct Checkpoint {
  struct Section {
    std::string name;
    numeric::Shape shape;
    std::vector<float> values;
    friend bool operator==(const Section&, const Section&) = default;
  };

  std::string config_text;
  std::map<std::string, std::string> meta;
  std::vector<Section> sections;

  void add(const std::string& name, const numeric::Tensor& t);
  bool has(const std::string& name) const;
  /// Throws ConfigError when the section is missing or its shape differs.
  numeric::Tensor tensor(const std::string& name, const numeric::Shape& shape) const;
  /// IoError when the key is absent.
  const std::string& meta_value(const std::string& key) const;

  void save(const std::string& path) const;
  /// Throws IoError on a bad file and on a version mismatch.
  static Checkpoint load(const std::string& path);

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

numeric::ConstParameterRefs as_const(const numeric::ParameterRefs& params);

/// Stores `params` under their names and the optimizer moments under
/// "adam.m.<name>" / "adam.v.<name>".
void store_parameters(Checkpoint& ck, numeric::ConstParameterRefs params);
void load_parameters(const Checkpoint& ck, numeric::ParameterRefs params);
void store_optimizer(Checkpoint& ck, numeric::ConstParameterRefs params,
                     const numeric::OptimizerState& state);
void load_optimizer(const Checkpoint& ck, numeric::ConstParameterRefs params,
                    numeric::OptimizerState& state);

/// Creates the directory (and parents); IoError on failure.
void ensure_directory(const std::string& path);
std::string join_path(const std::string& dir, const std::string& name);
void write_text(const std::string& path, const std::string& text);
std::string read_text(const std::string& path);
/// Locale-independent shortest round-trip formatting.
std::string format_number(double v);

}  // namespace draftrevise::pipeline
