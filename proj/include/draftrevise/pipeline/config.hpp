#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "draftrevise/autoencoder/autoencoder.hpp"
#include "draftrevise/decoding/draft_revise.hpp"
#include "draftrevise/transformer/model.hpp"

namespace draftrevise::pipeline {

/// Flat key=value run settings. Every key has a default; unknown keys and
/// unparsable values raise ConfigError.
///
///   # comment
///   d_model = 64
class RunConfig {
 public:
  RunConfig();

  static RunConfig from_text(const std::string& text, const std::string& origin = "<text>");
  /// Throws IoError when the file cannot be read.
  static RunConfig from_file(const std::string& path);

  /// Validates the key and the value's type.
  void set(const std::string& key, const std::string& value);
  /// "key=value" form used by --set.
  void set_assignment(const std::string& assignment);

  const std::string& get(const std::string& key) const;
  std::size_t get_size(const std::string& key) const;
  std::uint64_t get_u64(const std::string& key) const;
  double get_double(const std::string& key) const;
  bool get_bool(const std::string& key) const;

  /// Canonical text: every key in table order, one per line.
  std::string to_text() const;

  static const std::vector<std::string>& keys();

  friend bool operator==(const RunConfig&, const RunConfig&) = default;

 private:
  std::map<std::string, std::string> values_;
};

enum class Dataset { kSprites, kSynthetic };

Dataset dataset(const RunConfig& c);
bool is_synthetic(const RunConfig& c);

autoencoder::AutoencoderConfig autoencoder_config(const RunConfig& c);
rq::CodebookOptions codebook_options(const RunConfig& c);
/// Code-grid side lengths; 1 x N for synthetic codes.
std::size_t grid_height(const RunConfig& c);
std::size_t grid_width(const RunConfig& c);
std::size_t positions(const RunConfig& c);
std::size_t code_depth(const RunConfig& c);
std::size_t codebook_size(const RunConfig& c);
std::size_t num_classes(const RunConfig& c);
transformer::TransformerConfig transformer_config(const RunConfig& c);
/// Decode settings validated for a model with `positions` positions; the
/// seed field is left at 0 for the caller.
decoding::DecodePlan decode_plan(const RunConfig& c, std::size_t positions);
/// The "class" key: "null" or an index below `classes`.
transformer::ConditionId condition(const RunConfig& c, std::size_t classes);

}  // namespace draftrevise::pipeline
