#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "draftrevise/rq/quantizer.hpp"

namespace draftrevise::autoencoder {

using rq::Code;

/// H x W grid of depth-D code stacks, stored raster-then-depth: the code at
/// (h, w, d) lives at ((h * W) + w) * D + d. Position n = h * W + w.
///
/// Entries may hold rq::kMaskCode while a map is being generated.
class CodeStackMap {
 public:
  CodeStackMap() = default;
  CodeStackMap(std::size_t height, std::size_t width, std::size_t depth, std::size_t codebook_size,
               Code fill = rq::kMaskCode);

  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }
  std::size_t depth() const { return depth_; }
  std::size_t codebook_size() const { return codebook_size_; }
  std::size_t positions() const { return height_ * width_; }

  Code at(std::size_t n, std::size_t d) const { return codes_[n * depth_ + d]; }
  Code at(std::size_t h, std::size_t w, std::size_t d) const { return at(h * width_ + w, d); }
  /// Throws std::out_of_range unless code < K or code == kMaskCode.
  void set(std::size_t n, std::size_t d, Code code);

  std::span<const Code> stack(std::size_t n) const { return {codes_.data() + n * depth_, depth_}; }
  void set_stack(std::size_t n, std::span<const Code> stack);
  void mask_position(std::size_t n);

  /// True if any depth of position n holds the MASK sentinel.
  bool masked(std::size_t n) const;
  /// No MASK anywhere and every code in [0, K).
  bool fully_populated() const;

  std::span<const Code> codes() const { return codes_; }

  using Grid = std::vector<std::vector<std::vector<Code>>>;
  /// [H][W][D] nested view.
  Grid unflatten() const;
  /// Inverse of unflatten; the grid must be rectangular.
  static CodeStackMap flatten(const Grid& grid, std::size_t codebook_size);

  friend bool operator==(const CodeStackMap&, const CodeStackMap&) = default;

 private:
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::size_t depth_ = 0;
  std::size_t codebook_size_ = 0;
  std::vector<Code> codes_;
};

}  // namespace draftrevise::autoencoder
