#include "draftrevise/autoencoder/code_map.hpp"

#include <stdexcept>
#include <string>

namespace draftrevise::autoencoder {

CodeStackMap::CodeStackMap(std::size_t height, std::size_t width, std::size_t depth,
                           std::size_t codebook_size, Code fill)
    : height_(height), width_(width), depth_(depth), codebook_size_(codebook_size) {
  if (height == 0 || width == 0 || depth == 0) {
    throw std::invalid_argument("CodeStackMap: empty shape");
  }
  if (codebook_size < 2) throw std::invalid_argument("CodeStackMap: K must be at least 2");
  if (fill != rq::kMaskCode && fill >= codebook_size) {
    throw std::out_of_range("CodeStackMap: fill code out of range");
  }
  codes_.assign(height * width * depth, fill);
}

void CodeStackMap::set(std::size_t n, std::size_t d, Code code) {
  if (n >= positions() || d >= depth_) throw std::out_of_range("CodeStackMap: index out of range");
  if (code != rq::kMaskCode && code >= codebook_size_) {
    throw std::out_of_range("CodeStackMap: code " + std::to_string(code) + " outside [0, " +
                            std::to_string(codebook_size_) + ")");
  }
  codes_[n * depth_ + d] = code;
}

void CodeStackMap::set_stack(std::size_t n, std::span<const Code> stack) {
  if (stack.size() != depth_) throw std::invalid_argument("CodeStackMap: stack depth mismatch");
  for (std::size_t d = 0; d < depth_; ++d) set(n, d, stack[d]);
}

void CodeStackMap::mask_position(std::size_t n) {
  for (std::size_t d = 0; d < depth_; ++d) set(n, d, rq::kMaskCode);
}

bool CodeStackMap::masked(std::size_t n) const {
  for (Code c : stack(n)) {
    if (c == rq::kMaskCode) return true;
  }
  return false;
}

bool CodeStackMap::fully_populated() const {
  for (Code c : codes_) {
    if (c >= codebook_size_) return false;
  }
  return true;
}

CodeStackMap::Grid CodeStackMap::unflatten() const {
  Grid grid(height_, std::vector<std::vector<Code>>(width_));
  for (std::size_t h = 0; h < height_; ++h) {
    for (std::size_t w = 0; w < width_; ++w) {
      auto s = stack(h * width_ + w);
      grid[h][w].assign(s.begin(), s.end());
    }
  }
  return grid;
}

CodeStackMap CodeStackMap::flatten(const Grid& grid, std::size_t codebook_size) {
  if (grid.empty() || grid[0].empty() || grid[0][0].empty()) {
    throw std::invalid_argument("CodeStackMap::flatten: empty grid");
  }
  CodeStackMap map(grid.size(), grid[0].size(), grid[0][0].size(), codebook_size);
  for (std::size_t h = 0; h < grid.size(); ++h) {
    if (grid[h].size() != map.width_) throw std::invalid_argument("CodeStackMap::flatten: ragged grid");
    for (std::size_t w = 0; w < map.width_; ++w) map.set_stack(h * map.width_ + w, grid[h][w]);
  }
  return map;
}

}  // namespace draftrevise::autoencoder
