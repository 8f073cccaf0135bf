#pragma once

#include <stdexcept>
#include <string>

namespace draftrevise {

// Invalid configuration: unknown keys, bad values, mismatched dimensions.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// File system or format failure; messages carry the offending path.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// NaN or Inf observed where finite values are required.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace draftrevise
