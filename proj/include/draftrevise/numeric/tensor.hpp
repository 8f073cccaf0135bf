#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace draftrevise::numeric {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Dense row-major array of doubles.
///
/// Most operations view a tensor as a matrix: `cols()` is the last dimension
/// and `rows()` the product of the others. A rank-0 tensor is a scalar.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor scalar(double value) { return Tensor(Shape{}, std::vector<double>{value}); }
  static Tensor matrix(std::size_t rows, std::size_t cols, double fill = 0.0) {
    return Tensor(Shape{rows, cols}, fill);
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  std::size_t cols() const { return shape_.empty() ? 1 : shape_.back(); }
  std::size_t rows() const { return cols() == 0 ? 0 : size() / cols(); }
  bool empty() const { return data_.empty(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols(), cols()}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols(), cols()}; }

  /// Scalar value of a one-element tensor.
  double item() const;

  void fill(double value);
  bool all_finite() const;
  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  /// Same data, new shape; element counts must agree.
  Tensor reshaped(Shape shape) const;

  friend bool operator==(const Tensor& a, const Tensor& b) = default;

 private:
  Shape shape_{0};
  std::vector<double> data_;
};

/// Throws NumericError naming `what` if any element is NaN or Inf.
void require_finite(const Tensor& t, const char* what);

}  // namespace draftrevise::numeric
