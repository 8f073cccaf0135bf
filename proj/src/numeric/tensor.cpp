#include "draftrevise/numeric/tensor.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

#include "draftrevise/errors.hpp"

namespace draftrevise::numeric {

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << 'x';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

Tensor::Tensor(Shape shape, double fill)
    : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> values)
    : shape_(std::move(shape)), data_(std::move(values)) {
  if (data_.size() != shape_size(shape_)) {
    throw std::invalid_argument("Tensor: " + std::to_string(data_.size()) +
                                " values do not fill shape " + shape_string(shape_));
  }
}

double Tensor::item() const {
  if (data_.size() != 1) {
    throw std::invalid_argument("Tensor::item on shape " + shape_string(shape_));
  }
  return data_[0];
}

void Tensor::fill(double value) {
  for (double& x : data_) x = value;
}

bool Tensor::all_finite() const {
  for (double x : data_) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

Tensor Tensor::reshaped(Shape shape) const {
  return Tensor(std::move(shape), data_);
}

void require_finite(const Tensor& t, const char* what) {
  if (!t.all_finite()) throw NumericError(std::string("non-finite values in ") + what);
}

}  // namespace draftrevise::numeric
