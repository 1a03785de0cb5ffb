#include "thrifty/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace thrifty {

std::string Shape::str() const {
  std::ostringstream os;
  os << n << "x" << c << "x" << h << "x" << w;
  return os.str();
}

void check_valid(const Shape& shape) {
  if (shape.n == 0 || shape.c == 0 || shape.h == 0 || shape.w == 0) {
    throw ConfigError("tensor dims must all be >= 1, got " + shape.str());
  }
}

template <typename T>
Tensor4<T>::Tensor4(Shape shape, T fill) : shape_(shape) {
  check_valid(shape_);
  data_.assign(shape_.numel(), fill);
}

template <typename T>
Tensor4<T>::Tensor4(Shape shape, std::vector<T> data) : shape_(shape), data_(std::move(data)) {
  check_valid(shape_);
  if (data_.size() != shape_.numel()) {
    throw ConfigError("tensor data length " + std::to_string(data_.size()) +
                      " does not match dims " + shape_.str());
  }
}

template <typename T>
void Tensor4<T>::fill(T value) {
  std::fill(data_.begin(), data_.end(), value);
}

template <typename T>
Tensor4<T>& Tensor4<T>::operator+=(const Tensor4& other) {
  if (other.shape_ != shape_) {
    throw InternalError("tensor add shape mismatch: " + shape_.str() + " vs " + other.shape_.str());
  }
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
  return *this;
}

template <typename T>
Tensor4<T> Tensor4<T>::reshaped(Shape shape) const {
  return Tensor4(shape, data_);
}

template <typename T>
Tensor4<T> Tensor4<T>::slice_batch(std::size_t first, std::size_t count) const {
  if (count == 0 || first + count > shape_.n) {
    throw ConfigError("batch slice out of range");
  }
  const std::size_t per = shape_.c * shape_.h * shape_.w;
  Shape s = shape_;
  s.n = count;
  return Tensor4(s, std::vector<T>(data_.begin() + static_cast<std::ptrdiff_t>(first * per),
                                   data_.begin() + static_cast<std::ptrdiff_t>((first + count) * per)));
}

template <typename T>
double max_relative_difference(const Tensor4<T>& a, const Tensor4<T>& b, double floor) {
  if (a.shape() != b.shape()) return INFINITY;
  double worst = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    const double x = a[i];
    const double y = b[i];
    const double denom = std::max({std::abs(x), std::abs(y), floor});
    worst = std::max(worst, std::abs(x - y) / denom);
  }
  return worst;
}

template class Tensor4<float>;
template class Tensor4<double>;
template double max_relative_difference(const Tensor4<float>&, const Tensor4<float>&, double);
template double max_relative_difference(const Tensor4<double>&, const Tensor4<double>&, double);

}  // namespace thrifty
