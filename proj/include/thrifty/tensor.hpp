#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "thrifty/errors.hpp"

namespace thrifty {

// Dimensions of a rank-4 tensor in (batch, channels, height, width) order.
struct Shape {
  std::size_t n = 1;
  std::size_t c = 1;
  std::size_t h = 1;
  std::size_t w = 1;

  std::size_t numel() const { return n * c * h * w; }
  std::size_t plane() const { return h * w; }
  friend bool operator==(const Shape&, const Shape&) = default;
  std::string str() const;
};

// Dense row-major NCHW tensor. All dims are >= 1 and data().size() == numel().
template <typename T>
class Tensor4 {
 public:
  using value_type = T;

  Tensor4() : shape_{1, 1, 1, 1}, data_(1, T(0)) {}
  explicit Tensor4(Shape shape, T fill = T(0));
  Tensor4(Shape shape, std::vector<T> data);

  static Tensor4 zeros_like(const Tensor4& other) { return Tensor4(other.shape()); }

  const Shape& shape() const { return shape_; }
  std::size_t numel() const { return data_.size(); }
  std::size_t n() const { return shape_.n; }
  std::size_t c() const { return shape_.c; }
  std::size_t h() const { return shape_.h; }
  std::size_t w() const { return shape_.w; }

  std::size_t index(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    return ((n * shape_.c + c) * shape_.h + h) * shape_.w + w;
  }
  T& operator()(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
    return data_[index(n, c, h, w)];
  }
  const T& operator()(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    return data_[index(n, c, h, w)];
  }
  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  T* ptr() { return data_.data(); }
  const T* ptr() const { return data_.data(); }

  // Contiguous (h, w) plane of sample n, channel c.
  std::span<T> plane(std::size_t n, std::size_t c) {
    return std::span<T>(data_).subspan(index(n, c, 0, 0), shape_.plane());
  }
  std::span<const T> plane(std::size_t n, std::size_t c) const {
    return std::span<const T>(data_).subspan(index(n, c, 0, 0), shape_.plane());
  }

  void fill(T value);
  Tensor4& operator+=(const Tensor4& other);
  // Reinterpret with a new shape of equal element count.
  Tensor4 reshaped(Shape shape) const;
  // Copy of samples [first, first + count).
  Tensor4 slice_batch(std::size_t first, std::size_t count) const;

  friend bool operator==(const Tensor4&, const Tensor4&) = default;

 private:
  Shape shape_;
  std::vector<T> data_;
};

void check_valid(const Shape& shape);

// Largest |a-b| / max(|a|,|b|,floor) over all elements.
template <typename T>
double max_relative_difference(const Tensor4<T>& a, const Tensor4<T>& b, double floor = 1e-12);

template <typename To, typename From>
Tensor4<To> tensor_cast(const Tensor4<From>& in) {
  Tensor4<To> out(in.shape());
  for (std::size_t i = 0; i < in.numel(); ++i) out[i] = static_cast<To>(in[i]);
  return out;
}

extern template class Tensor4<float>;
extern template class Tensor4<double>;

}  // namespace thrifty
