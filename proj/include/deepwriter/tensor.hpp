#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <utility>
#include <vector>

#include "deepwriter/errors.hpp"

namespace deepwriter {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(std::span<const std::size_t> dims) {
  return std::accumulate(dims.begin(), dims.end(), std::size_t{1},
                         std::multiplies<>{});
}

/**
 * Dense row-major array of real scalars.
 *
 * The last dimension varies fastest. A default-constructed tensor is an
 * empty placeholder with no dimensions; every tensor produced by an engine
 * operation has at least one dimension and no zero-sized dimension.
 */
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  explicit Tensor(Shape dims, T fill = T{0}) : dims_(std::move(dims)) {
    validate_dims();
    data_.assign(shape_size(dims_), fill);
  }

  Tensor(Shape dims, std::vector<T> data)
      : dims_(std::move(dims)), data_(std::move(data)) {
    validate_dims();
    if (shape_size(dims_) != data_.size()) {
      throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                       " does not match dims " + format_dims(dims_));
    }
  }

  static Tensor zeros(Shape dims) { return Tensor(std::move(dims)); }

  static Tensor vector(std::vector<T> values) {
    const std::size_t n = values.size();
    return Tensor({n}, std::move(values));
  }

  const Shape& dims() const noexcept { return dims_; }
  std::size_t rank() const noexcept { return dims_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }
  std::size_t dim(std::size_t axis) const { return dims_.at(axis); }

  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  // [C,H,W] accessors.
  T& operator()(std::size_t c, std::size_t y, std::size_t x) {
    return data_[(c * dims_[1] + y) * dims_[2] + x];
  }
  const T& operator()(std::size_t c, std::size_t y, std::size_t x) const {
    return data_[(c * dims_[1] + y) * dims_[2] + x];
  }

  /// Same data viewed under new dims with equal element count.
  Tensor reshaped(Shape dims) const& {
    return Tensor(std::move(dims), data_);
  }
  Tensor reshaped(Shape dims) && {
    return Tensor(std::move(dims), std::move(data_));
  }

  void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(),
                       [](T v) { return std::isfinite(v); });
  }

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> out(data_.size());
    std::transform(data_.begin(), data_.end(), out.begin(),
                   [](T v) { return static_cast<U>(v); });
    return Tensor<U>(dims_, std::move(out));
  }

  Tensor& operator+=(const Tensor& other) {
    require_same_dims(*this, other, "operator+=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
    return *this;
  }

  Tensor& operator*=(T factor) {
    for (auto& v : data_) v *= factor;
    return *this;
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.dims_ == b.dims_ && a.data_ == b.data_;
  }

  static void require_same_dims(const Tensor& a, const Tensor& b,
                                const char* op) {
    if (a.dims_ != b.dims_) {
      throw ShapeError(std::string(op) + ": dimension mismatch " +
                       format_dims(a.dims_) + " vs " + format_dims(b.dims_));
    }
  }

 private:
  void validate_dims() const {
    if (dims_.empty()) throw ShapeError("tensor dims must be non-empty");
    for (auto d : dims_) {
      if (d == 0) {
        throw ShapeError("tensor dims must be positive, got " +
                         format_dims(dims_));
      }
    }
  }

  Shape dims_;
  std::vector<T> data_;
};

/// Element-wise sum of two tensors with identical dims.
template <typename T>
Tensor<T> elementwise_sum(const Tensor<T>& a, const Tensor<T>& b) {
  Tensor<T>::require_same_dims(a, b, "elementwise_sum");
  Tensor<T> out = a;
  auto o = out.data();
  auto bd = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = a[i] + bd[i];
  return out;
}

/// Index of the largest entry; ties resolve to the lowest index.
template <typename T>
std::size_t argmax(std::span<const T> values) {
  if (values.empty()) throw DomainError("argmax of an empty vector");
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return best;
}

template <typename T>
std::size_t argmax(const Tensor<T>& v) {
  if (v.empty()) throw DomainError("argmax of an empty tensor");
  if (v.rank() != 1) {
    throw ShapeError("argmax expects a rank-1 tensor, got " +
                     format_dims(v.dims()));
  }
  return argmax(v.data());
}

template <typename T>
T sum(const Tensor<T>& t) {
  T acc{0};
  for (T v : t.data()) acc += v;
  return acc;
}

}  // namespace deepwriter
