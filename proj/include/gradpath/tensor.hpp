#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "gradpath/errors.hpp"

namespace gradpath {

/// Dimension list of a tensor. Images use (batch, channels, height, width).
class Shape {
 public:
  Shape() = default;
  Shape(std::initializer_list<std::size_t> dims) : Shape(std::vector<std::size_t>(dims)) {}
  explicit Shape(std::vector<std::size_t> dims) : dims_(std::move(dims)) {
    if (dims_.empty()) throw DimensionError("shape must have at least one dimension");
    for (std::size_t d : dims_) {
      if (d == 0) throw DimensionError("shape " + to_string() + " has a zero dimension");
    }
  }

  std::size_t rank() const noexcept { return dims_.size(); }
  std::size_t operator[](std::size_t i) const { return dims_.at(i); }
  const std::vector<std::size_t>& dims() const noexcept { return dims_; }

  std::size_t numel() const noexcept {
    if (dims_.empty()) return 0;
    return std::accumulate(dims_.begin(), dims_.end(), std::size_t{1}, std::multiplies<>());
  }

  std::string to_string() const {
    std::string s = "[";
    for (std::size_t i = 0; i < dims_.size(); ++i) {
      if (i) s += ",";
      s += std::to_string(dims_[i]);
    }
    return s + "]";
  }

  friend bool operator==(const Shape&, const Shape&) = default;

 private:
  std::vector<std::size_t> dims_;
};

/// Dense row-major tensor. Float is the working precision; double exists for gradient checks.
template <typename T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() = default;
  explicit BasicTensor(Shape shape, T fill = T{0})
      : shape_(std::move(shape)), data_(shape_.numel(), fill) {}
  BasicTensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != shape_.numel()) {
      throw DimensionError("data length " + std::to_string(data_.size()) +
                           " does not match shape " + shape_.to_string());
    }
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t dim(std::size_t i) const { return shape_[i]; }
  std::size_t rank() const noexcept { return shape_.rank(); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }
  const std::vector<T>& values() const noexcept { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  /// 4-D element access (n, c, h, w).
  T& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
    return data_[offset4(n, c, h, w)];
  }
  const T& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    return data_[offset4(n, c, h, w)];
  }

  /// Same data under a new shape with equal element count.
  BasicTensor reshaped(Shape shape) const& {
    BasicTensor out = *this;
    return std::move(out).reshaped(std::move(shape));
  }
  BasicTensor reshaped(Shape shape) && {
    if (shape.numel() != data_.size()) {
      throw DimensionError("cannot reshape " + shape_.to_string() + " to " + shape.to_string());
    }
    shape_ = std::move(shape);
    return std::move(*this);
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
  }

  template <typename U>
  BasicTensor<U> cast() const {
    std::vector<U> out(data_.size());
    std::transform(data_.begin(), data_.end(), out.begin(), [](T v) { return static_cast<U>(v); });
    return BasicTensor<U>(shape_, std::move(out));
  }

  friend bool operator==(const BasicTensor&, const BasicTensor&) = default;

 private:
  std::size_t offset4(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    const auto& d = shape_.dims();
    return ((n * d[1] + c) * d[2] + h) * d[3] + w;
  }

  Shape shape_;
  std::vector<T> data_;
};

using Tensor = BasicTensor<float>;
using TensorD = BasicTensor<double>;

enum class PadMode { zero, replicate };

namespace detail {
inline void require_rank(const Shape& s, std::size_t rank, const char* what) {
  if (s.rank() != rank) {
    throw DimensionError(std::string(what) + " expects rank " + std::to_string(rank) +
                         ", got " + s.to_string());
  }
}
}  // namespace detail

/// c[m,n] = a[m,k] * b[k,n].
template <typename T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  detail::require_rank(a.shape(), 2, "matmul lhs");
  detail::require_rank(b.shape(), 2, "matmul rhs");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw DimensionError("matmul inner dimension mismatch: " + a.shape().to_string() + " x " +
                         b.shape().to_string());
  }
  BasicTensor<T> c(Shape{m, n});
  auto A = a.data();
  auto B = b.data();
  auto C = c.data();
  for (std::size_t i = 0; i < m; ++i) {
    T* crow = C.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = A[i * k + p];
      const T* brow = B.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
  return c;
}

template <typename T>
BasicTensor<T> add_elementwise(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("add_elementwise shape mismatch: " + a.shape().to_string() + " vs " +
                         b.shape().to_string());
  }
  BasicTensor<T> c = a;
  auto C = c.data();
  auto B = b.data();
  for (std::size_t i = 0; i < C.size(); ++i) C[i] += B[i];
  return c;
}

template <typename T>
BasicTensor<T> scale(const BasicTensor<T>& a, T factor) {
  BasicTensor<T> c = a;
  for (T& v : c.data()) v *= factor;
  return c;
}

/// Pads height and width of a [b,c,h,w] tensor by `amount` on every side.
template <typename T>
BasicTensor<T> pad2d(const BasicTensor<T>& x, std::size_t amount, PadMode mode = PadMode::zero) {
  detail::require_rank(x.shape(), 4, "pad2d");
  if (amount == 0) return x;
  const std::size_t nb = x.dim(0), nc = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t ph = h + 2 * amount, pw = w + 2 * amount;
  BasicTensor<T> out(Shape{nb, nc, ph, pw});
  for (std::size_t n = 0; n < nb; ++n) {
    for (std::size_t c = 0; c < nc; ++c) {
      for (std::size_t y = 0; y < ph; ++y) {
        for (std::size_t xx = 0; xx < pw; ++xx) {
          const bool inside = y >= amount && y < amount + h && xx >= amount && xx < amount + w;
          if (inside) {
            out.at(n, c, y, xx) = x.at(n, c, y - amount, xx - amount);
          } else if (mode == PadMode::replicate) {
            const std::size_t sy = std::clamp<std::ptrdiff_t>(
                static_cast<std::ptrdiff_t>(y) - static_cast<std::ptrdiff_t>(amount), 0,
                static_cast<std::ptrdiff_t>(h) - 1);
            const std::size_t sx = std::clamp<std::ptrdiff_t>(
                static_cast<std::ptrdiff_t>(xx) - static_cast<std::ptrdiff_t>(amount), 0,
                static_cast<std::ptrdiff_t>(w) - 1);
            out.at(n, c, y, xx) = x.at(n, c, sy, sx);
          }
        }
      }
    }
  }
  return out;
}

/// Inverse of pad2d: drops `amount` rows/cols from each border.
template <typename T>
BasicTensor<T> crop2d(const BasicTensor<T>& x, std::size_t amount) {
  detail::require_rank(x.shape(), 4, "crop2d");
  if (amount == 0) return x;
  const std::size_t nb = x.dim(0), nc = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (h <= 2 * amount || w <= 2 * amount) {
    throw ShapeError("crop2d of " + std::to_string(amount) + " too large for " +
                     x.shape().to_string());
  }
  BasicTensor<T> out(Shape{nb, nc, h - 2 * amount, w - 2 * amount});
  for (std::size_t n = 0; n < nb; ++n)
    for (std::size_t c = 0; c < nc; ++c)
      for (std::size_t y = 0; y < h - 2 * amount; ++y)
        for (std::size_t xx = 0; xx < w - 2 * amount; ++xx)
          out.at(n, c, y, xx) = x.at(n, c, y + amount, xx + amount);
  return out;
}

/// Stacks two tensors along axis 0. Trailing dims must agree.
template <typename T>
BasicTensor<T> concat_batch(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (a.rank() != b.rank() ||
      !std::equal(a.shape().dims().begin() + 1, a.shape().dims().end(),
                  b.shape().dims().begin() + 1)) {
    throw DimensionError("concat_batch trailing shape mismatch: " + a.shape().to_string() +
                         " vs " + b.shape().to_string());
  }
  std::vector<std::size_t> dims = a.shape().dims();
  dims[0] += b.dim(0);
  std::vector<T> data;
  data.reserve(a.size() + b.size());
  data.insert(data.end(), a.data().begin(), a.data().end());
  data.insert(data.end(), b.data().begin(), b.data().end());
  return BasicTensor<T>(Shape(std::move(dims)), std::move(data));
}

/// Rows [begin, begin+count) along axis 0.
template <typename T>
BasicTensor<T> slice_batch(const BasicTensor<T>& x, std::size_t begin, std::size_t count) {
  if (count == 0 || begin + count > x.dim(0)) {
    throw DimensionError("slice_batch out of range for " + x.shape().to_string());
  }
  const std::size_t row = x.size() / x.dim(0);
  std::vector<std::size_t> dims = x.shape().dims();
  dims[0] = count;
  std::vector<T> data(x.data().begin() + begin * row, x.data().begin() + (begin + count) * row);
  return BasicTensor<T>(Shape(std::move(dims)), std::move(data));
}

}  // namespace gradpath
