#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "fpforge/error.hpp"

namespace fpforge {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

/// Dense row-major tensor. `grad` is either empty (absent) or the same size as
/// `data`; the element count always matches the shape.
template <class T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T(0))
      : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}

  Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_numel(shape_) != data_.size()) {
      throw ValidationError("tensor data length " + std::to_string(data_.size()) +
                            " does not match shape " + shape_str(shape_));
    }
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t numel() const { return data_.size(); }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  std::vector<T>& storage() { return data_; }
  const std::vector<T>& storage() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  bool requires_grad() const { return requires_grad_; }
  Tensor& set_requires_grad(bool on) {
    requires_grad_ = on;
    if (!on) grad_.clear();
    return *this;
  }

  bool has_grad() const { return !grad_.empty(); }
  std::span<const T> grad() const { return grad_; }
  std::span<T> grad() { return grad_; }
  void zero_grad() { grad_.assign(data_.size(), T(0)); }
  void clear_grad() { grad_.clear(); }
  void set_grad(std::span<const T> g) {
    if (g.size() != data_.size()) {
      throw ValidationError("gradient length " + std::to_string(g.size()) +
                            " does not match tensor shape " + shape_str(shape_));
    }
    grad_.assign(g.begin(), g.end());
  }

  /// Same data viewed with another shape of equal element count.
  Tensor reshaped(Shape shape) const {
    if (shape_numel(shape) != data_.size()) {
      throw ValidationError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
    }
    return Tensor(std::move(shape), data_);
  }

  template <class U>
  Tensor<U> cast() const {
    std::vector<U> out(data_.size());
    std::transform(data_.begin(), data_.end(), out.begin(), [](T v) { return static_cast<U>(v); });
    return Tensor<U>(shape_, std::move(out));
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  std::vector<T> data_;
  bool requires_grad_ = false;
  std::vector<T> grad_;
};

/// Slice images [first, first + count) out of an NCHW (or N...) tensor.
template <class T>
Tensor<T> slice_batch(const Tensor<T>& t, std::size_t first, std::size_t count) {
  if (t.rank() == 0 || first + count > t.dim(0)) {
    throw ValidationError("batch slice out of range for shape " + shape_str(t.shape()));
  }
  const std::size_t per = t.numel() / t.dim(0);
  Shape s = t.shape();
  s[0] = count;
  auto begin = t.storage().begin() + static_cast<std::ptrdiff_t>(first * per);
  return Tensor<T>(std::move(s), std::vector<T>(begin, begin + static_cast<std::ptrdiff_t>(count * per)));
}

/// Gather rows (first-axis entries) by index.
template <class T>
Tensor<T> gather_batch(const Tensor<T>& t, std::span<const std::size_t> idx) {
  const std::size_t per = t.numel() / t.dim(0);
  Shape s = t.shape();
  s[0] = idx.size();
  std::vector<T> out(idx.size() * per);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= t.dim(0)) throw ValidationError("gather index out of range");
    std::copy_n(t.storage().begin() + static_cast<std::ptrdiff_t>(idx[i] * per), per,
                out.begin() + static_cast<std::ptrdiff_t>(i * per));
  }
  return Tensor<T>(std::move(s), std::move(out));
}

}  // namespace fpforge
