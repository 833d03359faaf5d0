#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "wnet/error.hpp"

namespace wnet {

/// Dimensions of a rank-4 tensor: (batch, channels, rows, cols).
struct Shape4 {
  int n = 0;
  int c = 0;
  int h = 0;
  int w = 0;

  Shape4() = default;
  Shape4(int n_, int c_, int h_, int w_) : n(n_), c(c_), h(h_), w(w_) {}

  std::int64_t numel() const {
    return static_cast<std::int64_t>(n) * c * h * w;
  }

  bool operator==(const Shape4& o) const {
    return n == o.n && c == o.c && h == o.h && w == o.w;
  }
  bool operator!=(const Shape4& o) const { return !(*this == o); }

  std::string str() const {
    return std::to_string(n) + "x" + std::to_string(c) + "x" +
           std::to_string(h) + "x" + std::to_string(w);
  }
};

/// Dense row-major rank-4 tensor. The universal value type of the network.
/// T is float in production paths and double in verification paths.
template <typename T>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape4 dims, T fill_value = T(0))
      : dims_(dims), data_(check_numel(dims), fill_value) {}

  Tensor(Shape4 dims, std::vector<T> data) : dims_(dims), data_(std::move(data)) {
    if (static_cast<std::int64_t>(data_.size()) != dims_.numel()) {
      throw DimError("tensor data length " + std::to_string(data_.size()) +
                     " does not match dims " + dims_.str());
    }
  }

  const Shape4& dims() const { return dims_; }
  std::int64_t numel() const { return dims_.numel(); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::vector<T>& vec() { return data_; }
  const std::vector<T>& vec() const { return data_; }

  T& at(int n, int c, int h, int w) {
    return data_[index(n, c, h, w)];
  }
  T at(int n, int c, int h, int w) const {
    return data_[index(n, c, h, w)];
  }

  std::int64_t index(int n, int c, int h, int w) const {
    return ((static_cast<std::int64_t>(n) * dims_.c + c) * dims_.h + h) * dims_.w + w;
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  bool all_finite() const {
    for (T v : data_) {
      if (!std::isfinite(static_cast<double>(v))) return false;
    }
    return true;
  }

 private:
  static std::int64_t check_numel(const Shape4& dims) {
    if (dims.n < 0 || dims.c < 0 || dims.h < 0 || dims.w < 0) {
      throw DimError("negative tensor dimension in " + dims.str());
    }
    return dims.numel();
  }

  Shape4 dims_;
  std::vector<T> data_;
};

using Tensor4f = Tensor<float>;
using Tensor4d = Tensor<double>;

}  // namespace wnet
