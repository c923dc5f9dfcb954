#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <string>
#include <vector>

#include "mcseg/common.hpp"

namespace mcseg {

inline std::int64_t numel_of(const std::vector<int>& shape) {
  std::int64_t n = 1;
  for (int d : shape) n *= d;
  return n;
}

inline std::string shape_str(const std::vector<int>& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

// Dense N-dimensional array, row-major, NCHW for image tensors. Training runs
// in float; the double instantiation exists for gradient checking.
template <class T>
struct TensorT {
  std::vector<int> shape;
  std::vector<T> data;

  TensorT() = default;
  explicit TensorT(std::vector<int> s, T fill = T(0))
      : shape(std::move(s)), data(static_cast<std::size_t>(numel_of(shape)), fill) {
    for (int d : shape) {
      if (d <= 0) throw ContractError(cat("tensor dimension must be positive, got ", shape_str(shape)));
    }
  }

  static TensorT from(std::vector<int> s, std::vector<T> values) {
    TensorT t;
    t.shape = std::move(s);
    t.data = std::move(values);
    if (numel_of(t.shape) != static_cast<std::int64_t>(t.data.size())) {
      throw ContractError(cat("tensor data length ", t.data.size(),
                              " does not match shape ", shape_str(t.shape)));
    }
    return t;
  }

  static TensorT scalar(T v) { return from({1}, {v}); }

  std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }
  int ndim() const { return static_cast<int>(shape.size()); }
  int dim(int i) const { return shape[static_cast<std::size_t>(i)]; }
  bool same_shape(const TensorT& o) const { return shape == o.shape; }

  T* ptr() { return data.data(); }
  const T* ptr() const { return data.data(); }

  // NCHW accessors (4-d tensors only).
  T& at4(int n, int c, int h, int w) {
    return data[((static_cast<std::int64_t>(n) * shape[1] + c) * shape[2] + h) * shape[3] + w];
  }
  T at4(int n, int c, int h, int w) const {
    return data[((static_cast<std::int64_t>(n) * shape[1] + c) * shape[2] + h) * shape[3] + w];
  }
  T& at2(int r, int c) { return data[static_cast<std::int64_t>(r) * shape[1] + c]; }
  T at2(int r, int c) const { return data[static_cast<std::int64_t>(r) * shape[1] + c]; }

  bool all_finite() const {
    for (T v : data) {
      if (!std::isfinite(static_cast<double>(v))) return false;
    }
    return true;
  }

  void fill(T v) { std::fill(data.begin(), data.end(), v); }

  TensorT<double> to_double() const {
    TensorT<double> out;
    out.shape = shape;
    out.data.assign(data.begin(), data.end());
    return out;
  }
  TensorT<float> to_float() const {
    TensorT<float> out;
    out.shape = shape;
    out.data.assign(data.begin(), data.end());
    return out;
  }
};

using Tensor = TensorT<float>;

template <class T>
void check_finite(const TensorT<T>& t, const char* what) {
  if (debug_checks_enabled() && !t.all_finite()) {
    throw ContractError(cat("non-finite values in ", what, " with shape ", shape_str(t.shape)));
  }
}

}  // namespace mcseg
