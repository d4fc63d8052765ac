#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

namespace semtrack {

// Dense row-major H x W x C buffer. C is the fastest-varying index,
// which is what the convolution kernels assume.
template <typename T>
struct TensorT {
  int h = 0;
  int w = 0;
  int c = 0;
  std::vector<T> data;

  TensorT() = default;
  TensorT(int h_, int w_, int c_)
      : h(h_), w(w_), c(c_), data(static_cast<size_t>(h_) * w_ * c_, T(0)) {
    if (h_ < 0 || w_ < 0 || c_ < 0)
      throw std::invalid_argument("TensorT: negative dimension");
  }

  size_t size() const { return data.size(); }

  T& operator()(int y, int x, int ch) {
    return data[(static_cast<size_t>(y) * w + x) * c + ch];
  }
  T operator()(int y, int x, int ch) const {
    return data[(static_cast<size_t>(y) * w + x) * c + ch];
  }

  T* row(int y) { return data.data() + static_cast<size_t>(y) * w * c; }
  const T* row(int y) const { return data.data() + static_cast<size_t>(y) * w * c; }

  T* at(int y, int x) { return data.data() + (static_cast<size_t>(y) * w + x) * c; }
  const T* at(int y, int x) const {
    return data.data() + (static_cast<size_t>(y) * w + x) * c;
  }

  void fill(T v) { std::fill(data.begin(), data.end(), v); }

  bool same_shape(const TensorT& o) const { return h == o.h && w == o.w && c == o.c; }

  bool all_finite() const {
    for (T v : data)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }
};

using Tensor = TensorT<float>;
using TensorD = TensorT<double>;

}  // namespace semtrack
