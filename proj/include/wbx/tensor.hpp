#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "wbx/errors.hpp"
#include "wbx/rng.hpp"

namespace wbx {

// Dense 4-D array (batch, channel, rows, cols), row-major with w fastest.
// T is float in production and double in gradient-check mode.
template <typename T>
struct Tensor4 {
  int n = 0, c = 0, h = 0, w = 0;
  std::vector<T> data;

  Tensor4() = default;
  Tensor4(int n_, int c_, int h_, int w_, T fill = T(0))
      : n(n_), c(c_), h(h_), w(w_), data(static_cast<size_t>(n_) * c_ * h_ * w_, fill) {}

  size_t size() const { return data.size(); }
  bool same_dims(const Tensor4& o) const {
    return n == o.n && c == o.c && h == o.h && w == o.w;
  }

  T& at(int in, int ic, int iy, int ix) {
    return data[((static_cast<size_t>(in) * c + ic) * h + iy) * w + ix];
  }
  T at(int in, int ic, int iy, int ix) const {
    return data[((static_cast<size_t>(in) * c + ic) * h + iy) * w + ix];
  }

  // contiguous (h*w) plane of one sample/channel
  T* plane(int in, int ic) {
    return data.data() + (static_cast<size_t>(in) * c + ic) * h * w;
  }
  const T* plane(int in, int ic) const {
    return data.data() + (static_cast<size_t>(in) * c + ic) * h * w;
  }

  void fill(T v) { std::fill(data.begin(), data.end(), v); }

  std::string dims_str() const {
    return "(" + std::to_string(n) + "," + std::to_string(c) + "," +
           std::to_string(h) + "," + std::to_string(w) + ")";
  }
};

template <typename T>
inline bool all_finite(const Tensor4<T>& t) {
  for (const T v : t.data)
    if (!std::isfinite(static_cast<double>(v))) return false;
  return true;
}

template <typename T>
inline void require_finite(const Tensor4<T>& t, const char* what) {
  if (!all_finite(t)) throw numeric_error(std::string(what) + ": non-finite values");
}

template <typename T>
inline void require_same_dims(const Tensor4<T>& a, const Tensor4<T>& b, const char* what) {
  if (!a.same_dims(b))
    throw dim_error(std::string(what) + ": dims " + a.dims_str() + " vs " + b.dims_str());
}

// Trainable tensor with paired gradient storage.
template <typename T>
struct Param {
  Tensor4<T> value;
  Tensor4<T> grad;
  std::string name;

  Param() = default;
  Param(std::string name_, int n, int c, int h, int w)
      : value(n, c, h, w), grad(n, c, h, w), name(std::move(name_)) {}

  void zero_grad() { grad.fill(T(0)); }

  // He-uniform over the given fan-in; the default draws nothing (zeros).
  void init_he_uniform(Rng& rng, int fan_in) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
    for (auto& v : value.data) v = static_cast<T>(rng.uniform(-limit, limit));
  }
};

template <typename T, typename U>
inline Tensor4<T> cast_tensor(const Tensor4<U>& src) {
  Tensor4<T> out(src.n, src.c, src.h, src.w);
  for (size_t i = 0; i < src.data.size(); ++i) out.data[i] = static_cast<T>(src.data[i]);
  return out;
}

}  // namespace wbx
