#pragma once

// Independent brute-force reference implementations used by the test suites.
// Everything here is written as direct nested loops over the defining
// formulas, on purpose, and never calls into the library's fast paths.

#include <algorithm>
#include <cmath>
#include <vector>

#include "wbx/tensor.hpp"

namespace oracle {

template <typename T>
using Tensor = wbx::Tensor4<T>;

// stride-1 same-padding convolution, six nested loops
template <typename T>
Tensor<T> conv2d_ref(const Tensor<T>& x, const Tensor<T>& w, const std::vector<T>& b) {
  const int k = w.h, pad = (k - 1) / 2;
  Tensor<T> out(x.n, w.n, x.h, x.w);
  for (int n = 0; n < x.n; ++n)
    for (int co = 0; co < w.n; ++co)
      for (int y = 0; y < x.h; ++y)
        for (int xx = 0; xx < x.w; ++xx) {
          double acc = b[co];
          for (int ci = 0; ci < x.c; ++ci)
            for (int ky = 0; ky < k; ++ky)
              for (int kx = 0; kx < k; ++kx) {
                const int sy = y + ky - pad, sx = xx + kx - pad;
                if (sy < 0 || sy >= x.h || sx < 0 || sx >= x.w) continue;
                acc += static_cast<double>(w.at(co, ci, ky, kx)) *
                       static_cast<double>(x.at(n, ci, sy, sx));
              }
          out.at(n, co, y, xx) = static_cast<T>(acc);
        }
  return out;
}

// 2x2 stride-2 transposed convolution by scatter-accumulate
template <typename T>
Tensor<T> conv2d_transpose_ref(const Tensor<T>& x, const Tensor<T>& w, const std::vector<T>& b) {
  const int c_out = w.c;
  Tensor<T> out(x.n, c_out, 2 * x.h, 2 * x.w);
  for (int n = 0; n < x.n; ++n)
    for (int co = 0; co < c_out; ++co)
      for (int y = 0; y < 2 * x.h; ++y)
        for (int xx = 0; xx < 2 * x.w; ++xx) out.at(n, co, y, xx) = b[co];
  for (int n = 0; n < x.n; ++n)
    for (int ci = 0; ci < x.c; ++ci)
      for (int y = 0; y < x.h; ++y)
        for (int xx = 0; xx < x.w; ++xx)
          for (int co = 0; co < c_out; ++co)
            for (int ky = 0; ky < 2; ++ky)
              for (int kx = 0; kx < 2; ++kx)
                out.at(n, co, 2 * y + ky, 2 * xx + kx) += w.at(ci, co, ky, kx) * x.at(n, ci, y, xx);
  return out;
}

template <typename T>
Tensor<T> maxpool2_ref(const Tensor<T>& x) {
  Tensor<T> out(x.n, x.c, x.h / 2, x.w / 2);
  for (int n = 0; n < x.n; ++n)
    for (int c = 0; c < x.c; ++c)
      for (int y = 0; y < x.h / 2; ++y)
        for (int xx = 0; xx < x.w / 2; ++xx) {
          T m = x.at(n, c, 2 * y, 2 * xx);
          m = std::max(m, x.at(n, c, 2 * y, 2 * xx + 1));
          m = std::max(m, x.at(n, c, 2 * y + 1, 2 * xx));
          m = std::max(m, x.at(n, c, 2 * y + 1, 2 * xx + 1));
          out.at(n, c, y, xx) = m;
        }
  return out;
}

template <typename T>
Tensor<T> linear_ref(const Tensor<T>& x, const Tensor<T>& w, const std::vector<T>& b) {
  Tensor<T> out(x.n, w.n, 1, 1);
  for (int n = 0; n < x.n; ++n)
    for (int fo = 0; fo < w.n; ++fo) {
      double acc = b[fo];
      for (int fi = 0; fi < x.c; ++fi)
        acc += static_cast<double>(w.at(fo, fi, 0, 0)) * static_cast<double>(x.at(n, fi, 0, 0));
      out.at(n, fo, 0, 0) = static_cast<T>(acc);
    }
  return out;
}

// weighted BCE exactly as the per-element sum of the defining equation,
// with the corrected second term
inline double bce_ref(const std::vector<double>& logits, const std::vector<double>& targets,
                      int batch, double w_c) {
  const size_t m = logits.size() / batch;
  double outer = 0.0;
  for (int n = 0; n < batch; ++n) {
    double inner = 0.0;
    for (size_t j = 0; j < m; ++j) {
      const double x = logits[n * m + j];
      const double y = targets[n * m + j];
      const double s = 1.0 / (1.0 + std::exp(-x));
      inner += w_c * y * std::log(s) + (1.0 - y) * std::log(1.0 - s);
    }
    outer += inner / static_cast<double>(m);
  }
  return -outer / batch;
}

// dice of one sample: (2*sum(p*t) + eps) / (sum p + sum t + eps)
inline double dice_sample_ref(const std::vector<double>& p, const std::vector<double>& t,
                              double eps) {
  double inter = 0.0, sp = 0.0, st = 0.0;
  for (size_t i = 0; i < p.size(); ++i) {
    inter += p[i] * t[i];
    sp += p[i];
    st += t[i];
  }
  return (2.0 * inter + eps) / (sp + st + eps);
}

// confidence-weighted centroid over pixels at or above the threshold
inline bool weighted_center_ref(const std::vector<double>& conf, int h, int w, double thresh,
                                double& xc, double& yc) {
  double sw = 0.0, sx = 0.0, sy = 0.0;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double s = conf[y * w + x];
      if (s >= thresh) {
        sw += s;
        sx += s * x;
        sy += s * y;
      }
    }
  if (sw == 0.0) return false;
  xc = sx / sw;
  yc = sy / sw;
  return true;
}

// weighted standard deviation with the (K-1)/K correction in the denominator
inline void weighted_std_ref(const std::vector<double>& conf, int h, int w, double thresh,
                             double xc, double yc, double& sx, double& sy) {
  double sw = 0.0, accx = 0.0, accy = 0.0;
  long k = 0;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double s = conf[y * w + x];
      if (s >= thresh) {
        ++k;
        sw += s;
        accx += s * (x - xc) * (x - xc);
        accy += s * (y - yc) * (y - yc);
      }
    }
  if (k <= 1) {
    sx = sy = 0.0;
    return;
  }
  const double denom = (static_cast<double>(k - 1) / static_cast<double>(k)) * sw;
  sx = std::sqrt(accx / denom);
  sy = std::sqrt(accy / denom);
}

// regularized incomplete beta I_x(a, b) by continued fraction
inline double betacf(double a, double b, double x) {
  const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
  const double eps = 3e-14, fpmin = 1e-300;
  double c = 1.0, d = 1.0 - qab * x / qap;
  if (std::abs(d) < fpmin) d = fpmin;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= 300; ++m) {
    const int m2 = 2 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < fpmin) d = fpmin;
    c = 1.0 + aa / c;
    if (std::abs(c) < fpmin) c = fpmin;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < fpmin) d = fpmin;
    c = 1.0 + aa / c;
    if (std::abs(c) < fpmin) c = fpmin;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < eps) break;
  }
  return h;
}

inline double betai(double a, double b, double x) {
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  const double bt = std::exp(std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                             a * std::log(x) + b * std::log(1.0 - x));
  if (x < (a + 1.0) / (a + b + 2.0)) return bt * betacf(a, b, x) / a;
  return 1.0 - bt * betacf(b, a, 1.0 - x) / b;
}

// central finite difference of f at x with step h
template <typename F>
double central_diff(F&& f, double& x, double h = 1e-3) {
  const double x0 = x;
  x = x0 + h;
  const double fp = f();
  x = x0 - h;
  const double fm = f();
  x = x0;
  return (fp - fm) / (2.0 * h);
}

inline double rel_err(double a, double b) {
  const double scale = std::max({std::abs(a), std::abs(b), 1e-8});
  return std::abs(a - b) / scale;
}

}  // namespace oracle
