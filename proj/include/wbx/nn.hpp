#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "wbx/errors.hpp"
#include "wbx/rng.hpp"
#include "wbx/tensor.hpp"

namespace wbx {

enum class Mode { train, eval };

namespace detail {

// Cheap non-finite probe: NaN/Inf poison the sum. Values in this codebase are
// O(1), so a finite tensor cannot overflow the accumulator.
template <typename T>
inline void require_finite_fast(const Tensor4<T>& t, const char* what) {
  double s = 0.0;
  const T* p = t.data.data();
  const size_t len = t.data.size();
#pragma omp simd reduction(+ : s)
  for (size_t i = 0; i < len; ++i) s += static_cast<double>(p[i]);
  if (!std::isfinite(s)) require_finite(t, what);
}

// col layout (c_in*k*k, h*w); zero padding outside the image.
template <typename T>
inline void im2col(const T* in, T* col, int c_in, int h, int w, int k) {
  const int hw = h * w;
  const int pad = (k - 1) / 2;
  for (int ci = 0; ci < c_in; ++ci) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        T* crow = col + ((static_cast<size_t>(ci) * k + ky) * k + kx) * hw;
        const int dy = ky - pad, dx = kx - pad;
        for (int y = 0; y < h; ++y) {
          const int sy = y + dy;
          T* c = crow + static_cast<size_t>(y) * w;
          if (sy < 0 || sy >= h) {
            std::fill(c, c + w, T(0));
            continue;
          }
          const T* xr = in + static_cast<size_t>(ci) * hw + static_cast<size_t>(sy) * w;
          const int x0 = std::max(0, -dx), x1 = std::min(w, w - dx);
          for (int x = 0; x < x0; ++x) c[x] = T(0);
          for (int x = x0; x < x1; ++x) c[x] = xr[x + dx];
          for (int x = x1; x < w; ++x) c[x] = T(0);
        }
      }
    }
  }
}

// accumulate col gradients back into the input gradient
template <typename T>
inline void col2im_accum(const T* col, T* gx, int c_in, int h, int w, int k, bool par) {
  const int hw = h * w;
  const int pad = (k - 1) / 2;
#pragma omp parallel for schedule(static) if (par)
  for (int ci = 0; ci < c_in; ++ci) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const T* crow = col + ((static_cast<size_t>(ci) * k + ky) * k + kx) * hw;
        const int dy = ky - pad, dx = kx - pad;
        for (int y = 0; y < h; ++y) {
          const int sy = y + dy;
          if (sy < 0 || sy >= h) continue;
          const T* c = crow + static_cast<size_t>(y) * w;
          T* xr = gx + static_cast<size_t>(ci) * hw + static_cast<size_t>(sy) * w;
          const int x0 = std::max(0, -dx), x1 = std::min(w, w - dx);
          for (int x = x0; x < x1; ++x) xr[x + dx] += c[x];
        }
      }
    }
  }
}

constexpr int kConvDirectMinHw = 2048;    // direct taps beat im2col on big planes
constexpr int kConvDotMaxHw = 64;         // dot kernel wins when rows are tiny
constexpr size_t kParallelMinWork = 1u << 19;  // skip team launch below ~0.5 Mflop

template <typename T>
inline std::vector<T>& scratch(int which) {
  static thread_local std::vector<T> bufs[4];
  return bufs[which];
}

}  // namespace detail

// 2-D convolution, stride 1, odd kernel, "same" padding. weights dims
// (c_out, c_in, k, k); bias length c_out. Output (n, c_out, h, w).
template <typename T>
Tensor4<T> conv2d_forward(const Tensor4<T>& input, const Tensor4<T>& weights,
                          const std::vector<T>& bias) {
  const int k = weights.h;
  if (weights.w != k || k % 2 == 0) throw dim_error("conv2d: kernel must be square and odd");
  if (weights.c != input.c)
    throw dim_error("conv2d: input channels " + std::to_string(input.c) +
                    " != kernel c_in " + std::to_string(weights.c));
  if (static_cast<int>(bias.size()) != weights.n) throw dim_error("conv2d: bias length != c_out");
  if (input.h < 1 || input.w < 1) throw dim_error("conv2d: empty input");
  detail::require_finite_fast(input, "conv2d input");

  const int n = input.n, c_in = input.c, h = input.h, w = input.w;
  const int c_out = weights.n, hw = h * w, kn = c_in * k * k, pad = (k - 1) / 2;
  Tensor4<T> out(n, c_out, h, w);
  const size_t work = 2ull * n * c_out * kn * hw;
  const bool par = work >= detail::kParallelMinWork;
  const bool use_dot = hw <= detail::kConvDotMaxHw;

  // im2col pays off only when the col buffer is reused across many output
  // channels; otherwise the direct tap loop wins
  if (!use_dot && (hw >= detail::kConvDirectMinHw || c_out < 16)) {
    // direct: k*k shifted axpys per (c_out, c_in)
#pragma omp parallel for schedule(static) collapse(2) if (par)
    for (int in_i = 0; in_i < n; ++in_i) {
      for (int co = 0; co < c_out; ++co) {
        T* o = out.plane(in_i, co);
        std::fill(o, o + hw, bias[co]);
        for (int ci = 0; ci < c_in; ++ci) {
          const T* x = input.plane(in_i, ci);
          for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
              const T wv = weights.at(co, ci, ky, kx);
              const int dy = ky - pad, dx = kx - pad;
              const int y0 = std::max(0, -dy), y1 = std::min(h, h - dy);
              const int x0 = std::max(0, -dx), x1 = std::min(w, w - dx);
              for (int y = y0; y < y1; ++y) {
                const T* xr = x + static_cast<size_t>(y + dy) * w + dx;
                T* orow = o + static_cast<size_t>(y) * w;
                for (int xx = x0; xx < x1; ++xx) orow[xx] += wv * xr[xx];
              }
            }
          }
        }
      }
    }
    return out;
  }

  std::vector<T>& col = detail::scratch<T>(0);
  col.resize(static_cast<size_t>(kn) * hw);
  T* colp = col.data();
  T* colTp = nullptr;
  if (use_dot) {
    std::vector<T>& colT = detail::scratch<T>(1);
    colT.resize(static_cast<size_t>(hw) * kn);
    colTp = colT.data();
  }
  const T* wp = weights.data.data();
  const T* bp = bias.data();
  for (int in_i = 0; in_i < n; ++in_i) {
    detail::im2col(input.plane(in_i, 0), colp, c_in, h, w, k);
    if (use_dot) {
      for (int r = 0; r < kn; ++r)
        for (int j = 0; j < hw; ++j)
          colTp[static_cast<size_t>(j) * kn + r] = colp[static_cast<size_t>(r) * hw + j];
      T* outp = out.plane(in_i, 0);
#pragma omp parallel for schedule(static) if (par)
      for (int co = 0; co < c_out; ++co) {
        const T* wr = wp + static_cast<size_t>(co) * kn;
        T* o = outp + static_cast<size_t>(co) * hw;
        for (int j = 0; j < hw; ++j) {
          const T* cr = colTp + static_cast<size_t>(j) * kn;
          T s = T(0);
#pragma omp simd reduction(+ : s)
          for (int r = 0; r < kn; ++r) s += wr[r] * cr[r];
          o[j] = bp[co] + s;
        }
      }
    } else {
      T* outp = out.plane(in_i, 0);
#pragma omp parallel for schedule(static) if (par)
      for (int co = 0; co < c_out; ++co) {
        T* o = outp + static_cast<size_t>(co) * hw;
        std::fill(o, o + hw, bp[co]);
        const T* wr = wp + static_cast<size_t>(co) * kn;
        for (int r = 0; r < kn; ++r) {
          const T wv = wr[r];
          const T* c = colp + static_cast<size_t>(r) * hw;
#pragma omp simd
          for (int j = 0; j < hw; ++j) o[j] += wv * c[j];
        }
      }
    }
  }
  return out;
}

// Gradients w.r.t. input, weights and bias. grad_weights/grad_bias are
// accumulated into; grad_input is overwritten.
template <typename T>
void conv2d_backward(const Tensor4<T>& input, const Tensor4<T>& weights,
                     const Tensor4<T>& grad_out, Tensor4<T>& grad_input,
                     Tensor4<T>& grad_weights, std::vector<T>& grad_bias) {
  const int k = weights.h;
  const int n = input.n, c_in = input.c, h = input.h, w = input.w;
  const int c_out = weights.n, hw = h * w, kn = c_in * k * k;
  if (grad_out.n != n || grad_out.c != c_out || grad_out.h != h || grad_out.w != w)
    throw dim_error("conv2d backward: grad dims " + grad_out.dims_str());

  grad_input = Tensor4<T>(n, c_in, h, w);
  const size_t work = 2ull * n * c_out * kn * hw;
  const bool par = work >= detail::kParallelMinWork;

  for (int co = 0; co < c_out; ++co) {
    double s = 0.0;
    for (int in_i = 0; in_i < n; ++in_i) {
      const T* g = grad_out.plane(in_i, co);
#pragma omp simd reduction(+ : s)
      for (int j = 0; j < hw; ++j) s += static_cast<double>(g[j]);
    }
    grad_bias[co] += static_cast<T>(s);
  }

  std::vector<T>& col = detail::scratch<T>(0);
  std::vector<T>& gcol = detail::scratch<T>(1);
  col.resize(static_cast<size_t>(kn) * hw);
  gcol.resize(static_cast<size_t>(kn) * hw);
  T* colp = col.data();
  T* gcolp = gcol.data();
  const bool tiny = hw <= detail::kConvDotMaxHw;
  T* wTp = nullptr;
  T* goTp = nullptr;
  if (tiny) {
    std::vector<T>& wT = detail::scratch<T>(2);
    std::vector<T>& goT = detail::scratch<T>(3);
    wT.resize(static_cast<size_t>(kn) * c_out);
    for (int co = 0; co < c_out; ++co)
      for (int r = 0; r < kn; ++r)
        wT[static_cast<size_t>(r) * c_out + co] = weights.data[static_cast<size_t>(co) * kn + r];
    goT.resize(static_cast<size_t>(hw) * c_out);
    wTp = wT.data();
    goTp = goT.data();
  }
  const T* wp = weights.data.data();
  T* gwp = grad_weights.data.data();

  for (int in_i = 0; in_i < n; ++in_i) {
    detail::im2col(input.plane(in_i, 0), colp, c_in, h, w, k);
    const T* go = grad_out.plane(in_i, 0);

    // weight gradient
    if (hw >= kn) {
#pragma omp parallel for schedule(static) if (par)
      for (int co = 0; co < c_out; ++co) {
        const T* g = go + static_cast<size_t>(co) * hw;
        T* gw = gwp + static_cast<size_t>(co) * kn;
        for (int r = 0; r < kn; ++r) {
          const T* c = colp + static_cast<size_t>(r) * hw;
          T s = T(0);
#pragma omp simd reduction(+ : s)
          for (int j = 0; j < hw; ++j) s += g[j] * c[j];
          gw[r] += s;
        }
      }
    } else {
#pragma omp parallel for schedule(static) if (par)
      for (int co = 0; co < c_out; ++co) {
        const T* g = go + static_cast<size_t>(co) * hw;
        T* gw = gwp + static_cast<size_t>(co) * kn;
        for (int j = 0; j < hw; ++j) {
          const T gv = g[j];
          const T* c = colp + j;
          for (int r = 0; r < kn; ++r) gw[r] += gv * c[static_cast<size_t>(r) * hw];
        }
      }
    }

    // input gradient via col: gcol = W^T * grad_out
    if (tiny) {
      for (int co = 0; co < c_out; ++co)
        for (int j = 0; j < hw; ++j)
          goTp[static_cast<size_t>(j) * c_out + co] = go[static_cast<size_t>(co) * hw + j];
#pragma omp parallel for schedule(static) if (par)
      for (int r = 0; r < kn; ++r) {
        const T* wr = wTp + static_cast<size_t>(r) * c_out;
        T* gc = gcolp + static_cast<size_t>(r) * hw;
        for (int j = 0; j < hw; ++j) {
          const T* g = goTp + static_cast<size_t>(j) * c_out;
          T s = T(0);
#pragma omp simd reduction(+ : s)
          for (int co = 0; co < c_out; ++co) s += wr[co] * g[co];
          gc[j] = s;
        }
      }
    } else {
#pragma omp parallel for schedule(static) if (par)
      for (int r = 0; r < kn; ++r) {
        T* gc = gcolp + static_cast<size_t>(r) * hw;
        std::fill(gc, gc + hw, T(0));
        for (int co = 0; co < c_out; ++co) {
          const T wv = wp[static_cast<size_t>(co) * kn + r];
          const T* g = go + static_cast<size_t>(co) * hw;
#pragma omp simd
          for (int j = 0; j < hw; ++j) gc[j] += wv * g[j];
        }
      }
    }
    detail::col2im_accum(gcolp, grad_input.plane(in_i, 0), c_in, h, w, k, par);
  }
}

// Transposed convolution, 2x2 kernel, stride 2: doubles the spatial size.
// weights dims (c_in, c_out, 2, 2). Tiles do not overlap, so the output is a
// pure gather from one input pixel per output pixel.
template <typename T>
Tensor4<T> conv2d_transpose_forward(const Tensor4<T>& input, const Tensor4<T>& weights,
                                    const std::vector<T>& bias) {
  if (weights.h != 2 || weights.w != 2) throw dim_error("conv2d_transpose: kernel must be 2x2");
  if (weights.n != input.c)
    throw dim_error("conv2d_transpose: input channels " + std::to_string(input.c) +
                    " != kernel c_in " + std::to_string(weights.n));
  if (static_cast<int>(bias.size()) != weights.c)
    throw dim_error("conv2d_transpose: bias length != c_out");
  detail::require_finite_fast(input, "conv2d_transpose input");

  const int n = input.n, c_in = input.c, ih = input.h, iw = input.w;
  const int c_out = weights.c, oh = 2 * ih, ow = 2 * iw;
  Tensor4<T> out(n, c_out, oh, ow);
  const bool par = 8ull * n * c_in * c_out * ih * iw >= detail::kParallelMinWork;

  if (ih * iw <= detail::kConvDotMaxHw) {
    // tiny planes: transpose so each output pixel is one contiguous dot
    std::vector<T>& inT = detail::scratch<T>(0);   // (ih*iw, c_in)
    std::vector<T>& wT = detail::scratch<T>(1);    // (ky, kx, c_out, c_in)
    inT.resize(static_cast<size_t>(ih) * iw * c_in);
    wT.resize(static_cast<size_t>(4) * c_out * c_in);
    T* wTp = wT.data();
    for (int ci = 0; ci < c_in; ++ci)
      for (int co = 0; co < c_out; ++co)
        for (int t = 0; t < 4; ++t)
          wTp[(static_cast<size_t>(t) * c_out + co) * c_in + ci] =
              weights.data[(static_cast<size_t>(ci) * c_out + co) * 4 + t];
    T* inTp = inT.data();
    for (int in_i = 0; in_i < n; ++in_i) {
      const T* xp = input.plane(in_i, 0);
      for (int ci = 0; ci < c_in; ++ci)
        for (int j = 0; j < ih * iw; ++j)
          inTp[static_cast<size_t>(j) * c_in + ci] = xp[static_cast<size_t>(ci) * ih * iw + j];
      T* outp = out.plane(in_i, 0);
#pragma omp parallel for schedule(static) if (par)
      for (int co = 0; co < c_out; ++co) {
        T* o = outp + static_cast<size_t>(co) * oh * ow;
        for (int iy = 0; iy < ih; ++iy) {
          for (int ix = 0; ix < iw; ++ix) {
            const T* xv = inTp + (static_cast<size_t>(iy) * iw + ix) * c_in;
            for (int t = 0; t < 4; ++t) {
              const T* wr = wTp + (static_cast<size_t>(t) * c_out + co) * c_in;
              T s = T(0);
#pragma omp simd reduction(+ : s)
              for (int ci = 0; ci < c_in; ++ci) s += wr[ci] * xv[ci];
              o[static_cast<size_t>(2 * iy + (t >> 1)) * ow + 2 * ix + (t & 1)] = bias[co] + s;
            }
          }
        }
      }
    }
    return out;
  }

#pragma omp parallel for schedule(static) collapse(2) if (par)
  for (int in_i = 0; in_i < n; ++in_i) {
    for (int co = 0; co < c_out; ++co) {
      T* o = out.plane(in_i, co);
      for (int y = 0; y < oh; ++y) {
        const int iy = y >> 1, ky = y & 1;
        T* orow = o + static_cast<size_t>(y) * ow;
        for (int x = 0; x < ow; ++x) orow[x] = bias[co];
        for (int ci = 0; ci < c_in; ++ci) {
          const T w00 = weights.at(ci, co, ky, 0), w01 = weights.at(ci, co, ky, 1);
          const T* xr = input.plane(in_i, ci) + static_cast<size_t>(iy) * iw;
#pragma omp simd
          for (int ix = 0; ix < iw; ++ix) {
            orow[2 * ix] += w00 * xr[ix];
            orow[2 * ix + 1] += w01 * xr[ix];
          }
        }
      }
    }
  }
  return out;
}

template <typename T>
void conv2d_transpose_backward(const Tensor4<T>& input, const Tensor4<T>& weights,
                               const Tensor4<T>& grad_out, Tensor4<T>& grad_input,
                               Tensor4<T>& grad_weights, std::vector<T>& grad_bias) {
  const int n = input.n, c_in = input.c, ih = input.h, iw = input.w;
  const int c_out = weights.c, oh = 2 * ih, ow = 2 * iw;
  if (grad_out.n != n || grad_out.c != c_out || grad_out.h != oh || grad_out.w != ow)
    throw dim_error("conv2d_transpose backward: grad dims " + grad_out.dims_str());

  grad_input = Tensor4<T>(n, c_in, ih, iw);
  const bool par = 8ull * n * c_in * c_out * ih * iw >= detail::kParallelMinWork;

  for (int co = 0; co < c_out; ++co) {
    double s = 0.0;
    for (int in_i = 0; in_i < n; ++in_i) {
      const T* g = grad_out.plane(in_i, co);
#pragma omp simd reduction(+ : s)
      for (int j = 0; j < oh * ow; ++j) s += static_cast<double>(g[j]);
    }
    grad_bias[co] += static_cast<T>(s);
  }

#pragma omp parallel for schedule(static) collapse(2) if (par)
  for (int in_i = 0; in_i < n; ++in_i) {
    for (int ci = 0; ci < c_in; ++ci) {
      T* gx = grad_input.plane(in_i, ci);
      for (int co = 0; co < c_out; ++co) {
        const T* g = grad_out.plane(in_i, co);
        for (int ky = 0; ky < 2; ++ky) {
          const T w0 = weights.at(ci, co, ky, 0), w1 = weights.at(ci, co, ky, 1);
          for (int iy = 0; iy < ih; ++iy) {
            const T* grow = g + (static_cast<size_t>(2 * iy + ky)) * ow;
            T* gxr = gx + static_cast<size_t>(iy) * iw;
#pragma omp simd
            for (int ix = 0; ix < iw; ++ix)
              gxr[ix] += w0 * grow[2 * ix] + w1 * grow[2 * ix + 1];
          }
        }
      }
    }
  }

#pragma omp parallel for schedule(static) if (par)
  for (int ci = 0; ci < c_in; ++ci) {
    for (int co = 0; co < c_out; ++co) {
      for (int ky = 0; ky < 2; ++ky) {
        for (int kx = 0; kx < 2; ++kx) {
          double s = 0.0;
          for (int in_i = 0; in_i < n; ++in_i) {
            const T* x = input.plane(in_i, ci);
            const T* g = grad_out.plane(in_i, co);
            for (int iy = 0; iy < ih; ++iy) {
              const T* xr = x + static_cast<size_t>(iy) * iw;
              const T* grow = g + (static_cast<size_t>(2 * iy + ky)) * ow;
              T acc = T(0);
#pragma omp simd reduction(+ : acc)
              for (int ix = 0; ix < iw; ++ix) acc += xr[ix] * grow[2 * ix + kx];
              s += static_cast<double>(acc);
            }
          }
          grad_weights.at(ci, co, ky, kx) += static_cast<T>(s);
        }
      }
    }
  }
}

// 2x2 max pooling, stride 2. argmax holds the flat input index of each
// window maximum (first hit wins on ties) for the backward routing.
template <typename T>
Tensor4<T> maxpool2_forward(const Tensor4<T>& input, std::vector<int32_t>& argmax) {
  if (input.h % 2 != 0 || input.w % 2 != 0)
    throw dim_error("maxpool2: spatial dims must be even, got " + input.dims_str());
  const int n = input.n, c = input.c, h = input.h, w = input.w;
  const int oh = h / 2, ow = w / 2;
  Tensor4<T> out(n, c, oh, ow);
  argmax.assign(out.size(), 0);
  int32_t* argp = argmax.data();
  const bool par = input.size() >= detail::kParallelMinWork / 8;
#pragma omp parallel for schedule(static) collapse(2) if (par)
  for (int in_i = 0; in_i < n; ++in_i) {
    for (int ci = 0; ci < c; ++ci) {
      const T* x = input.plane(in_i, ci);
      T* o = out.plane(in_i, ci);
      int32_t* am = argp + (static_cast<size_t>(in_i) * c + ci) * oh * ow;
      const size_t base = (static_cast<size_t>(in_i) * c + ci) * h * w;
      for (int y = 0; y < oh; ++y) {
        for (int x2 = 0; x2 < ow; ++x2) {
          const int iy = 2 * y, ix = 2 * x2;
          int best = iy * w + ix;
          T bv = x[best];
          const int cand[3] = {iy * w + ix + 1, (iy + 1) * w + ix, (iy + 1) * w + ix + 1};
          for (const int idx : cand)
            if (x[idx] > bv) { bv = x[idx]; best = idx; }
          o[static_cast<size_t>(y) * ow + x2] = bv;
          am[static_cast<size_t>(y) * ow + x2] = static_cast<int32_t>(base + best);
        }
      }
    }
  }
  return out;
}

template <typename T>
Tensor4<T> maxpool2_backward(const Tensor4<T>& grad_out, const std::vector<int32_t>& argmax,
                             int in_h, int in_w) {
  Tensor4<T> gx(grad_out.n, grad_out.c, in_h, in_w);
  for (size_t i = 0; i < grad_out.data.size(); ++i)
    gx.data[argmax[i]] += grad_out.data[i];
  return gx;
}

template <typename T>
Tensor4<T> relu_forward(const Tensor4<T>& input) {
  Tensor4<T> out = input;
  for (auto& v : out.data) v = v > T(0) ? v : T(0);
  return out;
}

template <typename T>
Tensor4<T> relu_backward(const Tensor4<T>& grad_out, const Tensor4<T>& input) {
  Tensor4<T> gx = grad_out;
  for (size_t i = 0; i < gx.data.size(); ++i)
    if (input.data[i] <= T(0)) gx.data[i] = T(0);
  return gx;
}

template <typename T>
inline T sigmoid_scalar(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

template <typename T>
Tensor4<T> sigmoid_forward(const Tensor4<T>& input) {
  Tensor4<T> out = input;
  for (auto& v : out.data) v = sigmoid_scalar(v);
  return out;
}

template <typename T>
Tensor4<T> sigmoid_backward(const Tensor4<T>& grad_out, const Tensor4<T>& output) {
  Tensor4<T> gx = grad_out;
  for (size_t i = 0; i < gx.data.size(); ++i)
    gx.data[i] *= output.data[i] * (T(1) - output.data[i]);
  return gx;
}

// softmax over the channel axis, independently per (n, y, x)
template <typename T>
Tensor4<T> softmax_forward(const Tensor4<T>& input) {
  const int n = input.n, c = input.c, hw = input.h * input.w;
  Tensor4<T> out(input.n, input.c, input.h, input.w);
  for (int in_i = 0; in_i < n; ++in_i) {
    for (int j = 0; j < hw; ++j) {
      T mx = input.plane(in_i, 0)[j];
      for (int ci = 1; ci < c; ++ci) mx = std::max(mx, input.plane(in_i, ci)[j]);
      T denom = T(0);
      for (int ci = 0; ci < c; ++ci) {
        const T e = std::exp(input.plane(in_i, ci)[j] - mx);
        out.plane(in_i, ci)[j] = e;
        denom += e;
      }
      for (int ci = 0; ci < c; ++ci) out.plane(in_i, ci)[j] /= denom;
    }
  }
  return out;
}

template <typename T>
Tensor4<T> softmax_backward(const Tensor4<T>& grad_out, const Tensor4<T>& output) {
  const int n = output.n, c = output.c, hw = output.h * output.w;
  Tensor4<T> gx(output.n, output.c, output.h, output.w);
  for (int in_i = 0; in_i < n; ++in_i) {
    for (int j = 0; j < hw; ++j) {
      T dot = T(0);
      for (int ci = 0; ci < c; ++ci)
        dot += grad_out.plane(in_i, ci)[j] * output.plane(in_i, ci)[j];
      for (int ci = 0; ci < c; ++ci)
        gx.plane(in_i, ci)[j] =
            output.plane(in_i, ci)[j] * (grad_out.plane(in_i, ci)[j] - dot);
    }
  }
  return gx;
}

// Per-channel batch normalization. Running stats update with momentum 0.1 in
// train mode (unbiased variance for the running estimate); eval mode applies
// the stored stats.
template <typename T>
struct BatchNormCache {
  Tensor4<T> xhat;
  std::vector<T> inv_std;  // per channel
};

template <typename T>
Tensor4<T> batchnorm2d_forward(const Tensor4<T>& input, const std::vector<T>& gamma,
                               const std::vector<T>& beta, std::vector<T>& running_mean,
                               std::vector<T>& running_var, Mode mode,
                               BatchNormCache<T>* cache = nullptr, T momentum = T(0.1),
                               T eps = T(1e-5)) {
  const int n = input.n, c = input.c, hw = input.h * input.w;
  const int m = n * hw;
  if (static_cast<int>(gamma.size()) != c || static_cast<int>(beta.size()) != c)
    throw dim_error("batchnorm2d: gamma/beta length != channels");
  Tensor4<T> out(input.n, input.c, input.h, input.w);
  const bool par = input.size() >= detail::kParallelMinWork / 8;

  if (mode == Mode::eval) {
    for (int ci = 0; ci < c; ++ci) {
      const T inv = T(1) / std::sqrt(running_var[ci] + eps);
      const T mu = running_mean[ci], g = gamma[ci], b = beta[ci];
      for (int in_i = 0; in_i < n; ++in_i) {
        const T* x = input.plane(in_i, ci);
        T* o = out.plane(in_i, ci);
#pragma omp simd
        for (int j = 0; j < hw; ++j) o[j] = (x[j] - mu) * inv * g + b;
      }
    }
    return out;
  }

  if (m < 2) throw numeric_error("batchnorm2d: degenerate variance (batch*h*w < 2)");
  if (cache) {
    cache->xhat = Tensor4<T>(input.n, input.c, input.h, input.w);
    cache->inv_std.assign(c, T(0));
  }
  Tensor4<T>* xhat_out = cache ? &cache->xhat : nullptr;
  T* inv_out = cache ? cache->inv_std.data() : nullptr;
  T* rm = running_mean.data();
  T* rv = running_var.data();
#pragma omp parallel for schedule(static) if (par)
  for (int ci = 0; ci < c; ++ci) {
    double sum = 0.0;
    for (int in_i = 0; in_i < n; ++in_i) {
      const T* x = input.plane(in_i, ci);
#pragma omp simd reduction(+ : sum)
      for (int j = 0; j < hw; ++j) sum += static_cast<double>(x[j]);
    }
    const T mu = static_cast<T>(sum / m);
    double vsum = 0.0;
    for (int in_i = 0; in_i < n; ++in_i) {
      const T* x = input.plane(in_i, ci);
#pragma omp simd reduction(+ : vsum)
      for (int j = 0; j < hw; ++j) {
        const double d = static_cast<double>(x[j] - mu);
        vsum += d * d;
      }
    }
    const T var = static_cast<T>(vsum / m);
    const T inv = T(1) / std::sqrt(var + eps);
    const T g = gamma[ci], b = beta[ci];
    for (int in_i = 0; in_i < n; ++in_i) {
      const T* x = input.plane(in_i, ci);
      T* o = out.plane(in_i, ci);
      T* xh = xhat_out ? xhat_out->plane(in_i, ci) : nullptr;
      if (xh) {
#pragma omp simd
        for (int j = 0; j < hw; ++j) {
          const T xhat = (x[j] - mu) * inv;
          xh[j] = xhat;
          o[j] = xhat * g + b;
        }
      } else {
#pragma omp simd
        for (int j = 0; j < hw; ++j) o[j] = (x[j] - mu) * inv * g + b;
      }
    }
    if (inv_out) inv_out[ci] = inv;
    rm[ci] = (T(1) - momentum) * rm[ci] + momentum * mu;
    rv[ci] = (T(1) - momentum) * rv[ci] + momentum * var * static_cast<T>(m) / static_cast<T>(m - 1);
  }
  return out;
}

template <typename T>
Tensor4<T> batchnorm2d_backward(const Tensor4<T>& grad_out, const BatchNormCache<T>& cache,
                                const std::vector<T>& gamma, std::vector<T>& grad_gamma,
                                std::vector<T>& grad_beta) {
  const int n = grad_out.n, c = grad_out.c, hw = grad_out.h * grad_out.w;
  const int m = n * hw;
  Tensor4<T> gx(grad_out.n, grad_out.c, grad_out.h, grad_out.w);
  const bool par = grad_out.size() >= detail::kParallelMinWork / 8;
  T* ggp = grad_gamma.data();
  T* gbp = grad_beta.data();
#pragma omp parallel for schedule(static) if (par)
  for (int ci = 0; ci < c; ++ci) {
    double gsum = 0.0, gxsum = 0.0;
    for (int in_i = 0; in_i < n; ++in_i) {
      const T* g = grad_out.plane(in_i, ci);
      const T* xh = cache.xhat.plane(in_i, ci);
#pragma omp simd reduction(+ : gsum, gxsum)
      for (int j = 0; j < hw; ++j) {
        gsum += static_cast<double>(g[j]);
        gxsum += static_cast<double>(g[j] * xh[j]);
      }
    }
    ggp[ci] += static_cast<T>(gxsum);
    gbp[ci] += static_cast<T>(gsum);
    const T gmean = static_cast<T>(gsum / m);
    const T gxmean = static_cast<T>(gxsum / m);
    const T scale = gamma[ci] * cache.inv_std[ci];
    for (int in_i = 0; in_i < n; ++in_i) {
      const T* g = grad_out.plane(in_i, ci);
      const T* xh = cache.xhat.plane(in_i, ci);
      T* o = gx.plane(in_i, ci);
#pragma omp simd
      for (int j = 0; j < hw; ++j) o[j] = scale * (g[j] - gmean - xh[j] * gxmean);
    }
  }
  return gx;
}

// Element dropout. The mask carries 0 or 1/(1-p) so backward is a product.
template <typename T>
Tensor4<T> dropout_forward(const Tensor4<T>& input, double p, Mode mode, Rng& rng,
                           Tensor4<T>* mask = nullptr) {
  if (p < 0.0 || p >= 1.0) throw config_error("dropout: p must be in [0, 1)");
  if (mode == Mode::eval || p == 0.0) {
    if (mask) { *mask = Tensor4<T>(input.n, input.c, input.h, input.w); mask->fill(T(1)); }
    return input;
  }
  const T scale = static_cast<T>(1.0 / (1.0 - p));
  Tensor4<T> out = input;
  Tensor4<T> local(input.n, input.c, input.h, input.w);
  for (size_t i = 0; i < out.data.size(); ++i) {
    const T keep = rng.uniform() < p ? T(0) : scale;
    local.data[i] = keep;
    out.data[i] *= keep;
  }
  if (mask) *mask = std::move(local);
  return out;
}

// Channel dropout: zeroes whole (n, c) planes.
template <typename T>
Tensor4<T> dropout2d_forward(const Tensor4<T>& input, double p, Mode mode, Rng& rng,
                             Tensor4<T>* mask = nullptr) {
  if (p < 0.0 || p >= 1.0) throw config_error("dropout2d: p must be in [0, 1)");
  if (mode == Mode::eval || p == 0.0) {
    if (mask) { *mask = Tensor4<T>(input.n, input.c, 1, 1); mask->fill(T(1)); }
    return input;
  }
  const T scale = static_cast<T>(1.0 / (1.0 - p));
  Tensor4<T> out = input;
  Tensor4<T> local(input.n, input.c, 1, 1);
  const int hw = input.h * input.w;
  for (int in_i = 0; in_i < input.n; ++in_i) {
    for (int ci = 0; ci < input.c; ++ci) {
      const T keep = rng.uniform() < p ? T(0) : scale;
      local.at(in_i, ci, 0, 0) = keep;
      T* o = out.plane(in_i, ci);
      for (int j = 0; j < hw; ++j) o[j] *= keep;
    }
  }
  if (mask) *mask = std::move(local);
  return out;
}

// backward for both dropout flavours: mask dims either match or are (n,c,1,1)
template <typename T>
Tensor4<T> dropout_backward(const Tensor4<T>& grad_out, const Tensor4<T>& mask) {
  Tensor4<T> gx = grad_out;
  if (mask.same_dims(grad_out)) {
    for (size_t i = 0; i < gx.data.size(); ++i) gx.data[i] *= mask.data[i];
  } else {
    const int hw = grad_out.h * grad_out.w;
    for (int in_i = 0; in_i < grad_out.n; ++in_i)
      for (int ci = 0; ci < grad_out.c; ++ci) {
        const T keep = mask.at(in_i, ci, 0, 0);
        T* g = gx.plane(in_i, ci);
        for (int j = 0; j < hw; ++j) g[j] *= keep;
      }
  }
  return gx;
}

// (n, c, h, w) -> (n, c, 1, 1): spatial mean per channel
template <typename T>
Tensor4<T> global_avg_pool_forward(const Tensor4<T>& input) {
  const int hw = input.h * input.w;
  Tensor4<T> out(input.n, input.c, 1, 1);
  for (int in_i = 0; in_i < input.n; ++in_i)
    for (int ci = 0; ci < input.c; ++ci) {
      double s = 0.0;
      const T* x = input.plane(in_i, ci);
#pragma omp simd reduction(+ : s)
      for (int j = 0; j < hw; ++j) s += static_cast<double>(x[j]);
      out.at(in_i, ci, 0, 0) = static_cast<T>(s / hw);
    }
  return out;
}

template <typename T>
Tensor4<T> global_avg_pool_backward(const Tensor4<T>& grad_out, int in_h, int in_w) {
  const int hw = in_h * in_w;
  Tensor4<T> gx(grad_out.n, grad_out.c, in_h, in_w);
  for (int in_i = 0; in_i < grad_out.n; ++in_i)
    for (int ci = 0; ci < grad_out.c; ++ci) {
      const T g = grad_out.at(in_i, ci, 0, 0) / static_cast<T>(hw);
      T* o = gx.plane(in_i, ci);
      for (int j = 0; j < hw; ++j) o[j] = g;
    }
  return gx;
}

// Affine map on feature vectors shaped (n, f, 1, 1). weights (f_out, f_in, 1, 1).
template <typename T>
Tensor4<T> linear_forward(const Tensor4<T>& input, const Tensor4<T>& weights,
                          const std::vector<T>& bias) {
  if (input.h != 1 || input.w != 1) throw dim_error("linear: input must be (n, f, 1, 1)");
  if (weights.c != input.c)
    throw dim_error("linear: input width " + std::to_string(input.c) + " != weight in-dim " +
                    std::to_string(weights.c));
  const int n = input.n, f_in = input.c, f_out = weights.n;
  Tensor4<T> out(n, f_out, 1, 1);
  for (int in_i = 0; in_i < n; ++in_i) {
    const T* x = input.data.data() + static_cast<size_t>(in_i) * f_in;
    T* o = out.data.data() + static_cast<size_t>(in_i) * f_out;
    for (int fo = 0; fo < f_out; ++fo) {
      const T* wr = weights.data.data() + static_cast<size_t>(fo) * f_in;
      T s = T(0);
#pragma omp simd reduction(+ : s)
      for (int fi = 0; fi < f_in; ++fi) s += wr[fi] * x[fi];
      o[fo] = s + bias[fo];
    }
  }
  return out;
}

template <typename T>
void linear_backward(const Tensor4<T>& input, const Tensor4<T>& weights,
                     const Tensor4<T>& grad_out, Tensor4<T>& grad_input,
                     Tensor4<T>& grad_weights, std::vector<T>& grad_bias) {
  const int n = input.n, f_in = input.c, f_out = weights.n;
  grad_input = Tensor4<T>(n, f_in, 1, 1);
  for (int in_i = 0; in_i < n; ++in_i) {
    const T* x = input.data.data() + static_cast<size_t>(in_i) * f_in;
    const T* g = grad_out.data.data() + static_cast<size_t>(in_i) * f_out;
    T* gx = grad_input.data.data() + static_cast<size_t>(in_i) * f_in;
    for (int fo = 0; fo < f_out; ++fo) {
      const T gv = g[fo];
      const T* wr = weights.data.data() + static_cast<size_t>(fo) * f_in;
      T* gw = grad_weights.data.data() + static_cast<size_t>(fo) * f_in;
      grad_bias[fo] += gv;
#pragma omp simd
      for (int fi = 0; fi < f_in; ++fi) {
        gx[fi] += gv * wr[fi];
        gw[fi] += gv * x[fi];
      }
    }
  }
}

// channel concatenation (a first), and its backward split
template <typename T>
Tensor4<T> concat_channels(const Tensor4<T>& a, const Tensor4<T>& b) {
  if (a.n != b.n || a.h != b.h || a.w != b.w)
    throw dim_error("concat: dims " + a.dims_str() + " vs " + b.dims_str());
  Tensor4<T> out(a.n, a.c + b.c, a.h, a.w);
  const size_t hw = static_cast<size_t>(a.h) * a.w;
  for (int in_i = 0; in_i < a.n; ++in_i) {
    std::copy(a.plane(in_i, 0), a.plane(in_i, 0) + static_cast<size_t>(a.c) * hw,
              out.plane(in_i, 0));
    std::copy(b.plane(in_i, 0), b.plane(in_i, 0) + static_cast<size_t>(b.c) * hw,
              out.plane(in_i, a.c));
  }
  return out;
}

template <typename T>
void split_channels(const Tensor4<T>& grad, int c_a, Tensor4<T>& grad_a, Tensor4<T>& grad_b) {
  const int c_b = grad.c - c_a;
  grad_a = Tensor4<T>(grad.n, c_a, grad.h, grad.w);
  grad_b = Tensor4<T>(grad.n, c_b, grad.h, grad.w);
  const size_t hw = static_cast<size_t>(grad.h) * grad.w;
  for (int in_i = 0; in_i < grad.n; ++in_i) {
    std::copy(grad.plane(in_i, 0), grad.plane(in_i, 0) + static_cast<size_t>(c_a) * hw,
              grad_a.plane(in_i, 0));
    std::copy(grad.plane(in_i, c_a), grad.plane(in_i, c_a) + static_cast<size_t>(c_b) * hw,
              grad_b.plane(in_i, 0));
  }
}

}  // namespace wbx
