#pragma once

#include <cmath>

#include "wbx/nn.hpp"
#include "wbx/tensor.hpp"

namespace wbx {

// Contribution weights of the combined detection loss. w_c re-weights the
// positive BCE term against class imbalance; the trainer derives it from the
// training-set background/foreground pixel ratio unless overridden.
template <typename T>
struct LossWeights {
  T alpha_bce = T(0.25);
  T alpha_dice = T(1.0);
  T w_c = T(1.0);
};

namespace detail {
template <typename T>
inline T softplus(T x) {
  // log(1 + e^x), stable at both tails
  return std::max(x, T(0)) + std::log1p(std::exp(-std::abs(x)));
}
}  // namespace detail

// Pixelwise weighted binary cross-entropy from logits, averaged per mask and
// then over the batch. Targets may be soft (mixup).
template <typename T>
double bce_loss(const Tensor4<T>& logits, const Tensor4<T>& targets, T w_c,
                Tensor4<T>* grad = nullptr) {
  require_same_dims(logits, targets, "bce_loss");
  const int n = logits.n;
  const size_t m = logits.size() / n;
  if (grad) *grad = Tensor4<T>(logits.n, logits.c, logits.h, logits.w);
  const double inv = 1.0 / (static_cast<double>(n) * static_cast<double>(m));
  double total = 0.0;
  for (size_t i = 0; i < logits.size(); ++i) {
    const T x = logits.data[i];
    const T y = targets.data[i];
    total += static_cast<double>(w_c * y * detail::softplus(-x) +
                                 (T(1) - y) * detail::softplus(x));
    if (grad) {
      const T s = sigmoid_scalar(x);
      grad->data[i] = static_cast<T>(((T(1) - y) * s - w_c * y * (T(1) - s)) * static_cast<T>(inv));
    }
  }
  return total * inv;
}

// Dice overlap between a soft mask and the target, per sample, averaged over
// the batch. eps keeps the empty-mask case defined (and trainable); eps = 0
// recovers the plain ratio.
template <typename T>
double dice_coefficient(const Tensor4<T>& probs, const Tensor4<T>& targets, double eps = 1.0) {
  require_same_dims(probs, targets, "dice_coefficient");
  const int n = probs.n;
  const size_t m = probs.size() / n;
  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    const T* p = probs.data.data() + static_cast<size_t>(i) * m;
    const T* t = targets.data.data() + static_cast<size_t>(i) * m;
    double inter = 0.0, sum = 0.0;
    for (size_t j = 0; j < m; ++j) {
      inter += static_cast<double>(p[j]) * static_cast<double>(t[j]);
      sum += static_cast<double>(p[j]) + static_cast<double>(t[j]);
    }
    total += (2.0 * inter + eps) / (sum + eps);
  }
  return total / n;
}

// 1 - dice of sigmoid(logits); optional gradient w.r.t. the logits.
template <typename T>
double dice_loss(const Tensor4<T>& logits, const Tensor4<T>& targets, double eps = 1.0,
                 Tensor4<T>* grad = nullptr) {
  require_same_dims(logits, targets, "dice_loss");
  const int n = logits.n;
  const size_t m = logits.size() / n;
  if (grad) *grad = Tensor4<T>(logits.n, logits.c, logits.h, logits.w);
  double total = 0.0;
  std::vector<T> probs(m);
  for (int i = 0; i < n; ++i) {
    const T* x = logits.data.data() + static_cast<size_t>(i) * m;
    const T* t = targets.data.data() + static_cast<size_t>(i) * m;
    double inter = 0.0, sum = 0.0;
    for (size_t j = 0; j < m; ++j) {
      probs[j] = sigmoid_scalar(x[j]);
      inter += static_cast<double>(probs[j]) * static_cast<double>(t[j]);
      sum += static_cast<double>(probs[j]) + static_cast<double>(t[j]);
    }
    const double denom = sum + eps;
    total += 1.0 - (2.0 * inter + eps) / denom;
    if (grad) {
      T* g = grad->data.data() + static_cast<size_t>(i) * m;
      const double num = 2.0 * inter + eps;
      for (size_t j = 0; j < m; ++j) {
        // d dice / d p = (2*t*denom - num) / denom^2, chained through sigmoid
        const double ddice = (2.0 * static_cast<double>(t[j]) * denom - num) / (denom * denom);
        const double dsig = static_cast<double>(probs[j]) * (1.0 - static_cast<double>(probs[j]));
        g[j] = static_cast<T>(-ddice * dsig / n);
      }
    }
  }
  return total / n;
}

// alpha_bce * L_bce + alpha_dice * L_dice; gradient is the weighted sum.
template <typename T>
double detection_loss(const Tensor4<T>& logits, const Tensor4<T>& targets,
                      const LossWeights<T>& weights, Tensor4<T>* grad = nullptr,
                      double dice_eps = 1.0) {
  Tensor4<T> gb, gd;
  const double lb = bce_loss(logits, targets, weights.w_c, grad ? &gb : nullptr);
  const double ld = dice_loss(logits, targets, dice_eps, grad ? &gd : nullptr);
  if (grad) {
    *grad = Tensor4<T>(logits.n, logits.c, logits.h, logits.w);
    for (size_t i = 0; i < grad->size(); ++i)
      grad->data[i] = weights.alpha_bce * gb.data[i] + weights.alpha_dice * gd.data[i];
  }
  return static_cast<double>(weights.alpha_bce) * lb + static_cast<double>(weights.alpha_dice) * ld;
}

}  // namespace wbx
