#pragma once

#include <cmath>
#include <vector>

#include "wbx/nn.hpp"
#include "wbx/tensor.hpp"
#include "wbx/unet.hpp"

namespace wbx {

// Presence classifier on the bridge features: GAP -> FC(256) + ReLU ->
// dropout(0.5) -> FC(2) -> softmax. Index 1 = target present.
template <typename T>
struct ClassifierHead {
  Param<T> w1, b1, w2, b2;
  double dropout_p = 0.5;
  int hidden = 256;
  int in_channels = 0;

  // caches for backward
  Tensor4<T> cached_gap, cached_hidden_pre, cached_hidden, cached_drop_mask, cached_probs;
  int cached_bridge_h = 0, cached_bridge_w = 0;

  void init(int bridge_channels, Rng& rng, int hidden_width = 256) {
    in_channels = bridge_channels;
    hidden = hidden_width;
    w1 = Param<T>("head.fc1.w", hidden, bridge_channels, 1, 1);
    b1 = Param<T>("head.fc1.b", hidden, 1, 1, 1);
    w2 = Param<T>("head.fc2.w", 2, hidden, 1, 1);
    b2 = Param<T>("head.fc2.b", 2, 1, 1, 1);
    w1.init_he_uniform(rng, bridge_channels);
    w2.init_he_uniform(rng, hidden);
  }

  // bridge (n, c, h, w) -> probabilities (n, 2, 1, 1)
  Tensor4<T> classify(const Tensor4<T>& bridge, Mode mode, Rng* rng = nullptr) {
    if (bridge.c != in_channels)
      throw dim_error("classify: bridge channels " + std::to_string(bridge.c) +
                      " != head input " + std::to_string(in_channels));
    const bool cache = (mode == Mode::train);
    if (mode == Mode::train && dropout_p > 0.0 && !rng)
      throw config_error("classify: train mode with dropout needs an rng");

    Tensor4<T> gap = global_avg_pool_forward(bridge);
    Tensor4<T> pre = linear_forward(gap, w1.value, b1.value.data);
    Tensor4<T> hid = relu_forward(pre);
    Tensor4<T> dropped = rng ? dropout_forward(hid, dropout_p, mode, *rng,
                                               cache ? &cached_drop_mask : nullptr)
                             : hid;
    Tensor4<T> logits = linear_forward(dropped, w2.value, b2.value.data);
    Tensor4<T> probs = softmax_forward(logits);
    if (cache) {
      cached_gap = std::move(gap);
      cached_hidden_pre = std::move(pre);
      cached_hidden = std::move(dropped);
      cached_probs = probs;
      cached_bridge_h = bridge.h;
      cached_bridge_w = bridge.w;
    }
    return probs;
  }

  // Accumulates head gradients; returns the gradient w.r.t. the bridge
  // features (discarded when the backbone is frozen).
  Tensor4<T> backward(const Tensor4<T>& grad_probs) {
    Tensor4<T> g = softmax_backward(grad_probs, cached_probs);
    Tensor4<T> g_drop;
    linear_backward(cached_hidden, w2.value, g, g_drop, w2.grad, b2.grad.data);
    if (cached_drop_mask.size() > 0) g_drop = dropout_backward(g_drop, cached_drop_mask);
    g_drop = relu_backward(g_drop, cached_hidden_pre);
    Tensor4<T> g_gap;
    linear_backward(cached_gap, w1.value, g_drop, g_gap, w1.grad, b1.grad.data);
    return global_avg_pool_backward(g_gap, cached_bridge_h, cached_bridge_w);
  }

  std::vector<Param<T>*> params() { return {&w1, &b1, &w2, &b2}; }

  std::vector<NamedTensor<T>> named_tensors() {
    return {{w1.name, &w1.value}, {b1.name, &b1.value}, {w2.name, &w2.value}, {b2.name, &b2.value}};
  }
};

// BCE over the two-class softmax output with soft presence labels.
// probs (n, 2, 1, 1); labels length n in [0, 1].
template <typename T>
double classifier_loss(const Tensor4<T>& probs, const std::vector<T>& labels, T w_c = T(1),
                       Tensor4<T>* grad = nullptr) {
  if (probs.c != 2 || probs.h != 1 || probs.w != 1)
    throw dim_error("classifier_loss: expected (n, 2, 1, 1), got " + probs.dims_str());
  if (static_cast<int>(labels.size()) != probs.n)
    throw dim_error("classifier_loss: label count != batch");
  const int n = probs.n;
  if (grad) *grad = Tensor4<T>(n, 2, 1, 1);
  double total = 0.0;
  constexpr double kFloor = 1e-12;  // probabilities from softmax are > 0
  for (int i = 0; i < n; ++i) {
    const double p0 = std::max(static_cast<double>(probs.at(i, 0, 0, 0)), kFloor);
    const double p1 = std::max(static_cast<double>(probs.at(i, 1, 0, 0)), kFloor);
    const double y = static_cast<double>(labels[i]);
    total += -(static_cast<double>(w_c) * y * std::log(p1) + (1.0 - y) * std::log(p0));
    if (grad) {
      grad->at(i, 0, 0, 0) = static_cast<T>(-(1.0 - y) / p0 / n);
      grad->at(i, 1, 0, 0) = static_cast<T>(-static_cast<double>(w_c) * y / p1 / n);
    }
  }
  return total / n;
}

}  // namespace wbx
