#pragma once

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "wbx/nn.hpp"
#include "wbx/rng.hpp"
#include "wbx/tensor.hpp"

namespace wbx {

template <typename T>
struct NamedTensor {
  std::string name;
  Tensor4<T>* tensor;
};

// --- layer wrappers: own their params and the caches backward needs ---

template <typename T>
struct Conv2dLayer {
  Param<T> w, b;
  int kernel = 3;
  Tensor4<T> cached_x;

  void init(const std::string& name, int c_in, int c_out, int k, Rng& rng) {
    kernel = k;
    w = Param<T>(name + ".w", c_out, c_in, k, k);
    b = Param<T>(name + ".b", c_out, 1, 1, 1);
    w.init_he_uniform(rng, c_in * k * k);
  }

  Tensor4<T> forward(const Tensor4<T>& x, bool cache) {
    if (cache) cached_x = x;
    return conv2d_forward(x, w.value, b.value.data);
  }

  Tensor4<T> backward(const Tensor4<T>& go) {
    Tensor4<T> gx;
    conv2d_backward(cached_x, w.value, go, gx, w.grad, b.grad.data);
    return gx;
  }

  void collect(std::vector<Param<T>*>& out) {
    out.push_back(&w);
    out.push_back(&b);
  }
};

template <typename T>
struct ConvTranspose2dLayer {
  Param<T> w, b;  // w dims (c_in, c_out, 2, 2)
  Tensor4<T> cached_x;

  void init(const std::string& name, int c_in, int c_out, Rng& rng) {
    w = Param<T>(name + ".w", c_in, c_out, 2, 2);
    b = Param<T>(name + ".b", c_out, 1, 1, 1);
    w.init_he_uniform(rng, c_in * 4);
  }

  Tensor4<T> forward(const Tensor4<T>& x, bool cache) {
    if (cache) cached_x = x;
    return conv2d_transpose_forward(x, w.value, b.value.data);
  }

  Tensor4<T> backward(const Tensor4<T>& go) {
    Tensor4<T> gx;
    conv2d_transpose_backward(cached_x, w.value, go, gx, w.grad, b.grad.data);
    return gx;
  }

  void collect(std::vector<Param<T>*>& out) {
    out.push_back(&w);
    out.push_back(&b);
  }
};

template <typename T>
struct BatchNorm2dLayer {
  Param<T> gamma, beta;
  Tensor4<T> running_mean, running_var;  // buffers, serialized but not trained
  BatchNormCache<T> cache;

  void init(const std::string& name, int c) {
    gamma = Param<T>(name + ".gamma", c, 1, 1, 1);
    beta = Param<T>(name + ".beta", c, 1, 1, 1);
    gamma.value.fill(T(1));
    running_mean = Tensor4<T>(c, 1, 1, 1);
    running_var = Tensor4<T>(c, 1, 1, 1, T(1));
  }

  Tensor4<T> forward(const Tensor4<T>& x, Mode mode, bool keep_cache) {
    return batchnorm2d_forward(x, gamma.value.data, beta.value.data, running_mean.data,
                               running_var.data, mode, keep_cache ? &cache : nullptr);
  }

  Tensor4<T> backward(const Tensor4<T>& go) {
    return batchnorm2d_backward(go, cache, gamma.value.data, gamma.grad.data, beta.grad.data);
  }

  void collect(std::vector<Param<T>*>& out) {
    out.push_back(&gamma);
    out.push_back(&beta);
  }
};

// conv -> batch norm -> ReLU
template <typename T>
struct ConvBlock {
  Conv2dLayer<T> conv;
  BatchNorm2dLayer<T> bn;
  Tensor4<T> cached_out;

  void init(const std::string& name, int c_in, int c_out, Rng& rng) {
    conv.init(name + ".conv", c_in, c_out, 3, rng);
    bn.init(name + ".bn", c_out);
  }

  Tensor4<T> forward(const Tensor4<T>& x, Mode mode, bool cache) {
    Tensor4<T> a = conv.forward(x, cache);
    a = bn.forward(a, mode, cache);
    a = relu_forward(a);
    if (cache) cached_out = a;
    return a;
  }

  Tensor4<T> backward(const Tensor4<T>& go) {
    Tensor4<T> g = relu_backward(go, cached_out);
    g = bn.backward(g);
    return conv.backward(g);
  }

  void collect(std::vector<Param<T>*>& out) {
    conv.collect(out);
    bn.collect(out);
  }
};

template <typename T>
struct ForwardResult {
  Tensor4<T> logits;  // (n, 1, h, w)
  Tensor4<T> bridge;  // (n, round(512*s), h/16, w/16)
};

// Reduced-channel U-Net: 4 encoder levels + bridge + 4 decoder levels with
// concatenation skips, 2D dropout after each encoder level and the bridge,
// 1x1 output head producing a single-channel logit map.
template <typename T>
struct UNetLite {
  double channel_scale = 1.0;
  double dropout2d_p = 0.15;
  std::array<int, 5> width{};  // levels 1-4 + bridge

  struct EncLevel {
    ConvBlock<T> c1, c2;
    Tensor4<T> drop_mask;
    std::vector<int32_t> pool_argmax;
    int pre_pool_h = 0, pre_pool_w = 0;
  };
  struct DecLevel {
    ConvTranspose2dLayer<T> up;
    ConvBlock<T> c1, c2;
    int skip_channels = 0;
  };

  std::array<EncLevel, 4> enc;
  ConvBlock<T> bridge_c1, bridge_c2;
  Tensor4<T> bridge_drop_mask;
  std::array<DecLevel, 4> dec;  // dec[0] = level 4 (deepest), dec[3] = level 1
  Conv2dLayer<T> out_head;

  static std::array<int, 5> widths_for_scale(double s) {
    std::array<int, 5> w{};
    const int base[5] = {32, 64, 128, 256, 512};
    for (int i = 0; i < 5; ++i) w[i] = std::max(1, static_cast<int>(std::lround(s * base[i])));
    return w;
  }

  void init(double s, Rng& rng, int in_channels = 3, double drop_p = 0.15) {
    channel_scale = s;
    dropout2d_p = drop_p;
    width = widths_for_scale(s);
    int c_in = in_channels;
    for (int l = 0; l < 4; ++l) {
      const std::string name = "enc" + std::to_string(l + 1);
      enc[l].c1.init(name + ".c1", c_in, width[l], rng);
      enc[l].c2.init(name + ".c2", width[l], width[l], rng);
      c_in = width[l];
    }
    bridge_c1.init("bridge.c1", width[3], width[4], rng);
    bridge_c2.init("bridge.c2", width[4], width[4], rng);
    for (int l = 0; l < 4; ++l) {
      const int lvl = 4 - l;  // decoder level number
      const std::string name = "dec" + std::to_string(lvl);
      const int deeper = (l == 0) ? width[4] : width[lvl];
      dec[l].up.init(name + ".up", deeper, width[lvl - 1], rng);
      dec[l].c1.init(name + ".c1", 2 * width[lvl - 1], width[lvl - 1], rng);
      dec[l].c2.init(name + ".c2", width[lvl - 1], width[lvl - 1], rng);
      dec[l].skip_channels = width[lvl - 1];
    }
    out_head.init("out", width[0], 1, 1, rng);
  }

  // rng is only consulted for dropout in train mode; cache_for_backward can be
  // dropped for loss-only train-mode evaluations (finite differences)
  ForwardResult<T> forward(const Tensor4<T>& input, Mode mode, Rng* rng = nullptr,
                           bool cache_for_backward = true) {
    if (input.h % 16 != 0 || input.w % 16 != 0)
      throw dim_error("unet forward: spatial dims must be multiples of 16, got " +
                      input.dims_str());
    const bool cache = (mode == Mode::train) && cache_for_backward;
    if (mode == Mode::train && dropout2d_p > 0.0 && !rng)
      throw config_error("unet forward: train mode with dropout needs an rng");

    std::array<Tensor4<T>, 4> skips;
    Tensor4<T> x = input;
    for (int l = 0; l < 4; ++l) {
      x = enc[l].c1.forward(x, mode, cache);
      x = enc[l].c2.forward(x, mode, cache);
      if (rng)
        x = dropout2d_forward(x, dropout2d_p, mode, *rng, cache ? &enc[l].drop_mask : nullptr);
      skips[l] = x;
      enc[l].pre_pool_h = x.h;
      enc[l].pre_pool_w = x.w;
      x = maxpool2_forward(x, enc[l].pool_argmax);
    }
    x = bridge_c1.forward(x, mode, cache);
    x = bridge_c2.forward(x, mode, cache);
    if (rng) x = dropout2d_forward(x, dropout2d_p, mode, *rng, cache ? &bridge_drop_mask : nullptr);

    ForwardResult<T> result;
    result.bridge = x;
    for (int l = 0; l < 4; ++l) {
      const int lvl = 4 - l;
      Tensor4<T> up = dec[l].up.forward(x, cache);
      x = concat_channels(up, skips[lvl - 1]);
      x = dec[l].c1.forward(x, mode, cache);
      x = dec[l].c2.forward(x, mode, cache);
    }
    result.logits = out_head.forward(x, cache);
    return result;
  }

  // Accumulates parameter gradients; the input gradient is discarded.
  void backward(const Tensor4<T>& grad_logits) {
    Tensor4<T> g = out_head.backward(grad_logits);
    std::array<Tensor4<T>, 4> skip_grads;
    for (int l = 3; l >= 0; --l) {
      const int lvl = 4 - l;
      g = dec[l].c2.backward(g);
      g = dec[l].c1.backward(g);
      Tensor4<T> g_up, g_skip;
      split_channels(g, dec[l].skip_channels, g_up, g_skip);
      skip_grads[lvl - 1] = std::move(g_skip);
      g = dec[l].up.backward(g_up);
    }
    if (bridge_drop_mask.size() > 0) g = dropout_backward(g, bridge_drop_mask);
    g = bridge_c2.backward(g);
    g = bridge_c1.backward(g);
    for (int l = 3; l >= 0; --l) {
      g = maxpool2_backward(g, enc[l].pool_argmax, enc[l].pre_pool_h, enc[l].pre_pool_w);
      for (size_t i = 0; i < g.size(); ++i) g.data[i] += skip_grads[l].data[i];
      if (enc[l].drop_mask.size() > 0) g = dropout_backward(g, enc[l].drop_mask);
      g = enc[l].c2.backward(g);
      g = enc[l].c1.backward(g);
    }
  }

  std::vector<Param<T>*> params() {
    std::vector<Param<T>*> out;
    for (auto& e : enc) {
      e.c1.collect(out);
      e.c2.collect(out);
    }
    bridge_c1.collect(out);
    bridge_c2.collect(out);
    for (auto& d : dec) {
      d.up.collect(out);
      d.c1.collect(out);
      d.c2.collect(out);
    }
    out_head.collect(out);
    return out;
  }

  // params + batch-norm running stats, in serialization order
  std::vector<NamedTensor<T>> named_tensors() {
    std::vector<NamedTensor<T>> out;
    auto add_block = [&out](ConvBlock<T>& blk) {
      out.push_back({blk.conv.w.name, &blk.conv.w.value});
      out.push_back({blk.conv.b.name, &blk.conv.b.value});
      out.push_back({blk.bn.gamma.name, &blk.bn.gamma.value});
      out.push_back({blk.bn.beta.name, &blk.bn.beta.value});
      out.push_back({blk.bn.gamma.name.substr(0, blk.bn.gamma.name.size() - 6) + ".run_mean",
                     &blk.bn.running_mean});
      out.push_back({blk.bn.gamma.name.substr(0, blk.bn.gamma.name.size() - 6) + ".run_var",
                     &blk.bn.running_var});
    };
    for (auto& e : enc) {
      add_block(e.c1);
      add_block(e.c2);
    }
    add_block(bridge_c1);
    add_block(bridge_c2);
    for (auto& d : dec) {
      out.push_back({d.up.w.name, &d.up.w.value});
      out.push_back({d.up.b.name, &d.up.b.value});
      add_block(d.c1);
      add_block(d.c2);
    }
    out.push_back({out_head.w.name, &out_head.w.value});
    out.push_back({out_head.b.name, &out_head.b.value});
    return out;
  }
};

}  // namespace wbx
