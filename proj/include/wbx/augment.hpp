#pragma once

#include <cmath>
#include <vector>

#include "wbx/errors.hpp"
#include "wbx/preprocess.hpp"
#include "wbx/rng.hpp"
#include "wbx/tensor.hpp"

namespace wbx {

constexpr float kMaxIntensity = 255.0f / 256.0f;  // upper edge of the [0,1) range

struct AugmentConfig {
  bool enable_flip = true;
  double flip_prob = 0.5;
  bool enable_rotation = true;
  double rotation_range_deg = 10.0;
  bool enable_scale = true;
  double scale_min = 0.9, scale_max = 1.1;
  bool enable_translate = true;
  double translate_frac = 0.1;
  bool enable_intensity = true;
  double brightness_delta = 0.2;
  double contrast_min = 0.7, contrast_max = 1.3;
  bool enable_elastic = true;
  double elastic_sigma_min = 8.0, elastic_sigma_max = 16.0;
  double elastic_alpha_min = 0.0, elastic_alpha_max = 20.0;

  void validate() const {
    auto range_ok = [](double lo, double hi) { return std::isfinite(lo) && std::isfinite(hi) && lo <= hi; };
    if (flip_prob < 0.0 || flip_prob > 1.0) throw config_error("augment.flip_prob outside [0,1]");
    if (!std::isfinite(rotation_range_deg) || rotation_range_deg < 0.0)
      throw config_error("augment.rotation_range_deg invalid");
    if (!range_ok(scale_min, scale_max) || scale_min <= 0.0)
      throw config_error("augment.scale range invalid");
    if (!std::isfinite(translate_frac) || translate_frac < 0.0 || translate_frac > 1.0)
      throw config_error("augment.translate_frac outside [0,1]");
    if (!std::isfinite(brightness_delta) || brightness_delta < 0.0)
      throw config_error("augment.brightness_delta invalid");
    if (!range_ok(contrast_min, contrast_max) || contrast_min <= 0.0)
      throw config_error("augment.contrast range invalid");
    if (!range_ok(elastic_sigma_min, elastic_sigma_max) || elastic_sigma_min <= 0.0)
      throw config_error("augment.elastic_sigma range invalid");
    if (!range_ok(elastic_alpha_min, elastic_alpha_max) || elastic_alpha_min < 0.0)
      throw config_error("augment.elastic_alpha range invalid");
  }
};

struct MixupPolicy {
  double alpha = 0.1;
  bool enabled = true;

  void validate() const {
    if (!(alpha > 0.0)) throw config_error("mixup.alpha must be > 0");
  }
};

// (input, mask, presence label) triple flowing through augmentation
struct TrainSample {
  Tensor4<float> input;  // (1, c, h, w)
  Tensor4<float> mask;   // (1, 1, h, w)
  float label = 0.0f;
};

namespace detail {

// separable Gaussian smoothing with per-pixel kernel renormalization at the
// borders
inline void gaussian_smooth(std::vector<float>& field, int h, int w, double sigma) {
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<float> kernel(2 * radius + 1);
  for (int i = -radius; i <= radius; ++i)
    kernel[i + radius] = static_cast<float>(std::exp(-0.5 * (i * i) / (sigma * sigma)));
  std::vector<float> tmp(field.size());
  // horizontal
  for (int y = 0; y < h; ++y) {
    const float* row = field.data() + static_cast<size_t>(y) * w;
    float* out = tmp.data() + static_cast<size_t>(y) * w;
    for (int x = 0; x < w; ++x) {
      float acc = 0.0f, norm = 0.0f;
      const int lo = std::max(-radius, -x), hi = std::min(radius, w - 1 - x);
      for (int i = lo; i <= hi; ++i) {
        acc += kernel[i + radius] * row[x + i];
        norm += kernel[i + radius];
      }
      out[x] = acc / norm;
    }
  }
  // vertical
  for (int x = 0; x < w; ++x) {
    for (int y = 0; y < h; ++y) {
      float acc = 0.0f, norm = 0.0f;
      const int lo = std::max(-radius, -y), hi = std::min(radius, h - 1 - y);
      for (int i = lo; i <= hi; ++i) {
        acc += kernel[i + radius] * tmp[static_cast<size_t>(y + i) * w + x];
        norm += kernel[i + radius];
      }
      field[static_cast<size_t>(y) * w + x] = acc / norm;
    }
  }
}

inline void binarize(Tensor4<float>& mask) {
  for (auto& v : mask.data) v = v >= 0.5f ? 1.0f : 0.0f;
}

}  // namespace detail

// Elastic grid deformation: one smoothed random displacement field per axis,
// scaled to max magnitude alpha_px, applied identically to image and mask.
inline void elastic_deform(Tensor4<float>& image, Tensor4<float>& mask, double sigma_px,
                           double alpha_px, Rng& rng, bool binarize_mask = true) {
  if (!(sigma_px > 0.0)) throw config_error("elastic_deform: sigma must be > 0");
  if (alpha_px < 0.0) throw config_error("elastic_deform: alpha must be >= 0");
  const int h = image.h, w = image.w;
  std::vector<float> dx(static_cast<size_t>(h) * w), dy(dx.size());
  for (auto& v : dx) v = static_cast<float>(rng.uniform(-1.0, 1.0));
  for (auto& v : dy) v = static_cast<float>(rng.uniform(-1.0, 1.0));
  if (alpha_px == 0.0) return;  // zero displacement everywhere

  detail::gaussian_smooth(dx, h, w, sigma_px);
  detail::gaussian_smooth(dy, h, w, sigma_px);
  for (auto* f : {&dx, &dy}) {
    float mx = 0.0f;
    for (const float v : *f) mx = std::max(mx, std::abs(v));
    if (mx > 0.0f) {
      const float s = static_cast<float>(alpha_px) / mx;
      for (auto& v : *f) v *= s;
    }
  }

  auto warp = [&](Tensor4<float>& t) {
    Tensor4<float> src = t;
    for (int c = 0; c < t.c; ++c) {
      const float* sp = src.plane(0, c);
      float* op = t.plane(0, c);
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          const size_t i = static_cast<size_t>(y) * w + x;
          op[i] = sample_bilinear(sp, h, w, x + dx[i], y + dy[i]);
        }
    }
  };
  warp(image);
  warp(mask);
  if (binarize_mask) detail::binarize(mask);
}

namespace detail {

struct Affine {
  // source = M * (out - center) + center + shift
  double m00 = 1, m01 = 0, m10 = 0, m11 = 1;
  double shift_x = 0, shift_y = 0;
  bool identity = true;
};

inline void apply_affine(Tensor4<float>& t, const Affine& a) {
  if (a.identity) return;
  const int h = t.h, w = t.w;
  const double cx = 0.5 * (w - 1), cy = 0.5 * (h - 1);
  Tensor4<float> src = t;
  for (int c = 0; c < t.c; ++c) {
    const float* sp = src.plane(0, c);
    float* op = t.plane(0, c);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const double ox = x - cx, oy = y - cy;
        const double sx = a.m00 * ox + a.m01 * oy + cx + a.shift_x;
        const double sy = a.m10 * ox + a.m11 * oy + cy + a.shift_y;
        op[static_cast<size_t>(y) * w + x] = sample_bilinear(sp, h, w, sx, sy);
      }
  }
}

}  // namespace detail

// Flip / rotate / scale / translate sampled from the config and applied
// identically to image and mask (mask re-binarized).
inline void geometric_augment(Tensor4<float>& image, Tensor4<float>& mask,
                              const AugmentConfig& cfg, Rng& rng) {
  detail::Affine a;
  if (cfg.enable_flip && rng.bernoulli(cfg.flip_prob)) {
    a.m00 = -a.m00;
    a.m01 = -a.m01;
    a.identity = false;
  }
  if (cfg.enable_rotation) {
    const double th = rng.uniform(-cfg.rotation_range_deg, cfg.rotation_range_deg) * 3.14159265358979323846 / 180.0;
    const double c = std::cos(th), s = std::sin(th);
    // inverse rotation composed onto the source map
    const double n00 = c * a.m00 + s * a.m10, n01 = c * a.m01 + s * a.m11;
    const double n10 = -s * a.m00 + c * a.m10, n11 = -s * a.m01 + c * a.m11;
    a.m00 = n00; a.m01 = n01; a.m10 = n10; a.m11 = n11;
    a.identity = false;
  }
  if (cfg.enable_scale) {
    const double s = rng.uniform(cfg.scale_min, cfg.scale_max);
    const double inv = 1.0 / s;
    a.m00 *= inv; a.m01 *= inv; a.m10 *= inv; a.m11 *= inv;
    a.identity = false;
  }
  if (cfg.enable_translate) {
    a.shift_x = -rng.uniform(-cfg.translate_frac, cfg.translate_frac) * image.w;
    a.shift_y = -rng.uniform(-cfg.translate_frac, cfg.translate_frac) * image.h;
    a.identity = false;
  }
  detail::apply_affine(image, a);
  detail::apply_affine(mask, a);
  detail::binarize(mask);
}

// Brightness/contrast on the image only, pivot-0.5 contrast model, clamped to
// the normalized [0, 1) range.
inline void intensity_augment(Tensor4<float>& image, const AugmentConfig& cfg, Rng& rng) {
  if (!cfg.enable_intensity) return;
  const float gain = static_cast<float>(rng.uniform(cfg.contrast_min, cfg.contrast_max));
  const float bright = static_cast<float>(rng.uniform(-cfg.brightness_delta, cfg.brightness_delta));
  for (auto& v : image.data)
    v = std::min(kMaxIntensity, std::max(0.0f, gain * (v - 0.5f) + 0.5f + bright));
}

// The spec's combined op: geometric transforms plus color-space jitter.
inline void geometric_intensity_augment(Tensor4<float>& image, Tensor4<float>& mask,
                                        const AugmentConfig& cfg, Rng& rng) {
  cfg.validate();
  geometric_augment(image, mask, cfg, rng);
  intensity_augment(image, cfg, rng);
}

// Full training-time pipeline: geometric -> elastic -> intensity. Mixup runs
// afterwards at the batch level so the convex-combination property holds end
// to end.
inline void augment_sample(TrainSample& s, const AugmentConfig& cfg, Rng& rng) {
  geometric_augment(s.input, s.mask, cfg, rng);
  if (cfg.enable_elastic) {
    const double sigma = rng.uniform(cfg.elastic_sigma_min, cfg.elastic_sigma_max);
    const double alpha = rng.uniform(cfg.elastic_alpha_min, cfg.elastic_alpha_max);
    elastic_deform(s.input, s.mask, sigma, alpha, rng);
  }
  intensity_augment(s.input, cfg, rng);
}

// Convex combination of two samples with a shared lambda.
inline TrainSample mixup_with_lambda(const TrainSample& a, const TrainSample& b, double lambda) {
  if (!a.input.same_dims(b.input) || !a.mask.same_dims(b.mask))
    throw dim_error("mixup: sample dims differ");
  TrainSample out;
  const float l = static_cast<float>(lambda);
  out.input = a.input;
  for (size_t i = 0; i < out.input.size(); ++i)
    out.input.data[i] = l * a.input.data[i] + (1.0f - l) * b.input.data[i];
  out.mask = a.mask;
  for (size_t i = 0; i < out.mask.size(); ++i)
    out.mask.data[i] = l * a.mask.data[i] + (1.0f - l) * b.mask.data[i];
  out.label = l * a.label + (1.0f - l) * b.label;
  return out;
}

// lambda ~ Beta(alpha, alpha), one draw per pair, applied to input, mask and
// presence label alike.
inline TrainSample mixup(const TrainSample& a, const TrainSample& b, const MixupPolicy& policy,
                         Rng& rng) {
  policy.validate();
  return mixup_with_lambda(a, b, rng.beta_symmetric(policy.alpha));
}

}  // namespace wbx
