#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "wbx/errors.hpp"
#include "wbx/geometry.hpp"
#include "wbx/tensor.hpp"

namespace wbx {

enum class DecisionLogic { logic_and, logic_or };

struct PostprocessConfig {
  double sigmoid_threshold = 0.5;
  double beta_x = 1.0, beta_y = 1.0;  // calibrated scale factors
  DecisionLogic decision_logic = DecisionLogic::logic_or;
  int min_box_px = 2;

  void validate() const {
    if (!(sigmoid_threshold > 0.0 && sigmoid_threshold < 1.0))
      throw config_error("postprocess.sigmoid_threshold must be in (0, 1)");
    if (!(beta_x > 0.0) || !(beta_y > 0.0))
      throw config_error("postprocess.beta factors must be > 0");
    if (min_box_px < 1) throw config_error("postprocess.min_box_px must be >= 1");
  }
};

// Per-frame detection output.
struct Detection {
  bool present = false;
  double x_c = 0.0, y_c = 0.0;
  BoundingBox box;
  double mean_confidence = 0.0;
  int k = 0;  // supra-threshold pixel count
};

// Confidence-weighted statistics over the supra-threshold pixels.
struct MaskStats {
  int k = 0;
  double sum_conf = 0.0;
  double x_c = 0.0, y_c = 0.0;
  double sigma_x = 0.0, sigma_y = 0.0;
  double mean_confidence = 0.0;
};

// Both moment passes fused; empty when no pixel reaches the threshold.
inline std::optional<MaskStats> mask_stats(const Tensor4<float>& confidence, double threshold) {
  const int h = confidence.h, w = confidence.w;
  const float* m = confidence.plane(0, 0);
  MaskStats s;
  double sx = 0.0, sy = 0.0;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double v = m[static_cast<size_t>(y) * w + x];
      if (v >= threshold) {
        ++s.k;
        s.sum_conf += v;
        sx += v * x;
        sy += v * y;
      }
    }
  if (s.k == 0) return std::nullopt;
  s.x_c = sx / s.sum_conf;
  s.y_c = sy / s.sum_conf;
  s.mean_confidence = s.sum_conf / s.k;
  if (s.k == 1) return s;  // sigma (0,0) by convention: the (K-1)/K factor vanishes
  double accx = 0.0, accy = 0.0;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double v = m[static_cast<size_t>(y) * w + x];
      if (v >= threshold) {
        accx += v * (x - s.x_c) * (x - s.x_c);
        accy += v * (y - s.y_c) * (y - s.y_c);
      }
    }
  const double denom = (static_cast<double>(s.k - 1) / s.k) * s.sum_conf;
  s.sigma_x = std::sqrt(accx / denom);
  s.sigma_y = std::sqrt(accy / denom);
  return s;
}

// Confidence-weighted centroid of the supra-threshold pixels; empty when K=0.
inline std::optional<std::pair<double, double>> weighted_center(const Tensor4<float>& confidence,
                                                                double threshold) {
  const auto s = mask_stats(confidence, threshold);
  if (!s) return std::nullopt;
  return std::make_pair(s->x_c, s->y_c);
}

// Weighted standard deviation with the (K-1)/K denominator correction.
inline std::pair<double, double> weighted_std(const Tensor4<float>& confidence, double threshold,
                                              double x_c, double y_c) {
  const int h = confidence.h, w = confidence.w;
  const float* m = confidence.plane(0, 0);
  int k = 0;
  double sum = 0.0, accx = 0.0, accy = 0.0;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double v = m[static_cast<size_t>(y) * w + x];
      if (v >= threshold) {
        ++k;
        sum += v;
        accx += v * (x - x_c) * (x - x_c);
        accy += v * (y - y_c) * (y - y_c);
      }
    }
  if (k <= 1) return {0.0, 0.0};
  const double denom = (static_cast<double>(k - 1) / k) * sum;
  return {std::sqrt(accx / denom), std::sqrt(accy / denom)};
}

// Box centered on the weighted centroid, scaled by the beta factors, floored
// at min_box_px and clipped to the image.
inline BoundingBox box_from_moments(double x_c, double y_c, double sigma_x, double sigma_y,
                                    const PostprocessConfig& cfg, int img_w, int img_h) {
  const double bw = std::max(cfg.beta_x * sigma_x, static_cast<double>(cfg.min_box_px));
  const double bh = std::max(cfg.beta_y * sigma_y, static_cast<double>(cfg.min_box_px));
  BoundingBox box{x_c - bw / 2.0, y_c - bh / 2.0, x_c + bw / 2.0, y_c + bh / 2.0};
  box = clip_box(box, img_w, img_h);
  if (!box.valid())
    throw numeric_error("box_from_moments: clipped box degenerate at center (" +
                        std::to_string(x_c) + "," + std::to_string(y_c) + ")");
  return box;
}

// Mask-only detection: present iff any pixel reaches the threshold.
inline Detection detect_from_mask(const Tensor4<float>& confidence, const PostprocessConfig& cfg) {
  const auto s = mask_stats(confidence, cfg.sigmoid_threshold);
  Detection d;
  if (!s) return d;
  d.present = true;
  d.k = s->k;
  d.x_c = s->x_c;
  d.y_c = s->y_c;
  d.mean_confidence = s->mean_confidence;
  d.box = box_from_moments(s->x_c, s->y_c, s->sigma_x, s->sigma_y, cfg, confidence.w, confidence.h);
  return d;
}

// AND/OR combination of the mask and classifier presence flags.
inline bool decide(bool mask_present, bool classifier_present, DecisionLogic logic) {
  return logic == DecisionLogic::logic_and ? (mask_present && classifier_present)
                                           : (mask_present || classifier_present);
}

// Least squares through the origin on (sigma, ground-truth extent) pairs:
// beta = sum(extent*sigma) / sum(sigma^2).
inline double fit_beta(const std::vector<std::pair<double, double>>& sigma_extent_pairs) {
  if (sigma_extent_pairs.empty())
    throw data_error("beta calibration: no qualifying frames (present with K >= 2)");
  double num = 0.0, den = 0.0;
  for (const auto& [sigma, extent] : sigma_extent_pairs) {
    num += extent * sigma;
    den += sigma * sigma;
  }
  if (den <= 0.0) throw data_error("beta calibration: all sigmas are zero");
  const double beta = num / den;
  if (!(beta > 0.0)) throw data_error("beta calibration: non-positive fit");
  return beta;
}

}  // namespace wbx
