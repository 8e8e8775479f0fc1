#pragma once

#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "wbx/dataset.hpp"
#include "wbx/errors.hpp"
#include "wbx/geometry.hpp"
#include "wbx/pgm.hpp"
#include "wbx/rng.hpp"

namespace wbx {

// Synthetic ultrasound-like dataset: bright-ringed hypoechoic ellipse target
// with a honeycomb interior, dark vessel-like distractors, multiplicative
// speckle, smooth per-frame drift.
struct PhantomConfig {
  int n_subjects = 5;
  int frames_per_subject = 200;
  int image_h = 192, image_w = 192;  // multiples of 16
  double target_radius_min = 20.0, target_radius_max = 28.0;  // px
  double eccentricity_min = 0.6, eccentricity_max = 1.0;      // minor/major ratio
  double speckle_grain_px = 2.0;
  double speckle_strength = 0.35;
  int distractor_min = 1, distractor_max = 4;
  double motion_amplitude_px = 1.5;  // per frame
  double absent_fraction = 0.25;
  double mm_per_pixel = 0.1;
  uint64_t seed = 1;

  void validate() const {
    if (n_subjects < 1) throw config_error("phantom.n_subjects must be >= 1");
    if (frames_per_subject < 1) throw config_error("phantom.frames_per_subject must be >= 1");
    if (image_h % 16 != 0 || image_w % 16 != 0)
      throw config_error("phantom.image size must be a multiple of 16");
    if (!(target_radius_min > 2.0) || target_radius_max < target_radius_min)
      throw config_error("phantom.target_radius range invalid");
    if (eccentricity_min <= 0.0 || eccentricity_max > 1.0 ||
        eccentricity_max < eccentricity_min)
      throw config_error("phantom.eccentricity range invalid");
    if (absent_fraction < 0.0 || absent_fraction >= 1.0)
      throw config_error("phantom.absent_fraction must be in [0, 1)");
    if (mm_per_pixel <= 0.0) throw config_error("phantom.mm_per_pixel must be > 0");
    if (distractor_min < 0 || distractor_max < distractor_min)
      throw config_error("phantom.distractor range invalid");
    if (motion_amplitude_px < 0.0) throw config_error("phantom.motion_amplitude must be >= 0");
    const double max_half = 1.20 * target_radius_max + 2.0;
    if (2.0 * max_half + 4.0 >= std::min(image_h, image_w))
      throw config_error("phantom.target_radius too large for the image size");
  }
};

namespace detail {

struct Ellipse {
  double cx, cy;     // center
  double a, b;       // semi-axes (a major)
  double angle;      // radians
  double ring_rho;   // outer edge in normalized radius units

  // normalized radius: <=1 interior, <=ring_rho includes the bright ring
  double rho(double x, double y) const {
    const double c = std::cos(angle), s = std::sin(angle);
    const double u = c * (x - cx) + s * (y - cy);
    const double v = -s * (x - cx) + c * (y - cy);
    return std::sqrt((u / a) * (u / a) + (v / b) * (v / b));
  }

  double half_extent_x() const {
    const double c = std::cos(angle), s = std::sin(angle);
    return ring_rho * std::sqrt(a * a * c * c + b * b * s * s);
  }
  double half_extent_y() const {
    const double c = std::cos(angle), s = std::sin(angle);
    return ring_rho * std::sqrt(a * a * s * s + b * b * c * c);
  }
};

// low-frequency background variation from a few smooth bumps
struct BackgroundField {
  struct Bump {
    double cx, cy, sigma, amp;
  };
  std::vector<Bump> bumps;
  double base;

  double at(double x, double y) const {
    double v = base;
    for (const auto& b : bumps) {
      const double d2 = (x - b.cx) * (x - b.cx) + (y - b.cy) * (y - b.cy);
      v += b.amp * std::exp(-d2 / (2.0 * b.sigma * b.sigma));
    }
    return v;
  }
};

inline void smooth_field(std::vector<float>& f, int h, int w, double grain) {
  if (grain <= 0.5) return;
  const int radius = std::max(1, static_cast<int>(std::lround(grain)));
  std::vector<float> tmp(f.size());
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      float acc = 0.0f;
      int cnt = 0;
      for (int i = -radius; i <= radius; ++i) {
        const int sx = x + i;
        if (sx < 0 || sx >= w) continue;
        acc += f[static_cast<size_t>(y) * w + sx];
        ++cnt;
      }
      tmp[static_cast<size_t>(y) * w + x] = acc / cnt;
    }
  for (int x = 0; x < w; ++x)
    for (int y = 0; y < h; ++y) {
      float acc = 0.0f;
      int cnt = 0;
      for (int i = -radius; i <= radius; ++i) {
        const int sy = y + i;
        if (sy < 0 || sy >= h) continue;
        acc += tmp[static_cast<size_t>(sy) * w + x];
        ++cnt;
      }
      f[static_cast<size_t>(y) * w + x] = acc / cnt;
    }
}

}  // namespace detail

// Renders one frame and, when the target is present, its tight box.
// Exposed separately so tests can verify containment analytically.
inline PgmImage render_phantom_frame(const PhantomConfig& cfg, const detail::Ellipse* target,
                                     const std::vector<detail::Ellipse>& distractors,
                                     const detail::BackgroundField& bg,
                                     const std::vector<float>& speckle) {
  const int h = cfg.image_h, w = cfg.image_w;
  PgmImage img;
  img.h = h;
  img.w = w;
  img.pixels.resize(static_cast<size_t>(h) * w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double v = bg.at(x, y);
      for (const auto& d : distractors) {
        const double rho = d.rho(x, y);
        if (rho < 1.0) {
          // vessel-like dark pool with a soft edge
          const double edge = std::min(1.0, (1.0 - rho) * 4.0);
          v = v * (1.0 - edge) + 0.12 * edge;
        }
      }
      if (target) {
        const double rho = target->rho(x, y);
        if (rho <= target->ring_rho) {
          if (rho >= 0.85) {
            // bright capsule ring
            v = 0.78;
          } else {
            // hypoechoic interior with a honeycomb texture
            const double c = std::cos(target->angle), s = std::sin(target->angle);
            const double u = c * (x - target->cx) + s * (y - target->cy);
            const double vv = -s * (x - target->cx) + c * (y - target->cy);
            const double cell =
                0.5 + 0.5 * std::sin(u * (2.0 * 3.14159265358979323846 / 6.5)) *
                          std::sin(vv * (2.0 * 3.14159265358979323846 / 6.5));
            v = 0.14 + 0.30 * cell * cell;
          }
        }
      }
      v *= speckle[static_cast<size_t>(y) * w + x];
      const int q = static_cast<int>(v * 256.0);
      img.pixels[static_cast<size_t>(y) * w + x] =
          static_cast<uint8_t>(std::min(255, std::max(0, q)));
    }
  }
  return img;
}

// Tight integer-pixel box of the rendered target (ring included).
inline BoundingBox phantom_target_box(const detail::Ellipse& e, int img_w, int img_h) {
  const double hx = e.half_extent_x(), hy = e.half_extent_y();
  double x_min = std::ceil(e.cx - hx);
  double y_min = std::ceil(e.cy - hy);
  double x_max = std::floor(e.cx + hx) + 1.0;
  double y_max = std::floor(e.cy + hy) + 1.0;
  x_min = std::max(0.0, x_min);
  y_min = std::max(0.0, y_min);
  x_max = std::min(static_cast<double>(img_w), x_max);
  y_max = std::min(static_cast<double>(img_h), y_max);
  return make_box(x_min, y_min, x_max, y_max);
}

// Generates the dataset on disk; identical seeds give byte-identical trees.
inline std::string generate_phantom(const PhantomConfig& cfg, const std::string& root) {
  namespace fs = std::filesystem;
  cfg.validate();
  std::error_code ec;
  fs::create_directories(root, ec);
  if (ec) throw data_error("phantom: cannot create output directory " + root);

  DatasetManifest manifest;
  manifest.mm_per_pixel = cfg.mm_per_pixel;
  std::vector<Annotation> rows;

  const int h = cfg.image_h, w = cfg.image_w;
  for (int subject = 0; subject < cfg.n_subjects; ++subject) {
    char name[32];
    std::snprintf(name, sizeof name, "subject%02d", subject);
    const std::string seq_id = name;
    fs::create_directories(fs::path(root) / seq_id, ec);
    if (ec) throw data_error("phantom: cannot create sequence directory " + seq_id);
    manifest.sequences.emplace_back(seq_id, cfg.frames_per_subject);

    Rng rng = derive_rng(cfg.seed, "phantom-seq", static_cast<uint64_t>(subject));

    // static per-subject anatomy
    detail::BackgroundField bg;
    bg.base = rng.uniform(0.30, 0.40);
    const int n_bumps = 3 + static_cast<int>(rng.uniform_int(3));
    for (int i = 0; i < n_bumps; ++i)
      bg.bumps.push_back({rng.uniform(0, w), rng.uniform(0, h), rng.uniform(0.15 * w, 0.5 * w),
                          rng.uniform(-0.08, 0.08)});

    const int n_distract =
        cfg.distractor_min +
        static_cast<int>(rng.uniform_int(static_cast<uint64_t>(cfg.distractor_max - cfg.distractor_min + 1)));
    std::vector<detail::Ellipse> distractors;
    for (int i = 0; i < n_distract; ++i) {
      detail::Ellipse d;
      d.a = rng.uniform(0.5, 1.0) * cfg.target_radius_max;
      d.b = d.a * rng.uniform(0.5, 1.0);
      d.angle = rng.uniform(0.0, 3.14159265358979323846);
      d.cx = rng.uniform(d.a, w - d.a);
      d.cy = rng.uniform(d.a, h - d.a);
      d.ring_rho = 1.0;
      distractors.push_back(d);
    }

    // target geometry and motion state
    detail::Ellipse target;
    target.a = rng.uniform(cfg.target_radius_min, cfg.target_radius_max);
    target.b = target.a * rng.uniform(cfg.eccentricity_min, cfg.eccentricity_max);
    target.angle = rng.uniform(0.0, 3.14159265358979323846);
    target.ring_rho = 1.15;
    const double margin = 1.20 * target.a + 2.0;
    target.cx = rng.uniform(margin, w - margin);
    target.cy = rng.uniform(margin, h - margin);
    double vx = 0.0, vy = 0.0;

    for (int t = 0; t < cfg.frames_per_subject; ++t) {
      // drift with momentum, displacement capped at the motion amplitude
      vx += rng.uniform(-cfg.motion_amplitude_px / 3.0, cfg.motion_amplitude_px / 3.0);
      vy += rng.uniform(-cfg.motion_amplitude_px / 3.0, cfg.motion_amplitude_px / 3.0);
      const double speed = std::sqrt(vx * vx + vy * vy);
      if (speed > cfg.motion_amplitude_px) {
        vx *= cfg.motion_amplitude_px / speed;
        vy *= cfg.motion_amplitude_px / speed;
      }
      if (target.cx + vx < margin || target.cx + vx > w - margin) vx = -vx;
      if (target.cy + vy < margin || target.cy + vy > h - margin) vy = -vy;
      target.cx += vx;
      target.cy += vy;
      target.angle += rng.uniform(-0.02, 0.02);

      const bool present = !rng.bernoulli(cfg.absent_fraction);

      std::vector<float> speckle(static_cast<size_t>(h) * w);
      for (auto& v : speckle)
        v = static_cast<float>(rng.uniform(1.0 - cfg.speckle_strength, 1.0 + cfg.speckle_strength));
      detail::smooth_field(speckle, h, w, cfg.speckle_grain_px);

      const PgmImage img =
          render_phantom_frame(cfg, present ? &target : nullptr, distractors, bg, speckle);
      write_pgm((fs::path(root) / seq_id / frame_filename(t)).string(), img);

      Annotation a;
      a.sequence_id = seq_id;
      a.frame_index = t;
      a.present = present;
      if (present) a.box = phantom_target_box(target, w, h);
      rows.push_back(std::move(a));
    }
  }

  write_annotations((fs::path(root) / manifest.annotations_file).string(), rows);
  const std::string manifest_path = (fs::path(root) / "manifest.txt").string();
  write_manifest(manifest_path, manifest);
  return manifest_path;
}

}  // namespace wbx
