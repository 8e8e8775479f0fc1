#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "wbx/errors.hpp"
#include "wbx/geometry.hpp"
#include "wbx/tensor.hpp"

namespace wbx {

// One grayscale scan frame.
struct Frame {
  int h = 0, w = 0;
  std::vector<uint8_t> pixels;
  std::string sequence_id;
  int index = 0;
};

enum class FrameMode { single, three };

// Three-channel network input; channel 0 is the oldest frame.
struct StackedInput {
  Tensor4<float> tensor;  // (1, 3, h, w)
  int frame_indices[3] = {0, 0, 0};
};

// v -> v/256 keeps 255 strictly below 1 per the half-open [0, 1) range.
inline float normalize_u8(uint8_t v) { return static_cast<float>(v) / 256.0f; }

inline std::vector<float> normalize(const Frame& frame) {
  std::vector<float> out(frame.pixels.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = normalize_u8(frame.pixels[i]);
  return out;
}

// Stacks frame t with its two predecessors; at the sequence start the current
// frame stands in for missing history. Single-frame mode replicates frame t
// so the network input shape never changes.
inline StackedInput stack_frames(const std::vector<Frame>& sequence, int t,
                                 FrameMode mode = FrameMode::three) {
  if (sequence.empty()) throw data_error("stack_frames: empty sequence");
  if (t < 0 || t >= static_cast<int>(sequence.size()))
    throw data_error("stack_frames: index " + std::to_string(t) + " out of range");
  const int h = sequence[t].h, w = sequence[t].w;
  StackedInput out;
  out.tensor = Tensor4<float>(1, 3, h, w);
  for (int c = 0; c < 3; ++c) {
    int src = t;
    if (mode == FrameMode::three) src = std::max(0, t - (2 - c));
    const Frame& f = sequence[src];
    if (f.h != h || f.w != w)
      throw data_error("stack_frames: frame size changes within sequence");
    out.frame_indices[c] = src;
    float* plane = out.tensor.plane(0, c);
    for (size_t i = 0; i < f.pixels.size(); ++i) plane[i] = normalize_u8(f.pixels[i]);
  }
  return out;
}

// Box-to-mask rasterization: 1 inside the clipped box, 0 elsewhere.
struct BoxMask {
  Tensor4<float> mask;  // (1, 1, h, w)
  BoundingBox source_box;
};

inline BoxMask rasterize_mask(const BoundingBox& box, int h, int w) {
  const BoundingBox clipped = clip_box(box, w, h);
  if (!clipped.valid())
    throw data_error("rasterize_mask: box has no area inside the image");
  BoxMask out;
  out.source_box = box;
  out.mask = Tensor4<float>(1, 1, h, w);
  float* m = out.mask.plane(0, 0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      if (clipped.contains(x, y)) m[static_cast<size_t>(y) * w + x] = 1.0f;
  return out;
}

// bilinear sample with border replication
template <typename T>
inline T sample_bilinear(const T* plane, int h, int w, double sx, double sy) {
  sx = std::min(std::max(sx, 0.0), static_cast<double>(w - 1));
  sy = std::min(std::max(sy, 0.0), static_cast<double>(h - 1));
  const int x0 = static_cast<int>(sx), y0 = static_cast<int>(sy);
  const int x1 = std::min(x0 + 1, w - 1), y1 = std::min(y0 + 1, h - 1);
  const double fx = sx - x0, fy = sy - y0;
  const double v00 = plane[static_cast<size_t>(y0) * w + x0];
  const double v01 = plane[static_cast<size_t>(y0) * w + x1];
  const double v10 = plane[static_cast<size_t>(y1) * w + x0];
  const double v11 = plane[static_cast<size_t>(y1) * w + x1];
  return static_cast<T>((v00 * (1 - fx) + v01 * fx) * (1 - fy) + (v10 * (1 - fx) + v11 * fx) * fy);
}

// bilinear resize of one plane
inline std::vector<float> resize_bilinear(const std::vector<float>& src, int h, int w, int th,
                                          int tw) {
  if (h == th && w == tw) return src;
  std::vector<float> out(static_cast<size_t>(th) * tw);
  const double sy = static_cast<double>(h) / th, sx = static_cast<double>(w) / tw;
  for (int y = 0; y < th; ++y)
    for (int x = 0; x < tw; ++x)
      out[static_cast<size_t>(y) * tw + x] =
          sample_bilinear(src.data(), h, w, (x + 0.5) * sx - 0.5, (y + 0.5) * sy - 0.5);
  return out;
}

inline Frame resize_frame(const Frame& f, int th, int tw) {
  if (f.h == th && f.w == tw) return f;
  Frame out;
  out.h = th;
  out.w = tw;
  out.sequence_id = f.sequence_id;
  out.index = f.index;
  out.pixels.resize(static_cast<size_t>(th) * tw);
  const double sy = static_cast<double>(f.h) / th, sx = static_cast<double>(f.w) / tw;
  std::vector<float> plane(f.pixels.begin(), f.pixels.end());
  for (int y = 0; y < th; ++y)
    for (int x = 0; x < tw; ++x) {
      const float v = sample_bilinear(plane.data(), f.h, f.w, (x + 0.5) * sx - 0.5,
                                      (y + 0.5) * sy - 0.5);
      out.pixels[static_cast<size_t>(y) * tw + x] =
          static_cast<uint8_t>(std::min(255.0f, std::max(0.0f, v + 0.5f)));
    }
  return out;
}

}  // namespace wbx
