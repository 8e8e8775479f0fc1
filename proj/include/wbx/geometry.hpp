#pragma once

#include <algorithm>
#include <string>

#include "wbx/errors.hpp"

namespace wbx {

// Axis-aligned box in pixel coordinates; min edges inclusive, max exclusive.
struct BoundingBox {
  double x_min = 0, y_min = 0, x_max = 0, y_max = 0;

  double width() const { return x_max - x_min; }
  double height() const { return y_max - y_min; }
  double center_x() const { return 0.5 * (x_min + x_max); }
  double center_y() const { return 0.5 * (y_min + y_max); }
  double area() const { return width() * height(); }
  bool valid() const { return x_min < x_max && y_min < y_max; }

  bool contains(double x, double y) const {
    return x >= x_min && x < x_max && y >= y_min && y < y_max;
  }
};

inline BoundingBox make_box(double x_min, double y_min, double x_max, double y_max) {
  BoundingBox b{x_min, y_min, x_max, y_max};
  if (!b.valid())
    throw data_error("bounding box degenerate: [" + std::to_string(x_min) + "," +
                     std::to_string(y_min) + "," + std::to_string(x_max) + "," +
                     std::to_string(y_max) + "]");
  return b;
}

inline BoundingBox clip_box(const BoundingBox& b, double w, double h) {
  BoundingBox out;
  out.x_min = std::max(0.0, b.x_min);
  out.y_min = std::max(0.0, b.y_min);
  out.x_max = std::min(w, b.x_max);
  out.y_max = std::min(h, b.y_max);
  return out;
}

}  // namespace wbx
