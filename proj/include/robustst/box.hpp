#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <string>

#include "robustst/errors.hpp"

namespace robustst {

/// Axis-aligned box in scene (grid-cell) units: top-left corner plus extent.
struct BoundingBox {
  double x = 0.0;
  double y = 0.0;
  double w = 1.0;
  double h = 1.0;

  double area() const noexcept { return w * h; }
  double center_x() const noexcept { return x + 0.5 * w; }
  double center_y() const noexcept { return y + 0.5 * h; }
  double right() const noexcept { return x + w; }
  double bottom() const noexcept { return y + h; }
  bool valid() const noexcept {
    return std::isfinite(x) && std::isfinite(y) && std::isfinite(w) && std::isfinite(h) && w > 0.0 &&
           h > 0.0;
  }

  std::array<double, 4> as_array() const noexcept { return {x, y, w, h}; }
  static BoundingBox from_array(const std::array<double, 4>& a) noexcept { return {a[0], a[1], a[2], a[3]}; }

  friend bool operator==(const BoundingBox&, const BoundingBox&) = default;
};

inline void require_valid(const BoundingBox& b, const char* what) {
  if (!b.valid()) {
    throw ParameterError(std::string(what) + ": box must have finite coordinates and w, h > 0");
  }
}

/// Intersection over union, in [0, 1].
inline double iou(const BoundingBox& a, const BoundingBox& b) noexcept {
  const double ix = std::min(a.right(), b.right()) - std::max(a.x, b.x);
  const double iy = std::min(a.bottom(), b.bottom()) - std::max(a.y, b.y);
  if (ix <= 0.0 || iy <= 0.0) return 0.0;
  const double inter = ix * iy;
  const double uni = a.area() + b.area() - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

/// Clip a box to [0, width] x [0, height]. Returns a box with at least `min_extent` on each side.
inline BoundingBox clamp_to_scene(const BoundingBox& b, double width, double height,
                                  double min_extent = 1e-3) noexcept {
  double x0 = std::clamp(b.x, 0.0, width - min_extent);
  double y0 = std::clamp(b.y, 0.0, height - min_extent);
  double x1 = std::clamp(b.right(), x0 + min_extent, width);
  double y1 = std::clamp(b.bottom(), y0 + min_extent, height);
  return {x0, y0, x1 - x0, y1 - y0};
}

/// Regression offsets of a box relative to a reference (proposal) box.
///   dx = (cx - pcx) / pw, dy = (cy - pcy) / ph, dw = log(w / pw), dh = log(h / ph)
using BoxOffsets = std::array<double, 4>;

inline BoxOffsets encode_box(const BoundingBox& target, const BoundingBox& reference) noexcept {
  return {(target.center_x() - reference.center_x()) / reference.w,
          (target.center_y() - reference.center_y()) / reference.h, std::log(target.w / reference.w),
          std::log(target.h / reference.h)};
}

inline BoundingBox decode_box(const BoxOffsets& t, const BoundingBox& reference) noexcept {
  const double cx = reference.center_x() + t[0] * reference.w;
  const double cy = reference.center_y() + t[1] * reference.h;
  const double w = reference.w * std::exp(t[2]);
  const double h = reference.h * std::exp(t[3]);
  return {cx - 0.5 * w, cy - 0.5 * h, w, h};
}

}  // namespace robustst
