#pragma once

#include <cmath>

namespace nightrack {

/// Axis-aligned box in pixels; (x, y) is the top-left corner.
struct BBox {
  double x = 0.0;
  double y = 0.0;
  double w = 0.0;
  double h = 0.0;

  double cx() const { return x + 0.5 * w; }
  double cy() const { return y + 0.5 * h; }
  double area() const { return w * h; }
  bool valid() const {
    return std::isfinite(x) && std::isfinite(y) && std::isfinite(w) && std::isfinite(h) && w > 0.0 && h > 0.0;
  }
  static BBox from_center(double cx, double cy, double w, double h) { return {cx - 0.5 * w, cy - 0.5 * h, w, h}; }

  friend bool operator==(const BBox&, const BBox&) = default;
};

/// Maps crop pixel coordinates to frame coordinates: frame = origin + crop / scale.
struct CropTransform {
  double origin_x = 0.0;
  double origin_y = 0.0;
  double scale = 1.0;  // crop pixels per frame pixel

  double to_frame_x(double u) const { return origin_x + u / scale; }
  double to_frame_y(double v) const { return origin_y + v / scale; }
  double to_crop_x(double x) const { return (x - origin_x) * scale; }
  double to_crop_y(double y) const { return (y - origin_y) * scale; }

  BBox to_frame(const BBox& b) const { return {to_frame_x(b.x), to_frame_y(b.y), b.w / scale, b.h / scale}; }
  BBox to_crop(const BBox& b) const { return {to_crop_x(b.x), to_crop_y(b.y), b.w * scale, b.h * scale}; }
};

}  // namespace nightrack
