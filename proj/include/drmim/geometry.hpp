#pragma once

#include <algorithm>
#include <cmath>

namespace drmim {

// Axis-aligned box, top-left origin, pixel units.
struct Box {
  double x = 0.0;
  double y = 0.0;
  double w = 0.0;
  double h = 0.0;

  double cx() const { return x + w / 2.0; }
  double cy() const { return y + h / 2.0; }
  double x2() const { return x + w; }
  double y2() const { return y + h; }
  double area() const { return w * h; }

  static Box from_center(double cx, double cy, double w, double h) {
    return Box{cx - w / 2.0, cy - h / 2.0, w, h};
  }
};

inline double iou(const Box& a, const Box& b) {
  const double ix = std::max(0.0, std::min(a.x2(), b.x2()) - std::max(a.x, b.x));
  const double iy = std::max(0.0, std::min(a.y2(), b.y2()) - std::max(a.y, b.y));
  const double inter = ix * iy;
  const double uni = a.area() + b.area() - inter;
  // cancellation in x2()-x can push the ratio an ulp past 1
  return uni > 0.0 ? std::min(1.0, inter / uni) : 0.0;
}

inline double center_error(const Box& a, const Box& b) {
  const double dx = a.cx() - b.cx();
  const double dy = a.cy() - b.cy();
  return std::sqrt(dx * dx + dy * dy);
}

}  // namespace drmim
