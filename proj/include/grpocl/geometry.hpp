// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace grpocl {

/// Axis-aligned box in normalized image coordinates, corner form.
///
/// Invariant: 0 <= x1 < x2 <= 1 and 0 <= y1 < y2 <= 1. Zero-area boxes are
/// rejected at construction, so every BBox in the system has positive area.
class BBox {
 public:
  BBox(double x1, double y1, double x2, double y2) : x1_(x1), y1_(y1), x2_(x2), y2_(y2) {
    if (!is_valid(x1, y1, x2, y2)) {
      throw std::invalid_argument("BBox: invalid corners (" + std::to_string(x1) + ", " +
                                  std::to_string(y1) + ", " + std::to_string(x2) + ", " +
                                  std::to_string(y2) + ")");
    }
  }

  static bool is_valid(double x1, double y1, double x2, double y2) noexcept {
    const bool finite =
        std::isfinite(x1) && std::isfinite(y1) && std::isfinite(x2) && std::isfinite(y2);
    return finite && x1 >= 0.0 && y1 >= 0.0 && x2 <= 1.0 && y2 <= 1.0 && x1 < x2 && y1 < y2;
  }

  double x1() const noexcept { return x1_; }
  double y1() const noexcept { return y1_; }
  double x2() const noexcept { return x2_; }
  double y2() const noexcept { return y2_; }
  double width() const noexcept { return x2_ - x1_; }
  double height() const noexcept { return y2_ - y1_; }
  double area() const noexcept { return width() * height(); }

  friend bool operator==(const BBox&, const BBox&) = default;

 private:
  double x1_, y1_, x2_, y2_;
};

inline double intersection_area(const BBox& a, const BBox& b) noexcept {
  const double w = std::min(a.x2(), b.x2()) - std::max(a.x1(), b.x1());
  const double h = std::min(a.y2(), b.y2()) - std::max(a.y1(), b.y1());
  return std::max(w, 0.0) * std::max(h, 0.0);
}

/// Intersection over union. Disjoint boxes give exactly 0, equal boxes exactly 1.
inline double iou(const BBox& a, const BBox& b) noexcept {
  if (a == b) return 1.0;
  const double inter = intersection_area(a, b);
  if (inter <= 0.0) return 0.0;
  const double uni = a.area() + b.area() - inter;
  return std::clamp(inter / uni, 0.0, 1.0);
}

}  // namespace grpocl
