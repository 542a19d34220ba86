#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace proplab {

// Axis-aligned box in continuous corner coordinates. width = x2 - x1, no
// legacy "+1" pixel convention. Zero-area boxes are legal; inverted corners
// are not.
struct Box {
  double x1 = 0.0, y1 = 0.0, x2 = 0.0, y2 = 0.0;

  Box() = default;
  Box(double ax1, double ay1, double ax2, double ay2)
      : x1(ax1), y1(ay1), x2(ax2), y2(ay2) {
    if (!(x2 >= x1) || !(y2 >= y1))
      throw std::invalid_argument("Box: negative extent");
  }

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const { return width() * height(); }
  double center_x() const { return 0.5 * (x1 + x2); }
  double center_y() const { return 0.5 * (y1 + y2); }

  bool operator==(const Box&) const = default;
};

inline constexpr int kNoClass = -1;

struct ScoredBox {
  Box box;
  double score = 0.0;
  int class_id = kNoClass;
};

// (tx, ty) shift the center in units of the reference size, (tw, th) scale
// width/height on a log scale.
struct RegressionDelta {
  double tx = 0.0, ty = 0.0, tw = 0.0, th = 0.0;
};

// Cap applied to tw/th inside decode(); exp() of anything larger would blow
// a box past any canvas this project uses.
inline const double kDeltaClip = std::log(1000.0 / 16.0);

inline double iou(const Box& a, const Box& b) {
  const double iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  if (iw <= 0.0) return 0.0;
  const double ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (ih <= 0.0) return 0.0;
  const double inter = iw * ih;
  const double uni = a.area() + b.area() - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

RegressionDelta encode(const Box& target, const Box& reference);

// Inverse of encode(). An all-zero delta returns `reference` unchanged, so a
// no-op refinement is exactly a no-op.
Box decode(const RegressionDelta& d, const Box& reference);

Box flip_h(const Box& b, double image_w);

Box rescale(const Box& b, double factor);

Box clip_to(const Box& b, double image_w, double image_h);

// Grows either side of the box to at least min_side, keeping the center.
Box ensure_min_extent(const Box& b, double min_side);

}  // namespace proplab
