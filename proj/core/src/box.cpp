#include "proplab/box.hpp"

namespace proplab {

RegressionDelta encode(const Box& target, const Box& reference) {
  const double rw = reference.width();
  const double rh = reference.height();
  if (rw <= 0.0 || rh <= 0.0)
    throw std::invalid_argument("encode: degenerate reference box");
  return {(target.center_x() - reference.center_x()) / rw,
          (target.center_y() - reference.center_y()) / rh,
          std::log(target.width() / rw), std::log(target.height() / rh)};
}

Box decode(const RegressionDelta& d, const Box& reference) {
  const double rw = reference.width();
  const double rh = reference.height();
  if (rw <= 0.0 || rh <= 0.0)
    throw std::invalid_argument("decode: degenerate reference box");
  if (d.tx == 0.0 && d.ty == 0.0 && d.tw == 0.0 && d.th == 0.0)
    return reference;
  const double cx = reference.center_x() + d.tx * rw;
  const double cy = reference.center_y() + d.ty * rh;
  const double w = std::exp(std::min(d.tw, kDeltaClip)) * rw;
  const double h = std::exp(std::min(d.th, kDeltaClip)) * rh;
  return {cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h};
}

Box flip_h(const Box& b, double image_w) {
  return {image_w - b.x2, b.y1, image_w - b.x1, b.y2};
}

Box rescale(const Box& b, double factor) {
  if (!(factor > 0.0)) throw std::invalid_argument("rescale: factor must be > 0");
  return {b.x1 * factor, b.y1 * factor, b.x2 * factor, b.y2 * factor};
}

Box clip_to(const Box& b, double image_w, double image_h) {
  if (image_w < 0.0 || image_h < 0.0)
    throw std::invalid_argument("clip_to: negative image size");
  auto cl = [](double v, double hi) { return std::clamp(v, 0.0, hi); };
  return {cl(b.x1, image_w), cl(b.y1, image_h), cl(b.x2, image_w),
          cl(b.y2, image_h)};
}

Box ensure_min_extent(const Box& b, double min_side) {
  double x1 = b.x1, x2 = b.x2, y1 = b.y1, y2 = b.y2;
  if (x2 - x1 < min_side) {
    const double cx = 0.5 * (x1 + x2);
    x1 = cx - 0.5 * min_side;
    x2 = cx + 0.5 * min_side;
  }
  if (y2 - y1 < min_side) {
    const double cy = 0.5 * (y1 + y2);
    y1 = cy - 0.5 * min_side;
    y2 = cy + 0.5 * min_side;
  }
  return {x1, y1, x2, y2};
}

}  // namespace proplab
