#include "proplab/anchors.hpp"

#include <cmath>
#include <stdexcept>

namespace proplab {

std::vector<Anchor> generate_anchors(double image_w, double image_h,
                                     double stride,
                                     std::span<const double> scales,
                                     std::span<const double> ratios) {
  if (!(stride > 0.0)) throw std::invalid_argument("generate_anchors: stride must be > 0");
  if (image_w < 0.0 || image_h < 0.0)
    throw std::invalid_argument("generate_anchors: negative image size");
  if (scales.empty() || ratios.empty())
    throw std::invalid_argument("generate_anchors: need at least one scale and ratio");
  for (double s : scales)
    if (!(s > 0.0)) throw std::invalid_argument("generate_anchors: scale must be > 0");
  for (double r : ratios)
    if (!(r > 0.0)) throw std::invalid_argument("generate_anchors: ratio must be > 0");

  if (image_w == 0.0 || image_h == 0.0) return {};

  const int cols = static_cast<int>(std::ceil(image_w / stride));
  const int rows = static_cast<int>(std::ceil(image_h / stride));

  // Half-extents per template; area s^2, aspect w/h = r.
  struct HalfSize {
    double hw, hh;
  };
  std::vector<HalfSize> tmpl;
  tmpl.reserve(scales.size() * ratios.size());
  for (double s : scales)
    for (double r : ratios) {
      const double w = s * std::sqrt(r);
      tmpl.push_back({0.5 * w, 0.5 * (s * s / w)});
    }

  std::vector<Anchor> out;
  out.reserve(static_cast<std::size_t>(rows) * cols * tmpl.size());
  for (int row = 0; row < rows; ++row) {
    const double cy = (row + 0.5) * stride;
    for (int col = 0; col < cols; ++col) {
      const double cx = (col + 0.5) * stride;
      for (int t = 0; t < static_cast<int>(tmpl.size()); ++t) {
        Anchor a;
        a.box = Box(cx - tmpl[t].hw, cy - tmpl[t].hh, cx + tmpl[t].hw,
                    cy + tmpl[t].hh);
        a.grid_row = row;
        a.grid_col = col;
        a.template_index = t;
        out.push_back(a);
      }
    }
  }
  return out;
}

}  // namespace proplab
