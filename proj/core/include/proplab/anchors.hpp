#pragma once

#include <array>
#include <span>
#include <vector>

#include "proplab/box.hpp"

namespace proplab {

// One template box stamped at one feature-grid cell. Centers sit at
// ((col + 0.5) * stride, (row + 0.5) * stride); boxes are not clipped, so
// border anchors may hang past the image.
struct Anchor {
  Box box;
  int grid_row = 0;
  int grid_col = 0;
  int template_index = 0;  // scale-major: scale_idx * n_ratios + ratio_idx
};

inline constexpr double kDefaultStride = 16.0;
inline constexpr std::array<double, 6> kDefaultAnchorScales = {32.0, 64.0, 96.0, 128.0, 256.0, 512.0};
inline constexpr std::array<double, 3> kDefaultAspectRatios = {0.5, 1.0, 2.0};

// Dense grid of ceil(W/stride) * ceil(H/stride) * |scales| * |ratios|
// anchors. A template with scale s and ratio r has area s^2 and w/h = r.
std::vector<Anchor> generate_anchors(double image_w, double image_h,
                                     double stride,
                                     std::span<const double> scales,
                                     std::span<const double> ratios);

}  // namespace proplab
