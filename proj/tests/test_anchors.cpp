#include <cmath>
#include <stdexcept>

#include "doctest.h"
#include "proplab/anchors.hpp"

using namespace proplab;

TEST_CASE("anchor grid size") {
  // 64x64 at stride 16 -> 4x4 grid; 6 scales x 3 ratios = 18 templates
  const auto anchors = generate_anchors(64, 64, 16.0, kDefaultAnchorScales,
                                        kDefaultAspectRatios);
  CHECK(anchors.size() == 4 * 4 * 18);

  // partial cells round up
  const auto ragged = generate_anchors(65, 64, 16.0, kDefaultAnchorScales,
                                       kDefaultAspectRatios);
  CHECK(ragged.size() == 5 * 4 * 18);

  CHECK(generate_anchors(0, 64, 16.0, kDefaultAnchorScales, kDefaultAspectRatios)
            .empty());
}

TEST_CASE("single anchor is centered on its cell") {
  const double scales[] = {32.0};
  const double ratios[] = {1.0};
  const auto anchors = generate_anchors(16, 16, 16.0, scales, ratios);
  REQUIRE(anchors.size() == 1);
  const Anchor& a = anchors[0];
  CHECK(a.box.center_x() == doctest::Approx(8.0).epsilon(1e-12));
  CHECK(a.box.center_y() == doctest::Approx(8.0).epsilon(1e-12));
  CHECK(a.box.width() == doctest::Approx(32.0).epsilon(1e-12));
  CHECK(a.box.height() == doctest::Approx(32.0).epsilon(1e-12));
  CHECK(a.grid_row == 0);
  CHECK(a.grid_col == 0);
  CHECK(a.template_index == 0);
  // anchors may hang over the image edge; they are not clipped
  CHECK(a.box.x1 == doctest::Approx(-8.0).epsilon(1e-12));
}

TEST_CASE("template shape preserves area and aspect ratio") {
  const double scales[] = {64.0};
  const double ratios[] = {2.0};
  const auto anchors = generate_anchors(16, 16, 16.0, scales, ratios);
  REQUIRE(anchors.size() == 1);
  const Box& b = anchors[0].box;
  CHECK(b.width() == doctest::Approx(64.0 * std::sqrt(2.0)).epsilon(1e-12));
  CHECK(b.height() == doctest::Approx(64.0 / std::sqrt(2.0)).epsilon(1e-12));
  CHECK(b.width() * b.height() == doctest::Approx(64.0 * 64.0).epsilon(1e-9));
  CHECK(b.width() / b.height() == doctest::Approx(2.0).epsilon(1e-9));
}

TEST_CASE("template index is scale-major") {
  const auto anchors = generate_anchors(16, 16, 16.0, kDefaultAnchorScales,
                                        kDefaultAspectRatios);
  REQUIRE(anchors.size() == 18);
  // template 0: scale 32 ratio 0.5; template 1: scale 32 ratio 1; ...
  CHECK(anchors[1].box.width() * anchors[1].box.height() ==
        doctest::Approx(32.0 * 32.0).epsilon(1e-6));
  CHECK(anchors[1].box.width() == doctest::Approx(32.0).epsilon(1e-9));
  CHECK(anchors[3].box.width() * anchors[3].box.height() ==
        doctest::Approx(64.0 * 64.0).epsilon(1e-6));
  for (int i = 0; i < 18; ++i) CHECK(anchors[i].template_index == i);
}

TEST_CASE("anchor input validation") {
  const double scales[] = {32.0};
  const double ratios[] = {1.0};
  CHECK_THROWS_AS(generate_anchors(64, 64, 0.0, scales, ratios),
                  std::invalid_argument);
  CHECK_THROWS_AS(generate_anchors(-1, 64, 16.0, scales, ratios),
                  std::invalid_argument);
  CHECK_THROWS_AS(generate_anchors(64, 64, 16.0, {}, ratios),
                  std::invalid_argument);
  const double bad_scale[] = {-32.0};
  CHECK_THROWS_AS(generate_anchors(64, 64, 16.0, bad_scale, ratios),
                  std::invalid_argument);
}
