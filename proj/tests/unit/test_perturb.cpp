#include "doctest.h"

#include "chartgaze/perturb.hpp"
#include "support.hpp"

using namespace chartgaze;
using namespace chartgaze::perturb;

TEST_CASE("gaze_mask thresholds inclusively") {
  const Map2D g(1, 4, std::vector<double>{0.1, 0.5, 0.9, 0.49});
  const BinaryMask m = gaze_mask(g);
  CHECK_FALSE(m[0]);
  CHECK(m[1]);
  CHECK(m[2]);
  CHECK_FALSE(m[3]);
  CHECK(m.count() == 2);
  CHECK_THROWS_AS(gaze_mask(g, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(gaze_mask(g, 1.0), std::invalid_argument);
}

TEST_CASE("apply_mask and its complement partition the image") {
  chartgaze::Rng rng(4);
  const Map2D img = testing::random_map(rng, 6, 7, 1.0, 255.0);
  const BinaryMask m = gaze_mask(testing::random_map(rng, 6, 7), 0.5);
  const Map2D a = apply_mask(img, m);
  const Map2D b = apply_mask(img, m, true);
  for (std::size_t i = 0; i < img.size(); ++i) {
    CHECK(a[i] + b[i] == img[i]);
    CHECK((a[i] == 0.0) == m[i]);
  }
  CHECK_THROWS_AS(apply_mask(Map2D(2, 2), m), std::invalid_argument);
}

TEST_CASE("apply_region_blur only touches selected pixels") {
  Map2D img(9, 9, 0.0);
  img(4, 4) = 90.0;
  BinaryMask m(9, 9);
  for (std::size_t i = 0; i < 9; ++i) m.set(4 * 9 + i, true);  // middle row
  const Map2D out = apply_region_blur(img, m, 5, 1.0);
  CHECK(out(4, 4) < 90.0);
  CHECK(out(4, 5) > 0.0);
  CHECK(out(3, 4) == 0.0);  // not selected
  const Map2D inv = apply_region_blur(img, m, 5, 1.0, true);
  CHECK(inv(4, 4) == 90.0);
  CHECK(inv(3, 4) > 0.0);
  // Renormalized borders keep constant images constant.
  const Map2D flat = apply_region_blur(Map2D(5, 5, 7.0), BinaryMask(5, 5, true), 15, 5.0);
  for (double v : flat.values()) CHECK(v == doctest::Approx(7.0));
  CHECK_THROWS_AS(apply_region_blur(img, m, 4, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(apply_region_blur(img, m, 5, 0.0), std::invalid_argument);
}
