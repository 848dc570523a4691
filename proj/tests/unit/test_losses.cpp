#include "doctest.h"

#include <cmath>

#include "chartgaze/losses.hpp"
#include "support.hpp"

using namespace chartgaze;
using namespace chartgaze::loss;

namespace {

Map2D row(std::vector<double> v) {
  const auto n = v.size();
  return Map2D(1, n, std::move(v));
}

}  // namespace

TEST_CASE("W-MSE hand values") {
  const auto r = wmse(row({1, 0, 0, 0}), row({0, 0, 0, 0}));
  CHECK(r.loss == doctest::Approx(2.5));
  // dL/da_0 = -2 w (g - a) / n = -2 * 10 * 1 / 4.
  CHECK(r.grad[0] == doctest::Approx(-5.0));
  CHECK(r.grad[1] == 0.0);
  CHECK(wmse(row({0.3, 0.7}), row({0.3, 0.7})).loss == 0.0);
  CHECK_THROWS_AS(wmse(row({1.5}), row({0})), std::invalid_argument);
  LossConfig bad;
  bad.alpha = 1.0;
  CHECK_THROWS_AS(wmse(row({0.5}), row({0.5}), bad), std::invalid_argument);
}

TEST_CASE("KLD hand value") {
  const auto g = ProbMap::adopt(row({0.5, 0.5}));
  const auto a = ProbMap::adopt(row({0.9, 0.1}));
  const auto r = kld_loss(g, a);
  CHECK(r.loss == doctest::Approx(0.5 * std::log(5.0 / 9.0) + 0.5 * std::log(5.0)).epsilon(1e-6));
  CHECK(r.grad[1] == doctest::Approx(-5.0).epsilon(1e-6));
  CHECK(kld_loss(g, g).loss == doctest::Approx(0.0).epsilon(1e-7));
}

TEST_CASE("focal hand value and clamping") {
  CHECK(focal(row({1}), row({0.5})).loss == doctest::Approx(-0.25 * std::log(0.5)));
  // gamma = 0 reduces to binary cross-entropy.
  LossConfig ce;
  ce.gamma = 0.0;
  CHECK(focal(row({0.2}), row({0.7}), ce).loss ==
        doctest::Approx(-(0.2 * std::log(0.7) + 0.8 * std::log(0.3))));
  // Saturated predictions stay finite and get no gradient.
  const auto r = focal(row({1, 0}), row({0, 1}));
  CHECK(std::isfinite(r.loss));
  CHECK(r.grad[0] == 0.0);
  CHECK(r.grad[1] == 0.0);
}

TEST_CASE("Dice + BCE hand value") {
  LossConfig dice_only;
  dice_only.lambda_dice = 1.0;
  dice_only.lambda_bce = 0.0;
  CHECK(dice_bce(row({1, 0}), row({1, 1}), dice_only).loss == doctest::Approx(1.0 / 3.0));
  LossConfig bce_only;
  bce_only.lambda_dice = 0.0;
  CHECK(dice_bce(row({1, 0}), row({0.8, 0.4}), bce_only).loss ==
        doctest::Approx(-std::log(0.8) - std::log(0.6)));
  // Default weighting: 100 * Dice + BCE.
  const auto both = dice_bce(row({1, 0}), row({0.8, 0.4}));
  CHECK(both.loss == doctest::Approx(100.0 * (1.0 - 1.6 / 2.2) - std::log(0.8) - std::log(0.6)).epsilon(1e-6));
}

TEST_CASE("combined objective") {
  LossResult attn{2.5, Map2D(1, 1)};
  CHECK(combined(0.7, attn) == doctest::Approx(3.2));
  CHECK(combined(0.7, attn, 2.0, 0.5, 4.0) == doctest::Approx(1.4 + 5.0));
}

TEST_CASE("loss kind names round trip") {
  for (auto k : {LossKind::kWmse, LossKind::kKld, LossKind::kFocal, LossKind::kDiceBce}) {
    CHECK(parse_loss_kind(loss_kind_name(k)) == k);
  }
  CHECK_THROWS_AS(parse_loss_kind("mse"), std::invalid_argument);
}

TEST_CASE("evaluate checks shapes and the KLD domain") {
  CHECK_THROWS_AS(evaluate(LossKind::kFocal, Map2D(2, 2), Map2D(2, 3)), std::invalid_argument);
  CHECK_THROWS_AS(evaluate(LossKind::kKld, Map2D(1, 2, 0.7), Map2D(1, 2, 0.5)), std::invalid_argument);
  CHECK_NOTHROW(evaluate_unchecked(LossKind::kKld, Map2D(1, 2, 0.7), Map2D(1, 2, 0.5)));
}

TEST_CASE("finite_diff_check agrees with the analytic gradients") {
  chartgaze::Rng rng(3);
  for (int n = 0; n < 5; ++n) {
    const Map2D g = testing::random_map(rng, 6, 6);
    const Map2D a = testing::random_map(rng, 6, 6, 0.05, 0.95);
    CHECK(finite_diff_check(LossKind::kWmse, g, a, {}) < 1e-6);
    CHECK(finite_diff_check(LossKind::kFocal, g, a, {}) < 1e-5);
    CHECK(finite_diff_check(LossKind::kDiceBce, g, a, {}) < 1e-5);
    CHECK(finite_diff_check(LossKind::kKld, dist_normalize(g).map(), dist_normalize(a).map(), {}) < 1e-5);
  }
}
