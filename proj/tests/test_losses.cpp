#include <cmath>
#include <random>

#include "doctest.h"
#include "seedet/error.hpp"
#include "seedet/losses.hpp"

using namespace seedet;

TEST_CASE("focal loss reference value") {
  // -0.5 * 0.1^2 * ln(0.9)
  const double expected = -0.5 * 0.01 * std::log(0.9);
  CHECK(std::abs(focal_loss(0.9, 1, {0.5, 2.0}) - 5.268e-4) < 1e-7);
  CHECK(focal_loss(0.9, 1, {0.5, 2.0}) == doctest::Approx(expected).epsilon(1e-14));
  CHECK(focal_loss(0.1, 0, {0.5, 2.0}) == doctest::Approx(expected).epsilon(1e-14));
}

TEST_CASE("focal loss with alpha 1, gamma 0 is cross-entropy") {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(1e-6, 1 - 1e-6);
  for (int i = 0; i < 1000; ++i) {
    const double p = u(rng);
    const int y = i % 2;
    CHECK(std::abs(focal_loss(p, y, {1.0, 0.0}) - cross_entropy(p, y)) <= 1e-12);
  }
}

TEST_CASE("focal loss properties") {
  const FocalParams fp{0.5, 2.0};
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.001, 0.999);
  for (int i = 0; i < 500; ++i) {
    const double p = u(rng);
    for (int y : {0, 1}) CHECK(focal_loss(p, y, fp) <= fp.alpha * cross_entropy(p, y) + 1e-15);
  }
  double prev = focal_loss(0.01, 1, fp);
  for (double p = 0.02; p < 0.99; p += 0.01) {
    const double cur = focal_loss(p, 1, fp);
    CHECK(cur < prev);
    prev = cur;
  }
  const double ratio = focal_loss(0.9, 1, fp) / focal_loss(0.5, 1, fp);
  CHECK(ratio == doctest::Approx((0.1 / 0.5) * (0.1 / 0.5) * std::log(0.9) / std::log(0.5)).epsilon(1e-12));
}

TEST_CASE("clamping keeps extreme probabilities finite") {
  CHECK(std::isfinite(focal_loss(0.0, 1, {})));
  CHECK(std::isfinite(cross_entropy(1.0, 0)));
  CHECK(cross_entropy(0.0, 1) == doctest::Approx(-std::log(kProbClamp)));
  CHECK_THROWS_AS(focal_loss(0.5, 2, {}), ConfigError);
  CHECK_THROWS_AS((FocalParams{0.0, 2.0}.validate()), ConfigError);
  CHECK_THROWS_AS((FocalParams{0.5, -1.0}.validate()), ConfigError);
}

TEST_CASE("logit gradient matches finite differences") {
  const auto f = [](double z, int y, const FocalParams& fp) { return focal_loss(1.0 / (1.0 + std::exp(-z)), y, fp); };
  for (const FocalParams& fp : {FocalParams{0.5, 2.0}, FocalParams{1.0, 0.0}, FocalParams{0.25, 1.5}})
    for (double z : {-6.0, -2.0, -0.3, 0.0, 0.7, 3.0, 5.5})
      for (int y : {0, 1}) {
        const double h = 1e-5;
        const double num = (f(z + h, y, fp) - f(z - h, y, fp)) / (2 * h);
        const double ana = focal_loss_logit_grad(z, y, fp);
        CHECK(std::abs(ana - num) <= 1e-8 * std::max(std::abs(num), 1e-3));
      }
}

TEST_CASE("smooth L1") {
  CHECK(smooth_l1(0.0) == 0.0);
  CHECK(smooth_l1(0.5) == 0.125);
  CHECK(smooth_l1(2.0) == 1.5);
  CHECK(smooth_l1(-2.0) == 1.5);
  CHECK(smooth_l1(1.0) == doctest::Approx(0.5));
  CHECK(smooth_l1(1.0 - 1e-12) == doctest::Approx(0.5));
  CHECK(smooth_l1_grad(0.3) == 0.3);
  CHECK(smooth_l1_grad(-4.0) == -1.0);
  CHECK(regression_loss({1, 2, 3, 4}, {1, 2, 3, 4}) == 0.0);
  CHECK(regression_loss({0.5, 0, 0, 0}, {0, 0, 0, 0}) == 0.125);
  CHECK(regression_loss({2, 0, 0, 2}, {0, 0, 0, 0}) == 3.0);
}

TEST_CASE("total loss normalization") {
  using L = AnchorLabel;
  {
    const std::vector<double> cls{0.2, 0.4}, reg{5.0, 7.0};
    const std::vector<L> labels{L::negative(), L::negative()};
    const auto b = total_loss(cls, reg, labels);
    CHECK(b.l_reg == 0.0);
    CHECK(b.total == b.l_cls);
    CHECK(b.l_cls == doctest::Approx(0.3));
  }
  {
    const std::vector<double> cls{0.01}, reg{0.125};
    const std::vector<L> labels{L::positive(0)};
    CHECK(total_loss(cls, reg, labels).total == doctest::Approx(0.135));
  }
  {
    const std::vector<double> cls{0.3, 9.0, 0.1}, reg{0.0, 9.0, 0.0};
    const std::vector<L> labels{L::positive(0), L::ignored(), L::negative()};
    const auto b = total_loss(cls, reg, labels);
    CHECK(b.total == doctest::Approx(0.2));
    CHECK(b.n_ignored == 1);
  }
  const std::vector<double> one{1.0};
  const std::vector<L> ignored{L::ignored()};
  CHECK_THROWS(total_loss(one, one, ignored));
}

namespace {

// Logits [1, 5, 1, 1, 2]: one anchor slot over two cells.
Tensor<double> two_anchor_logits(std::vector<double> v) { return Tensor<double>::parameter({1, 5, 1, 1, 2}, v); }

}  // namespace

TEST_CASE("detection loss assembles per-anchor terms") {
  AnchorTargets t;
  t.labels = {AnchorLabel::positive(0), AnchorLabel::negative()};
  t.deltas = {BoxDeltas{0.5, 0, 0, 0}, BoxDeltas{}};
  // channel-major: logit(c0, c1), dx(c0, c1), dy, dz, dr
  auto logits = two_anchor_logits({0.3, -1.2, 0, 9, 0, 9, 0, 9, 0, 9});
  const std::vector<AnchorTargets> targets{t};
  const FocalParams fp{0.5, 2.0};
  const auto [loss, b] = detection_loss(logits, targets, {fp, true, 0, 0});
  const auto sig = [](double z) { return 1.0 / (1.0 + std::exp(-z)); };
  const double cls = (focal_loss(sig(0.3), 1, fp) + focal_loss(sig(-1.2), 0, fp)) / 2;
  CHECK(b.l_cls == doctest::Approx(cls).epsilon(1e-14));
  CHECK(b.l_reg == doctest::Approx(0.125));
  CHECK(loss.item() == doctest::Approx(cls + 0.125));

  // Predictions of the negative anchor never reach the regression term.
  auto moved = two_anchor_logits({0.3, -1.2, 0, -4, 0, 2, 0, 7, 0, 1});
  CHECK(detection_loss(moved, targets, {fp, true, 0, 0}).second.l_reg == b.l_reg);

  CHECK_THROWS_AS(detection_loss(Tensor<double>({1, 4, 1, 1, 2}), targets, {}), ShapeError);
  const std::vector<AnchorTargets> wrong{t, t};
  CHECK_THROWS_AS(detection_loss(logits, wrong, {}), ShapeError);
}

TEST_CASE("negative cap keeps ratio times positives") {
  AnchorTargets t;
  t.labels.assign(40, AnchorLabel::negative());
  t.labels[3] = AnchorLabel::positive(0);
  t.deltas.assign(40, BoxDeltas{});
  const std::vector<AnchorTargets> targets{t};
  auto logits = Tensor<double>::parameter({1, 5, 2, 4, 5}, std::vector<double>(200, -1.0));
  const auto capped = detection_loss(logits, targets, {{}, false, 3, 9}).second;
  CHECK(capped.n_pos == 1);
  CHECK(capped.n_neg == 3);
  CHECK(capped.n_ignored == 36);
  const auto all = detection_loss(logits, targets, {{}, false, 0, 9}).second;
  CHECK(all.n_neg == 39);
}
