#include <algorithm>
#include <cmath>
#include <random>

#include "doctest.h"
#include "seedet/boxes.hpp"
#include "seedet/error.hpp"
#include "oracles.hpp"

using namespace seedet;

TEST_CASE("iou") {
  const Box3 a{10, 10, 10, 5};
  CHECK(iou(a, a) == 1.0);
  CHECK(iou(a, Box3{30, 10, 10, 5}) == 0.0);
  CHECK(iou(a, Box3{20, 10, 10, 5}) == 0.0);  // touching faces
  CHECK(iou(Box3{0, 0, 0, 2.5}, Box3{0, 0, 0, 5}) == 0.125);
  // Half overlap along x: 5*10*10 / (2000 - 500).
  CHECK(iou(a, Box3{15, 10, 10, 5}) == doctest::Approx(500.0 / 1500.0));

  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> c(0, 20), r(0.5, 8);
  for (int i = 0; i < 500; ++i) {
    const Box3 p{c(rng), c(rng), c(rng), r(rng)}, q{c(rng), c(rng), c(rng), r(rng)};
    const double v = iou(p, q);
    CHECK(v == iou(q, p));
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
}

TEST_CASE("anchor grid") {
  const std::vector<double> sizes{5, 10, 20};
  CHECK(generate_anchors(32, 32, 32, 4, sizes).size() == 98304);
  const auto anchors = generate_anchors(2, 3, 4, 4, sizes);
  REQUIRE(anchors.size() == 72);
  CHECK(anchors[1].box.cx == 2.0);
  CHECK(anchors[1].box.cy == 2.0);
  CHECK(anchors[1].box.cz == 2.0);
  CHECK(anchors[1].box.r == 5.0);
  for (std::size_t k = 0; k < anchors.size(); ++k) {
    const auto& a = anchors[k];
    CHECK(a.slot == k % 3);
    CHECK(((a.gz * 3 + a.gy) * 4 + a.gx) == k / 3);
    CHECK(a.box.cx == (a.gx + 0.5) * 4);
    CHECK(a.box.r == sizes[a.slot] / 2);
  }
  const auto again = generate_anchors(2, 3, 4, 4, sizes);
  for (std::size_t k = 0; k < anchors.size(); ++k) CHECK(anchors[k].box == again[k].box);
  CHECK_THROWS_AS(generate_anchors(1, 1, 1, 0, sizes), ConfigError);
  const std::vector<double> bad{5, 0};
  CHECK_THROWS_AS(generate_anchors(1, 1, 1, 4, bad), ConfigError);
}

TEST_CASE("label assignment") {
  const std::vector<double> sizes{5, 10, 20};
  const auto anchors = generate_anchors(8, 8, 8, 4, sizes);

  SUBCASE("no ground truth leaves every anchor negative") {
    const auto labels = assign_labels(anchors, {});
    CHECK(count_labels(labels).negative == anchors.size());
  }
  SUBCASE("identical, concentric and distant anchors") {
    // Anchor (1,1,1) slot 1: center (6,6,6), r 5.
    const std::vector<Box3> gts{{6, 6, 6, 5}};
    const auto labels = assign_labels(anchors, gts);
    const auto at = [&](std::size_t z, std::size_t y, std::size_t x, std::size_t s) {
      return labels[((z * 8 + y) * 8 + x) * 3 + s];
    };
    CHECK(at(1, 1, 1, 1) == AnchorLabel::positive(0));
    CHECK(iou(anchors[((1 * 8 + 1) * 8 + 1) * 3 + 0].box, gts[0]) == 0.125);
    CHECK(at(1, 1, 1, 0).kind == AnchorLabel::Kind::Ignored);
    CHECK(at(7, 7, 7, 0).kind == AnchorLabel::Kind::Negative);
    const auto c = count_labels(labels);
    CHECK(c.positive + c.negative + c.ignored == anchors.size());
  }
  SUBCASE("argmax ties go to the lower gt index") {
    const std::vector<Box3> gts{{6, 6, 6, 5}, {6, 6, 6, 5}};
    CHECK(assign_labels(anchors, gts)[((1 * 8 + 1) * 8 + 1) * 3 + 1] == AnchorLabel::positive(0));
  }
  SUBCASE("forcing gives a positive to a gt no anchor matches well") {
    // A radius-1 box fits no anchor above 0.5; its best anchor is the
    // size-5 anchor of the cell holding it.
    const std::vector<Box3> gts{{9.5, 10, 10, 1}};
    auto labels = assign_labels(anchors, gts, {0.5, 0.02, false});
    CHECK(count_labels(labels).positive == 0);
    labels = assign_labels(anchors, gts);
    CHECK(count_labels(labels).positive == 1);
    CHECK(labels[((2 * 8 + 2) * 8 + 2) * 3 + 0] == AnchorLabel::positive(0));
  }
  SUBCASE("every gt gets a positive") {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> c(2, 30), r(1, 12);
    for (int trial = 0; trial < 30; ++trial) {
      std::vector<Box3> gts;
      for (int g = 0; g < 4; ++g) gts.push_back({c(rng), c(rng), c(rng), r(rng)});
      const auto labels = assign_labels(anchors, gts);
      std::vector<bool> seen(gts.size(), false);
      for (const auto& l : labels)
        if (l.kind == AnchorLabel::Kind::Positive) seen[l.gt] = true;
      for (bool s : seen) CHECK(s);
    }
  }
  CHECK_THROWS_AS(assign_labels(anchors, {}, {0.02, 0.5, true}), ConfigError);
}

TEST_CASE("box encoding") {
  const Box3 anchor{10, 10, 10, 5};
  const auto d = encode_box({15, 10, 10, 10}, anchor);
  CHECK(d[0] == 1.0);
  CHECK(d[1] == 0.0);
  CHECK(d[2] == 0.0);
  CHECK(d[3] == doctest::Approx(0.6931471805599453).epsilon(1e-15));
  CHECK(encode_box({5, 10, 10, 10}, anchor)[0] == -1.0);
  CHECK(encode_box(anchor, anchor) == BoxDeltas{0, 0, 0, 0});
  CHECK(decode_box(anchor, {0, 0, 0, 0}) == anchor);
  const Box3 back = decode_box(anchor, {1, 0, 0, std::log(2.0)});
  CHECK(back.cx == 15.0);
  CHECK(back.r == doctest::Approx(10.0).epsilon(1e-15));
  CHECK_THROWS_AS(encode_box({0, 0, 0, 0}, anchor), ConfigError);
  CHECK_THROWS_AS(encode_box(anchor, {0, 0, 0, -1}), ConfigError);

  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> c(-50, 150), r(0.5, 30);
  double worst = 0;
  for (int i = 0; i < 1000; ++i) {
    const Box3 gt{c(rng), c(rng), c(rng), r(rng)}, an{c(rng), c(rng), c(rng), r(rng)};
    const Box3 rt = decode_box(an, encode_box(gt, an));
    worst = std::max({worst, std::abs(rt.cx - gt.cx), std::abs(rt.cy - gt.cy), std::abs(rt.cz - gt.cz),
                      std::abs(rt.r - gt.r)});
  }
  CHECK(worst < 1e-9);
}

TEST_CASE("nms") {
  const std::vector<Box3> one{{1, 1, 1, 1}};
  CHECK(nms(one, std::vector<double>{0.3}, 0.1) == std::vector<std::size_t>{0});
  const std::vector<Box3> twins{{1, 1, 1, 1}, {1, 1, 1, 1}};
  CHECK(nms(twins, std::vector<double>{0.3, 0.6}, 0.1) == std::vector<std::size_t>{1});
  CHECK(nms(twins, std::vector<double>{0.5, 0.5}, 0.1) == std::vector<std::size_t>{0});
  CHECK_THROWS_AS(nms(twins, std::vector<double>{0.5}, 0.1), ConfigError);

  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> thr(0.0, 0.6);
  std::vector<Box3> boxes;
  std::vector<double> probs;
  for (int scene = 0; scene < 200; ++scene) {
    oracle::random_boxes(rng, 20, boxes, probs);
    const double t = thr(rng);
    const auto kept = nms(boxes, probs, t);
    const auto solutions = oracle::consistent_suppressions(boxes, probs, t);
    REQUIRE(solutions.size() == 1);
    CHECK(kept == solutions[0]);
    for (std::size_t a = 0; a < kept.size(); ++a)
      for (std::size_t b = a + 1; b < kept.size(); ++b) {
        CHECK(iou(boxes[kept[a]], boxes[kept[b]]) <= t);
        CHECK(probs[kept[a]] >= probs[kept[b]]);
      }
  }
}
