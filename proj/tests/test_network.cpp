#include <cmath>
#include <random>
#include <set>

#include "doctest.h"
#include "seedet/error.hpp"
#include "seedet/network.hpp"

using namespace seedet;

namespace {

template <class T>
Tensor<T> random_input(Shape s, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> d(0.0, 1.0);
  std::vector<T> v(shape_numel(s));
  for (auto& x : v) x = static_cast<T>(d(rng));
  return Tensor<T>(std::move(s), std::move(v));
}

std::set<std::string> parameter_names(Detector<double>& net) {
  std::set<std::string> out;
  net.visit_parameters([&](const std::string& n, Tensor<double>&) { out.insert(n); });
  return out;
}

}  // namespace

TEST_CASE("config validation") {
  NetworkConfig c;
  CHECK_NOTHROW(c.validate());
  CHECK(c.deepest_stride() == 16);
  CHECK(c.head_channels() == 15);
  c.output_stride = 3;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = NetworkConfig::tiny();
  c.decoder_channels = {};
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = NetworkConfig::tiny();
  c.output_stride = 2;
  c.decoder_channels = {8};  // needs two upsampling layers
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("ablation variants differ in exactly one switch") {
  const NetworkConfig full;
  const auto no_se = ablation_variant(full, parse_ablation("no_se"));
  const auto no_focal = ablation_variant(full, parse_ablation("no_focal"));
  const auto base = ablation_variant(full, parse_ablation("baseline"));
  CHECK_FALSE(no_se.use_se);
  CHECK(no_se.use_focal);
  CHECK(no_focal.use_se);
  CHECK_FALSE(no_focal.use_focal);
  CHECK_FALSE(base.use_se);
  CHECK_FALSE(base.use_focal);
  auto restored = no_se;
  restored.use_se = true;
  CHECK(restored == full);
  CHECK_THROWS_AS(parse_ablation("no_bn"), ConfigError);
  CHECK(ablation_name(parse_ablation("none")) == "full");
}

TEST_CASE("excitation width") {
  CHECK(se_hidden_width(64) == 4);
  CHECK(se_hidden_width(8) == 1);
  CHECK(se_hidden_width(128, 16) == 8);
}

TEST_CASE("output geometry") {
  Detector<double> tiny(NetworkConfig::tiny(), 1);
  const auto y = tiny.forward_logits(random_input<double>({2, 1, 16, 16, 16}, 2), NormMode::Train);
  CHECK(y.shape() == Shape{2, 15, 4, 4, 4});
  CHECK(tiny.grid_extent(32) == 8);
  CHECK_THROWS_AS(tiny.grid_extent(20), ShapeError);
  CHECK_THROWS_AS(tiny.forward_logits(random_input<double>({1, 1, 16, 16, 12}, 3), NormMode::Eval), ShapeError);
  CHECK_THROWS_AS(tiny.forward_logits(random_input<double>({1, 2, 16, 16, 16}, 3), NormMode::Eval), ShapeError);

  Detector<float> full(NetworkConfig{}, 1);
  CHECK(full.forward(random_input<float>({1, 1, 32, 32, 32}, 4)).shape() == Shape{1, 15, 8, 8, 8});
}

TEST_CASE("forward applies the sigmoid only to classification channels") {
  Detector<double> net(NetworkConfig::tiny(), 5);
  const auto x = random_input<double>({1, 1, 16, 16, 16}, 6);
  const auto logits = net.forward_logits(x, NormMode::Eval);
  const auto probs = net.forward(x, NormMode::Eval);
  const std::size_t sp = 64;
  for (std::size_t ch = 0; ch < 15; ++ch) {
    const double z = logits.data()[ch * sp + 7], p = probs.data()[ch * sp + 7];
    if (ch % 5 == 0) {
      CHECK(p == doctest::Approx(1.0 / (1.0 + std::exp(-z))));
    } else {
      CHECK(p == z);
    }
  }
}

TEST_CASE("head starts near the prior probability") {
  Detector<double> net(NetworkConfig::tiny(), 7);
  const auto p = net.forward(random_input<double>({1, 1, 16, 16, 16}, 8), NormMode::Eval);
  double mean = 0;
  std::size_t n = 0;
  for (std::size_t ch = 0; ch < 15; ch += 5)
    for (std::size_t q = 0; q < 64; ++q, ++n) mean += p.data()[ch * 64 + q];
  mean /= static_cast<double>(n);
  CHECK(mean == doctest::Approx(1.0 / (1.0 + std::exp(4.6))).epsilon(0.2));
}

TEST_CASE("parameter naming and the SE switch") {
  Detector<double> with_se(NetworkConfig::tiny(), 0);
  auto cfg = NetworkConfig::tiny();
  cfg.use_se = false;
  Detector<double> without(cfg, 0);
  const auto names = parameter_names(with_se);
  CHECK(names.count("stem.conv.weight"));
  CHECK(names.count("head.bias"));
  CHECK(names.count("encoder.stage1.block0.proj.weight"));
  CHECK(names.count("encoder.stage0.block0.se.w1"));
  CHECK(names.count("decoder.layer0.up.weight"));
  for (const auto& n : parameter_names(without)) CHECK(n.find(".se.") == std::string::npos);
  CHECK(without.parameter_count() < with_se.parameter_count());
}

TEST_CASE("state round trip is bit-exact") {
  Detector<float> a(NetworkConfig::tiny(), 11);
  const auto x = random_input<float>({2, 1, 16, 16, 16}, 12);
  a.forward_logits(x, NormMode::Train);  // move the running statistics
  const CheckpointFile file{"{}", a.state()};
  const auto decoded = decode_checkpoint(encode_checkpoint(file));
  Detector<float> b(NetworkConfig::tiny(), 99);
  b.load_state(decoded.arrays);
  const auto ya = a.forward(x), yb = b.forward(x);
  CHECK(std::equal(ya.data().begin(), ya.data().end(), yb.data().begin()));

  auto missing = decoded.arrays;
  missing.erase("head.weight");
  CHECK_THROWS_AS(b.load_state(missing), ConfigError);
  auto extra = decoded.arrays;
  extra["bogus"] = StoredArray{{1}, {0.0}};
  CHECK_THROWS_AS(b.load_state(extra), ConfigError);
  auto reshaped = decoded.arrays;
  reshaped["head.bias"] = StoredArray{{3}, {0.0, 0.0, 0.0}};
  CHECK_THROWS(b.load_state(reshaped));
}

TEST_CASE("outputs shift with the input by whole grid cells") {
  // Deepest stride equals the output stride, so a shift of S voxels moves
  // the output by exactly one cell. Zero padding only matches an infinite
  // zero background while the blob's receptive field stays inside the
  // volume, so the blob is small and the volume large.
  NetworkConfig c;
  c.encoder_channels = {4, 8};
  c.blocks_per_stage = 1;
  c.decoder_channels = {8};
  c.output_stride = 4;
  c.se_reduction = 4;
  Detector<double> net(c, 3);
  const std::size_t E = 64, S = 4;
  const auto blob = [&](double cx) {
    std::vector<double> v(E * E * E, 0.0);
    for (std::size_t z = 0; z < E; ++z)
      for (std::size_t y = 0; y < E; ++y)
        for (std::size_t x = 0; x < E; ++x) {
          const double d2 = (x - cx) * (x - cx) + (y - 31.0) * (y - 31.0) + (z - 32.0) * (z - 32.0);
          v[(z * E + y) * E + x] = std::exp(-d2 / 4.0) * (d2 < 9 ? 1.0 : 0.0);
        }
    return Tensor<double>({1, 1, E, E, E}, std::move(v));
  };
  const auto y0 = net.forward(blob(28.0), NormMode::Eval);
  const auto y1 = net.forward(blob(28.0 + S), NormMode::Eval);
  const std::size_t G = E / S;
  double err = 0;
  for (std::size_t ch = 0; ch < 15; ++ch)
    for (std::size_t z = 0; z < G; ++z)
      for (std::size_t y = 0; y < G; ++y)
        for (std::size_t x = 0; x + 1 < G; ++x) {
          const double a = y0.data()[((ch * G + z) * G + y) * G + x];
          const double b = y1.data()[((ch * G + z) * G + y) * G + x + 1];
          err = std::max(err, std::abs(a - b));
        }
  CHECK(err < 1e-12);
}
