#include <omp.h>

#include <cmath>
#include <random>

#include "doctest.h"
#include "seedet/error.hpp"
#include "seedet/gradcheck.hpp"
#include "seedet/ops.hpp"

using namespace seedet;

namespace {

std::vector<double> randn(std::size_t n, std::mt19937_64& rng) {
  std::normal_distribution<double> d(0.0, 1.0);
  std::vector<double> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

Tensor<double> rand_tensor(Shape s, std::mt19937_64& rng) {
  auto n = shape_numel(s);
  return Tensor<double>(std::move(s), randn(n, rng));
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// Direct seven-loop cross-correlation.
std::vector<double> naive_conv(const Tensor<double>& x, const Tensor<double>& w, int s, int p) {
  const long N = static_cast<long>(x.dim(0)), C = static_cast<long>(x.dim(1));
  const long D = static_cast<long>(x.dim(2)), H = static_cast<long>(x.dim(3)), W = static_cast<long>(x.dim(4));
  const long O = static_cast<long>(w.dim(0)), K = static_cast<long>(w.dim(2));
  const long Do = (D + 2 * p - K) / s + 1, Ho = (H + 2 * p - K) / s + 1, Wo = (W + 2 * p - K) / s + 1;
  std::vector<double> y(static_cast<std::size_t>(N * O * Do * Ho * Wo), 0.0);
  const auto xv = x.data(), wv = w.data();
  for (long n = 0; n < N; ++n)
    for (long o = 0; o < O; ++o)
      for (long z = 0; z < Do; ++z)
        for (long yy = 0; yy < Ho; ++yy)
          for (long xx = 0; xx < Wo; ++xx) {
            double acc = 0;
            for (long c = 0; c < C; ++c)
              for (long a = 0; a < K; ++a)
                for (long b = 0; b < K; ++b)
                  for (long e = 0; e < K; ++e) {
                    const long iz = z * s - p + a, iy = yy * s - p + b, ix = xx * s - p + e;
                    if (iz < 0 || iy < 0 || ix < 0 || iz >= D || iy >= H || ix >= W) continue;
                    acc += xv[static_cast<std::size_t>((((n * C + c) * D + iz) * H + iy) * W + ix)] *
                           wv[static_cast<std::size_t>((((o * C + c) * K + a) * K + b) * K + e)];
                  }
            y[static_cast<std::size_t>((((n * O + o) * Do + z) * Ho + yy) * Wo + xx)] = acc;
          }
  return y;
}

const std::optional<Tensor<double>> kNoBias;

}  // namespace

TEST_CASE("conv3d matches the direct loop") {
  std::mt19937_64 rng(1);
  struct Case {
    Shape x;
    std::size_t cout, k;
    int stride, pad;
  };
  for (const Case& c : {Case{{2, 3, 5, 6, 7}, 4, 3, 1, 1}, Case{{1, 2, 8, 8, 8}, 3, 3, 2, 1},
                        Case{{1, 5, 6, 6, 6}, 2, 1, 2, 0}, Case{{2, 1, 7, 5, 6}, 2, 3, 1, 0},
                        Case{{1, 2, 9, 9, 9}, 2, 5, 2, 2}}) {
    auto x = rand_tensor(c.x, rng);
    auto w = rand_tensor({c.cout, c.x[1], c.k, c.k, c.k}, rng);
    const auto ref = naive_conv(x, w, c.stride, c.pad);
    const auto y = conv3d(x, w, kNoBias, c.stride, c.pad);
    REQUIRE(y.numel() == ref.size());
    double err = 0;
    for (std::size_t i = 0; i < ref.size(); ++i) err = std::max(err, std::abs(y.data()[i] - ref[i]));
    CHECK(err < 1e-12);
  }
}

TEST_CASE("conv3d bias and shape errors") {
  std::mt19937_64 rng(2);
  auto x = rand_tensor({1, 2, 4, 4, 4}, rng);
  auto w = rand_tensor({3, 2, 3, 3, 3}, rng);
  Tensor<double> b({3}, std::vector<double>{1, 2, 3});
  const auto y0 = conv3d(x, w, kNoBias, 1, 1);
  const auto y1 = conv3d(x, w, std::optional<Tensor<double>>(b), 1, 1);
  CHECK(y1.data()[64 * 2 + 5] - y0.data()[64 * 2 + 5] == doctest::Approx(3.0));
  CHECK_THROWS_AS(conv3d(x, rand_tensor({3, 5, 3, 3, 3}, rng), kNoBias, 1, 1), ShapeError);
  CHECK_THROWS_AS(conv3d(rand_tensor({2, 4, 4, 4}, rng), w, kNoBias, 1, 1), ShapeError);
}

TEST_CASE("transposed convolution is the adjoint of convolution") {
  std::mt19937_64 rng(3);
  for (auto [s, p, k] : {std::tuple{1, 1, 3}, std::tuple{2, 0, 2}, std::tuple{2, 1, 3}}) {
    // Input extent chosen so that (D + 2p - k) is divisible by s.
    const std::size_t D = (s == 2 && k == 3) ? 7 : 6;
    auto x = rand_tensor({2, 3, D, D, D}, rng);
    auto w = rand_tensor({4, 3, static_cast<std::size_t>(k), static_cast<std::size_t>(k), static_cast<std::size_t>(k)},
                         rng);
    const auto y = conv3d(x, w, kNoBias, s, p);
    auto r = rand_tensor(y.shape(), rng);
    const auto xt = conv3d_transpose(r, w, kNoBias, s, p);
    REQUIRE(xt.shape() == x.shape());
    const double lhs = dot(y.data(), r.data()), rhs = dot(x.data(), xt.data());
    CHECK(std::abs(lhs - rhs) <= 1e-10 * std::max(1.0, std::abs(lhs)));
  }
}

TEST_CASE("convolution is linear in its input") {
  std::mt19937_64 rng(4);
  auto x1 = rand_tensor({1, 2, 6, 6, 6}, rng), x2 = rand_tensor({1, 2, 6, 6, 6}, rng);
  auto w = rand_tensor({3, 2, 3, 3, 3}, rng);
  const double a = 0.7, b = -1.3;
  const auto lhs = conv3d(add(scale(x1, a), scale(x2, b)), w, kNoBias, 2, 1);
  const auto y1 = conv3d(x1, w, kNoBias, 2, 1), y2 = conv3d(x2, w, kNoBias, 2, 1);
  double err = 0;
  for (std::size_t i = 0; i < lhs.numel(); ++i)
    err = std::max(err, std::abs(lhs.data()[i] - (a * y1.data()[i] + b * y2.data()[i])));
  CHECK(err < 1e-10);
}

TEST_CASE("conv3d output does not depend on the thread count") {
  std::mt19937_64 rng(5);
  std::normal_distribution<float> d;
  std::vector<float> xv(2 * 4 * 12 * 12 * 12), wv(6 * 4 * 27);
  for (auto& v : xv) v = d(rng);
  for (auto& v : wv) v = d(rng);
  auto x = Tensor<float>::parameter({2, 4, 12, 12, 12}, xv);
  auto w = Tensor<float>::parameter({6, 4, 3, 3, 3}, wv);
  const auto run = [&](int threads) {
    omp_set_num_threads(threads);
    x.zero_grad();
    w.zero_grad();
    auto y = conv3d(x, w, std::optional<Tensor<float>>{}, 1, 1);
    backward(sum(mul(y, y)));
    std::vector<float> out(y.data().begin(), y.data().end());
    out.insert(out.end(), w.grad().begin(), w.grad().end());
    out.insert(out.end(), x.grad().begin(), x.grad().end());
    return out;
  };
  const int saved = omp_get_max_threads();
  const auto one = run(1);
  const auto three = run(3);
  omp_set_num_threads(saved);
  CHECK(one == three);
}

TEST_CASE("max_pool3d picks maxima and routes ties to the first element") {
  std::vector<double> v(8, 1.0);
  v[5] = 3.0;
  auto x = Tensor<double>::parameter({1, 1, 2, 2, 2}, v);
  auto y = max_pool3d(x, 2, 2);
  CHECK(y.item() == 3.0);
  backward(sum(y));
  CHECK(x.grad()[5] == 1.0);

  auto t = Tensor<double>::parameter({1, 1, 2, 2, 2}, std::vector<double>(8, 2.0));
  backward(sum(max_pool3d(t, 2, 2)));
  CHECK(t.grad()[0] == 1.0);
  for (std::size_t i = 1; i < 8; ++i) CHECK(t.grad()[i] == 0.0);

  CHECK_THROWS_AS(max_pool3d(Tensor<double>({1, 1, 3, 4, 4}), 2, 2), ShapeError);
}

TEST_CASE("batch_norm statistics") {
  std::mt19937_64 rng(6);
  auto x = rand_tensor({3, 2, 2, 2, 2}, rng);
  Tensor<double> g({2}, 1.0), b({2}, 0.0);
  BatchNormStats<double> st{{0, 0}, {1, 1}};
  auto y = batch_norm(x, g, b, st, NormMode::Train, 0.0, 0.1);
  for (std::size_t c = 0; c < 2; ++c) {
    double m = 0, v = 0, xm = 0, xv = 0;
    for (std::size_t n = 0; n < 3; ++n)
      for (std::size_t q = 0; q < 8; ++q) {
        const std::size_t i = (n * 2 + c) * 8 + q;
        m += y.data()[i];
        v += y.data()[i] * y.data()[i];
        xm += x.data()[i];
      }
    for (std::size_t n = 0; n < 3; ++n)
      for (std::size_t q = 0; q < 8; ++q) {
        const double d = x.data()[(n * 2 + c) * 8 + q] - xm / 24;
        xv += d * d;
      }
    CHECK(m / 24 == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(v / 24 == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(st.running_mean[c] == doctest::Approx(0.1 * xm / 24));
    CHECK(st.running_var[c] == doctest::Approx(0.9 + 0.1 * xv / 23));
  }
  BatchNormStats<double> fixed{{1.0, -1.0}, {4.0, 0.25}};
  auto e = batch_norm(Tensor<double>({1, 2, 1, 1, 2}, std::vector<double>{3, 5, 0, 1}), g, b, fixed, NormMode::Eval,
                      0.0);
  CHECK(e.data()[0] == doctest::Approx(1.0));
  CHECK(e.data()[1] == doctest::Approx(2.0));
  CHECK(e.data()[3] == doctest::Approx(4.0));
  BatchNormStats<double> single{{0}, {1}};
  CHECK_THROWS_AS(batch_norm(Tensor<double>({1, 1, 1, 1, 1}), Tensor<double>({1}, 1.0), Tensor<double>({1}), single,
                             NormMode::Train),
                  ShapeError);
}

TEST_CASE("pooling, dense, concat and channel scaling values") {
  Tensor<double> x({1, 2, 1, 1, 2}, std::vector<double>{1, 3, -2, 6});
  auto g = global_avg_pool(x);
  CHECK(g.shape() == Shape{1, 2});
  CHECK(g.data()[0] == 2.0);
  CHECK(g.data()[1] == 2.0);

  Tensor<double> w({1, 2}, std::vector<double>{0.5, -1});
  Tensor<double> bias({1}, std::vector<double>{0.25});
  auto d = dense(g, w, std::optional<Tensor<double>>(bias));
  CHECK(d.item() == doctest::Approx(0.5 * 2 - 2 + 0.25));

  Tensor<double> s({1, 2}, std::vector<double>{2, 0.5});
  auto u = scale_channels(x, s);
  CHECK(u.data()[1] == 6.0);
  CHECK(u.data()[3] == 3.0);

  auto c = concat_channels(x, u);
  CHECK(c.shape() == Shape{1, 4, 1, 1, 2});
  CHECK(c.data()[4] == 2.0);
  CHECK_THROWS_AS(concat_channels(x, Tensor<double>({1, 1, 1, 1, 3})), ShapeError);
  CHECK_THROWS_AS(add(x, Tensor<double>({1, 2, 1, 2, 1})), ShapeError);
}

TEST_CASE("finite-difference suite") {
  for (const auto& r : run_gradcheck_suite(7)) {
    INFO(r.name << " err " << r.max_error << " skipped " << r.skipped);
    CHECK(r.passed());
  }
}
