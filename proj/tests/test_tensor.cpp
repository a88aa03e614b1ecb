#include <cmath>
#include <limits>

#include "doctest.h"
#include "seedet/error.hpp"
#include "seedet/ops.hpp"
#include "seedet/tensor.hpp"

using namespace seedet;

TEST_CASE("shape helpers") {
  CHECK(shape_numel({}) == 1);
  CHECK(shape_numel({2, 3, 4}) == 24);
  CHECK(shape_numel({2, 0, 4}) == 0);
  CHECK(shape_str({2, 3}) == "[2,3]");
}

TEST_CASE("construction validates value count") {
  CHECK_THROWS_AS(Tensor<double>({2, 2}, std::vector<double>{1, 2, 3}), ShapeError);
  Tensor<double> t({2, 3}, 1.5);
  CHECK(t.numel() == 6);
  CHECK(t.rank() == 2);
  CHECK(t.dim(1) == 3);
  CHECK_THROWS_AS(t.dim(2), ShapeError);
  CHECK(Tensor<double>::scalar(4.0).item() == 4.0);
  CHECK_THROWS_AS(t.item(), ShapeError);
}

TEST_CASE("copies share storage, clone does not") {
  auto a = Tensor<double>::parameter({2}, {1, 2});
  Tensor<double> b = a;
  b.mutable_data()[0] = 7;
  CHECK(a.data()[0] == 7);
  auto c = a.clone();
  c.mutable_data()[0] = 9;
  CHECK(a.data()[0] == 7);
  CHECK_FALSE(c.requires_grad());
}

TEST_CASE("only leaves are mutable") {
  auto a = Tensor<double>::parameter({2}, {1, 2});
  auto b = scale(a, 2.0);
  CHECK_FALSE(b.is_leaf());
  CHECK_THROWS_AS(b.mutable_data(), Error);
  CHECK_THROWS_AS(b.set_requires_grad(false), Error);
}

TEST_CASE("backward of a small expression") {
  // L = sum(a * b + a) -> dL/da = b + 1, dL/db = a
  auto a = Tensor<double>::parameter({3}, {1, 2, 3});
  auto b = Tensor<double>::parameter({3}, {4, 5, 6});
  auto loss = sum(add(mul(a, b), a));
  CHECK(loss.item() == doctest::Approx(1 * 4 + 2 * 5 + 3 * 6 + 6));
  backward(loss);
  CHECK(a.grad()[0] == 5);
  CHECK(a.grad()[2] == 7);
  CHECK(b.grad()[1] == 2);
}

TEST_CASE("leaf gradients accumulate, intermediates reset") {
  auto a = Tensor<double>::parameter({2}, {1, -1});
  auto loss = sum(scale(a, 3.0));
  backward(loss);
  backward(loss);
  CHECK(a.grad()[0] == 6);
  a.zero_grad();
  backward(loss);
  CHECK(a.grad()[1] == 3);
}

TEST_CASE("shared subexpressions receive every path") {
  // y = x * x used twice: L = sum(y + y) -> dL/dx = 4x
  auto x = Tensor<double>::parameter({2}, {1.5, -2});
  auto y = mul(x, x);
  backward(sum(add(y, y)));
  CHECK(x.grad()[0] == doctest::Approx(6.0));
  CHECK(x.grad()[1] == doctest::Approx(-8.0));
}

TEST_CASE("trace lists producers before consumers") {
  auto x = Tensor<double>::parameter({2}, {1, 2});
  auto y = relu(x);
  auto z = add(y, x);
  auto loss = sum(z);
  auto rec = trace(loss);
  REQUIRE(rec.ops.size() == 3);
  CHECK(std::string(rec.ops.front()->op) == "relu");
  CHECK(std::string(rec.ops.back()->op) == "sum");
}

TEST_CASE("backward preconditions") {
  auto x = Tensor<double>::parameter({2}, {1, 2});
  CHECK_THROWS_AS(backward(scale(x, 2.0)), ShapeError);
  Tensor<double> c({2}, 1.0);
  CHECK_THROWS_AS(backward(sum(c)), Error);
  CHECK_THROWS_AS(backward(Tensor<double>()), Error);
}

TEST_CASE("no-grad mode records nothing") {
  auto x = Tensor<double>::parameter({2}, {1, 2});
  CHECK(grad_mode_enabled());
  {
    NoGradGuard g;
    CHECK_FALSE(grad_mode_enabled());
    auto y = scale(x, 2.0);
    CHECK_FALSE(y.requires_grad());
    {
      NoGradGuard nested;
    }
    CHECK_FALSE(grad_mode_enabled());
  }
  CHECK(grad_mode_enabled());
}

TEST_CASE("non-finite results are hard errors") {
  const double big = std::numeric_limits<double>::max();
  auto x = Tensor<double>::parameter({1}, {big});
  CHECK_THROWS_AS(mul(x, x), NumericError);
  CHECK_THROWS_AS(scale(x, 10.0), NumericError);
}

TEST_CASE("float tensors run the same graph") {
  auto a = Tensor<float>::parameter({2}, {0.5f, -0.25f});
  backward(sum(sigmoid(a)));
  const float s = 1.0f / (1.0f + std::exp(-0.5f));
  CHECK(a.grad()[0] == doctest::Approx(s * (1 - s)));
}
