#include <cmath>
#include <random>

#include "csn/errors.hpp"
#include "csn/gradcheck.hpp"
#include "csn/ops.hpp"
#include "csn/tape.hpp"
#include "doctest.h"

using namespace csn;

namespace {

Tensor random_tensor(std::mt19937_64& rng, Shape shape, double lo = -2.0, double hi = 2.0) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> u(lo, hi);
  for (auto& v : t.vec()) v = u(rng);
  return t;
}

}  // namespace

TEST_CASE("tensor construction checks extents") {
  CHECK_THROWS_AS(Tensor({2, 0}), ShapeError);
  CHECK_THROWS_AS(Tensor({2, 2}, std::vector<double>{1, 2, 3}), ShapeError);
  Tensor s = Tensor::scalar(3.5);
  CHECK(s.rank() == 0);
  CHECK(s.item() == 3.5);
  Tensor t({2, 3}, 1.0);
  CHECK(t.numel() == 6);
  CHECK(shape_str(t.shape()) == "[2,3]");
}

TEST_CASE("sub(x, x) is bitwise zero") {
  std::mt19937_64 rng(1);
  Tape t;
  Var x = t.leaf(random_tensor(rng, {3, 4}));
  Tensor z = sub(x, x).value();
  CHECK(z.shape() == Shape{3, 4});
  for (double v : z.vec()) CHECK(std::signbit(v) == false);
  for (double v : z.vec()) CHECK(v == 0.0);
}

TEST_CASE("sigmoid(0) is one half") {
  Tape t;
  CHECK(sigmoid(t.leaf(Tensor::scalar(0.0))).value().item() == 0.5);
  // Stable in both tails.
  CHECK(sigmoid(t.leaf(Tensor::scalar(-800.0))).value().item() == 0.0);
  CHECK(sigmoid(t.leaf(Tensor::scalar(800.0))).value().item() == 1.0);
}

TEST_CASE("conv2d of ones with a 3x3 ones kernel counts taps") {
  Tape t;
  Var x = t.leaf(Tensor({1, 1, 4, 4}, 1.0));
  Var w = t.leaf(Tensor({1, 1, 3, 3}, 1.0));
  Tensor y = conv2d(x, w, std::nullopt, 1, 1).value();
  REQUIRE(y.shape() == Shape{1, 1, 4, 4});
  const double expect[16] = {4, 6, 6, 4, 6, 9, 9, 6, 6, 9, 9, 6, 4, 6, 6, 4};
  for (int i = 0; i < 16; ++i) CHECK(y[i] == expect[i]);
}

TEST_CASE("conv2d matches a nested-loop oracle") {
  std::mt19937_64 rng(7);
  for (auto [stride, pad] : {std::pair<std::size_t, std::size_t>{1, 1}, {2, 1}, {2, 0}, {1, 0}}) {
    const std::size_t B = 2, C = 3, H = 7, W = 6, O = 4, K = 3;
    Tensor xv = random_tensor(rng, {B, C, H, W});
    Tensor wv = random_tensor(rng, {O, C, K, K});
    Tensor bv = random_tensor(rng, {O});
    Tape t;
    Tensor y = conv2d(t.leaf(xv), t.leaf(wv), t.leaf(bv), stride, pad).value();
    const std::size_t OH = (H + 2 * pad - K) / stride + 1, OW = (W + 2 * pad - K) / stride + 1;
    REQUIRE(y.shape() == Shape{B, O, OH, OW});
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t o = 0; o < O; ++o)
        for (std::size_t oy = 0; oy < OH; ++oy)
          for (std::size_t ox = 0; ox < OW; ++ox) {
            double acc = bv[o];
            for (std::size_t c = 0; c < C; ++c)
              for (std::size_t ky = 0; ky < K; ++ky)
                for (std::size_t kx = 0; kx < K; ++kx) {
                  const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(pad);
                  const long ix = static_cast<long>(ox * stride + kx) - static_cast<long>(pad);
                  if (iy < 0 || ix < 0 || iy >= static_cast<long>(H) || ix >= static_cast<long>(W)) continue;
                  acc += xv[((b * C + c) * H + iy) * W + ix] * wv[((o * C + c) * K + ky) * K + kx];
                }
            CHECK(y[((b * O + o) * OH + oy) * OW + ox] == doctest::Approx(acc).epsilon(1e-12));
          }
  }
}

TEST_CASE("broadcasting is limited to the leading axis") {
  Tape t;
  Var a = t.leaf(Tensor({3, 2}, 1.0));
  CHECK(add(a, t.leaf(Tensor({2}, 2.0))).value().shape() == Shape{3, 2});
  CHECK_THROWS_AS(add(a, t.leaf(Tensor({3}, 2.0))), ShapeError);
  CHECK_THROWS_AS(add(a, t.leaf(Tensor({3, 1}, 2.0))), ShapeError);
  CHECK_THROWS_AS(matmul(a, t.leaf(Tensor({3, 2}, 1.0))), ShapeError);
}

TEST_CASE("non-finite results are errors") {
  Tape t;
  CHECK_THROWS_AS(log(t.leaf(Tensor::scalar(0.0))), NumericalError);
  CHECK_THROWS_AS(div(t.leaf(Tensor::scalar(1.0)), t.leaf(Tensor::scalar(0.0))), NumericalError);
}

TEST_CASE("backward on sum(x*x) gives 2x") {
  Tape t;
  Var x = t.leaf(Tensor({3}, std::vector<double>{1, 2, 3}), true);
  t.backward(sum(mul(x, x)));
  Tensor g = t.grad(x);
  CHECK(g[0] == 2.0);
  CHECK(g[1] == 4.0);
  CHECK(g[2] == 6.0);
}

TEST_CASE("backward through sigmoid scaled by 4 at 0 is 1") {
  Tape t;
  Var w = t.leaf(Tensor::scalar(0.0), true);
  t.backward(mul_scalar(sigmoid(w), 4.0));
  CHECK(t.grad(w).item() == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("backward accumulates across calls and zero_grad resets") {
  Tape t;
  Var x = t.leaf(Tensor({2}, std::vector<double>{1, -1}), true);
  Var loss = sum(square(x));
  t.backward(loss);
  t.backward(loss);
  CHECK(t.grad(x)[0] == 4.0);
  CHECK(t.grad(x)[1] == -4.0);
  t.zero_grad();
  CHECK(t.grad(x)[0] == 0.0);
}

TEST_CASE("backward rejects non-scalar losses; disconnected leaves get zero") {
  Tape t;
  Var x = t.leaf(Tensor({2}, 1.0), true);
  Var y = t.leaf(Tensor({2}, 1.0), true);
  CHECK_THROWS_AS(t.backward(square(x)), ShapeError);
  t.backward(sum(x));
  CHECK(t.grad(y)[0] == 0.0);
  CHECK(t.grad(y)[1] == 0.0);
}

TEST_CASE("relu subgradient at 0 is 0") {
  Tape t;
  Var x = t.leaf(Tensor({3}, std::vector<double>{-1, 0, 1}), true);
  t.backward(sum(relu(x)));
  CHECK(t.grad(x)[0] == 0.0);
  CHECK(t.grad(x)[1] == 0.0);
  CHECK(t.grad(x)[2] == 1.0);
}

TEST_CASE("forward values do not depend on gradient recording") {
  std::mt19937_64 rng(3);
  Tensor xv = random_tensor(rng, {2, 2, 6, 6}), wv = random_tensor(rng, {3, 2, 3, 3});
  auto run = [&](bool grad) {
    Tape t;
    Var y = relu(conv2d(t.leaf(xv, grad), t.leaf(wv, grad), std::nullopt, 2, 1));
    return sigmoid(global_avg_pool(y)).value();
  };
  CHECK(run(true) == run(false));
}

TEST_CASE("axis reductions and shape ops") {
  Tape t;
  Tensor v({2, 3}, std::vector<double>{1, 2, 3, 4, 5, 6});
  Var x = t.leaf(v);
  Tensor s0 = sum(x, {0}).value();
  CHECK(s0.shape() == Shape{3});
  CHECK(s0[2] == 9.0);
  Tensor m1 = mean(x, {1}).value();
  CHECK(m1.shape() == Shape{2});
  CHECK(m1[1] == 5.0);
  CHECK(narrow(x, 1, 1, 2).value().vec() == std::vector<double>{2, 3, 5, 6});
  Var parts[] = {x, x};
  CHECK(concat(parts, 0).value().shape() == Shape{4, 3});
  CHECK(reshape(x, {3, 2}).value().vec() == v.vec());
  CHECK_THROWS_AS(reshape(x, {4, 2}), ShapeError);
  CHECK(maximum(x, 3.5).value().vec() == std::vector<double>{3.5, 3.5, 3.5, 4, 5, 6});
  CHECK(minimum(x, 3.5).value().vec() == std::vector<double>{1, 2, 3, 3.5, 3.5, 3.5});
}

TEST_CASE("random conv/relu/dense graph passes finite differences") {
  std::mt19937_64 rng(11);
  std::vector<NamedTensor> params{{"x", random_tensor(rng, {2, 2, 6, 6})},
                                  {"w1", random_tensor(rng, {3, 2, 3, 3}, -0.5, 0.5)},
                                  {"b1", random_tensor(rng, {3})},
                                  {"w2", random_tensor(rng, {4, 3, 3, 3}, -0.5, 0.5)},
                                  {"fc", random_tensor(rng, {4, 2})}};
  auto build = [](Tape&, std::span<const Var> p) {
    Var h = relu(conv2d(p[0], p[1], p[2], 1, 1));
    h = relu(conv2d(h, p[3], std::nullopt, 2, 1));
    return sum(square(matmul(global_avg_pool(h), p[4])));
  };
  GradCheckReport r = grad_check(build, params);
  CHECK(r.passed());
  CHECK(r.max_rel_error() < 1e-4);
}

TEST_CASE("linear regression gradcheck is tight") {
  std::mt19937_64 rng(5);
  Tensor X = random_tensor(rng, {8, 3}), Y = random_tensor(rng, {8, 1});
  std::vector<NamedTensor> params{{"w", random_tensor(rng, {3, 1})}, {"b", random_tensor(rng, {1})}};
  auto build = [X, Y](Tape& t, std::span<const Var> p) {
    return mean(square(sub(add(matmul(t.constant(X), p[0]), p[1]), t.constant(Y))));
  };
  GradCheckReport r = grad_check(build, params);
  CHECK(r.max_rel_error() < 1e-6);
  CHECK(r.total_skipped() == 0);
}

TEST_CASE("gradcheck skips relu kinks") {
  std::vector<NamedTensor> params{{"x", Tensor({3}, std::vector<double>{-1.0, 0.0, 1.0})}};
  GradCheckReport r = grad_check([](Tape&, std::span<const Var> p) { return sum(relu(p[0])); }, params);
  REQUIRE(r.entries.size() == 1);
  CHECK(r.entries[0].skipped == 1);
  CHECK(r.entries[0].checked == 2);
  CHECK(r.passed());
}

TEST_CASE("every differentiable primitive passes finite differences on [-2,2]") {
  std::mt19937_64 rng(21);
  using F = std::function<Var(Var)>;
  std::vector<std::pair<const char*, F>> ops{
      {"sigmoid", sigmoid},
      {"square", square},
      {"relu", relu},
      {"neg", neg},
      {"add_scalar", [](Var x) { return add_scalar(x, 1.5); }},
      {"mul_scalar", [](Var x) { return mul_scalar(x, -0.5); }},
      {"scalar_minus", [](Var x) { return scalar_minus(1.0, x); }},
      {"maximum", [](Var x) { return maximum(x, 0.25); }},
      {"minimum", [](Var x) { return minimum(x, 0.25); }},
      {"log", [](Var x) { return log(add_scalar(square(x), 0.5)); }},
      {"sqrt", [](Var x) { return sqrt(add_scalar(square(x), 0.5)); }},
      {"div", [](Var x) { return div(x, add_scalar(square(x), 1.0)); }},
      {"mean_axes", [](Var x) { return mean(x, {1}); }},
      {"gap", [](Var x) { return global_avg_pool(reshape(x, {1, 2, 2, 5})); }},
  };
  for (auto& [name, f] : ops) {
    CAPTURE(name);
    std::vector<NamedTensor> params{{"x", random_tensor(rng, {4, 5})}};
    Tensor r = random_tensor(rng, {20});
    auto build = [f = f, r](Tape& t, std::span<const Var> p) {
      Var y = f(p[0]);
      return sum(mul(reshape(y, {y.value().numel()}), t.constant(Tensor({y.value().numel()},
                                                                        std::vector<double>(r.vec().begin(), r.vec().begin() + static_cast<long>(y.value().numel()))))));
    };
    CHECK(grad_check(build, params).max_rel_error() < 1e-4);
  }
}
