#include <doctest.h>

#include <cmath>

#include "ellip/autodiff.hpp"
#include "ellip/complex_ad.hpp"
#include "ellip/gradcheck_suite.hpp"
#include "ellip/rng.hpp"
#include "oracles.hpp"

using namespace ellip::ad;

TEST_CASE("derivative of x*x at 3 is 6") {
  Tape t;
  Var x = t.variable(Tensor::scalar(3.0));
  Var y = x * x;
  t.backward(y);
  CHECK(y.item() == 9.0);
  CHECK(x.grad()[0] == 6.0);
}

TEST_CASE("reduce_mean spreads 1/n") {
  Tape t;
  Var x = t.variable(Tensor(2, 5, 1.5));
  t.backward(reduce_mean(x));
  for (double g : x.grad().values()) CHECK(g == doctest::Approx(0.1).epsilon(1e-15));
}

TEST_CASE("broadcast gradients reduce over the broadcast axis") {
  Tape t;
  Var row = t.variable(Tensor(1, 3, 2.0));
  Var col = t.variable(Tensor(4, 1, 1.0));
  Var m = t.constant(Tensor(4, 3, 1.0));
  t.backward(reduce_sum(m * row + col));
  for (double g : row.grad().values()) CHECK(g == 4.0);
  for (double g : col.grad().values()) CHECK(g == 3.0);
}

TEST_CASE("matmul matches a naive product") {
  ellip::Rng rng(1);
  Tensor a(7, 5), b(5, 3);
  for (double& v : a.values()) v = rng.uniform(-1, 1);
  for (double& v : b.values()) v = rng.uniform(-1, 1);
  Tape t;
  const Tensor& c = matmul(t.constant(a), t.constant(b)).value();
  const auto ref = oracle::naive_matmul({a.values().begin(), a.values().end()},
                                        {b.values().begin(), b.values().end()}, 7, 5, 3);
  for (std::size_t i = 0; i < ref.size(); ++i) CHECK(std::fabs(c[i] - ref[i]) < 1e-14);
}

TEST_CASE("group_matmul equals per-group products") {
  ellip::Rng rng(2);
  Tensor a(6, 4), b(10, 4);
  for (double& v : a.values()) v = rng.uniform(-1, 1);
  for (double& v : b.values()) v = rng.uniform(-1, 1);
  Tape t;
  const Tensor& c = group_matmul(t.constant(a), t.constant(b), 2, true).value();
  REQUIRE(c.rows() == 6);
  REQUIRE(c.cols() == 5);
  for (std::size_t g = 0; g < 2; ++g)
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 5; ++j) {
        double s = 0;
        for (std::size_t p = 0; p < 4; ++p) s += a(g * 3 + i, p) * b(g * 5 + j, p);
        CHECK(std::fabs(c(g * 3 + i, j) - s) < 1e-14);
      }
}

TEST_CASE("softmax rows sum to one and ignore a constant shift") {
  ellip::Rng rng(3);
  Tensor x(5, 8);
  for (double& v : x.values()) v = rng.uniform(-20, 20);
  Tensor shifted = x;
  for (double& v : shifted.values()) v += 123.0;
  Tape t;
  const Tensor& p = softmax_rows(t.constant(x)).value();
  const Tensor& q = softmax_rows(t.constant(shifted)).value();
  for (std::size_t r = 0; r < 5; ++r) {
    double s = 0;
    for (std::size_t c = 0; c < 8; ++c) {
      s += p(r, c);
      CHECK(std::fabs(p(r, c) - q(r, c)) < 1e-12);
    }
    CHECK(std::fabs(s - 1.0) < 1e-12);
  }
}

TEST_CASE("affine_norm normalizes each row") {
  Tape t;
  Tensor x(2, 4);
  for (std::size_t i = 0; i < 8; ++i) x[i] = static_cast<double>(i * i);
  const Tensor& y = affine_norm(t.constant(x), t.constant(Tensor(1, 4, 1.0)), t.constant(Tensor(1, 4, 0.0)), 0.0).value();
  for (std::size_t r = 0; r < 2; ++r) {
    double m = 0, v = 0;
    for (std::size_t c = 0; c < 4; ++c) m += y(r, c);
    m /= 4;
    for (std::size_t c = 0; c < 4; ++c) v += (y(r, c) - m) * (y(r, c) - m);
    CHECK(std::fabs(m) < 1e-15);
    CHECK(std::fabs(v / 4 - 1.0) < 1e-12);
  }
}

TEST_CASE("smooth_positive is the identity above one and positive below") {
  Tape t;
  Tensor x(1, 5);
  x[0] = -30;
  x[1] = 0;
  x[2] = 1;
  x[3] = 1.5;
  x[4] = 90;
  const Tensor& y = smooth_positive(t.constant(x)).value();
  CHECK(y[0] > 0.0);
  CHECK(y[1] == doctest::Approx(std::exp(-1.0)));
  CHECK(y[2] == 1.0);
  CHECK(y[3] == 1.5);
  CHECK(y[4] == 90.0);
}

TEST_CASE("shape and domain errors are raised at construction") {
  Tape t;
  CHECK_THROWS_AS(matmul(t.constant(Tensor(2, 3)), t.constant(Tensor(2, 3))), ShapeError);
  CHECK_THROWS_AS(add(t.constant(Tensor(2, 3)), t.constant(Tensor(3, 2))), ShapeError);
  CHECK_THROWS_AS(sqrt(t.constant(-1.0)), DomainError);
  CHECK_THROWS_AS(div(t.constant(1.0), t.constant(0.0)), DomainError);
  CHECK_THROWS_AS(reshape(t.constant(Tensor(2, 3)), 4, 2), ShapeError);
  CHECK_THROWS_AS(t.backward(t.constant(Tensor(2, 2))), ShapeError);
}

TEST_CASE("replay is bit-identical and backward is linear") {
  auto run = [](double alpha, double beta) {
    Tape t;
    Tensor v(3, 3);
    for (std::size_t i = 0; i < 9; ++i) v[i] = 0.1 * static_cast<double>(i) - 0.3;
    Var x = t.variable(v);
    Var f = reduce_sum(sin(x) * exp(x));
    Var g = reduce_mean(atan(x * x));
    t.backward(f * alpha + g * beta);
    return x.grad();
  };
  CHECK(run(1.0, 0.0) == run(1.0, 0.0));
  const Tensor a = run(1.0, 0.0), b = run(0.0, 1.0), ab = run(2.0, 3.0);
  for (std::size_t i = 0; i < 9; ++i) CHECK(std::fabs(ab[i] - (2.0 * a[i] + 3.0 * b[i])) < 1e-15);
}

TEST_CASE("grad_check accepts correct and flags wrong gradients") {
  const GradCheckReport ok = grad_check([](Tape&, Var x) { return reduce_sum(x * x); }, Tensor::scalar(1.0));
  CHECK(ok.pass);
  CHECK(std::fabs(ok.entries[0].analytic - ok.entries[0].numeric) / 2.0 < 1e-8);

  // relu at a kink disagrees with the central difference
  const GradCheckReport kink = grad_check([](Tape&, Var x) { return reduce_sum(relu(x)); }, Tensor::scalar(0.0));
  CHECK_FALSE(kink.pass);

  const GradCheckReport nonfinite =
      grad_check([](Tape&, Var x) { return reduce_sum(sqrt(x)); }, Tensor::scalar(0.0));
  CHECK_FALSE(nonfinite.pass);
}

TEST_CASE("complex helpers") {
  Tape t;
  const DualComplex one = complex_exp(complex_constant(t, {0.0, 0.0}));
  CHECK(complex_value(one) == std::complex<double>(1.0, 0.0));
  const DualComplex z = complex_constant(t, {0.3, -1.7});
  const auto q = complex_value(complex_div(z, z));
  CHECK(std::fabs(q.real() - 1.0) < 1e-15);
  CHECK(std::fabs(q.imag()) < 1e-15);
  CHECK_THROWS_AS(complex_div(z, complex_constant(t, {0.0, 0.0})), DomainError);

  Tensor re(3, 1, 1.0), im(3, 1, 0.0);
  re[1] = 0.0;
  DivGuard guard;
  const DualComplex r = complex_div(complex_constant(t, {1.0, 0.0}), complex_constant(t, re, im), &guard);
  CHECK(guard.excluded() == 1);
  CHECK(guard.mask[1] == 0.0);
  CHECK(std::isfinite(r.re.value()[1]));
}

TEST_CASE("complex_div gradient against finite differences") {
  ellip::Rng rng(4);
  for (int i = 0; i < 50; ++i) {
    Tensor p(1, 4);
    for (double& v : p.values()) v = rng.uniform(0.5, 2.0) * (rng.uniform() < 0.5 ? -1 : 1);
    const GradCheckReport rep = grad_check(
        [](Tape& tp, Var x) {
          auto pick = [&](std::size_t k) {
            Tensor s(4, 1);
            s[k] = 1.0;
            return matmul(x, tp.constant(s));
          };
          return complex_div({pick(0), pick(1)}, {pick(2), pick(3)}).re;
        },
        p, 1e-6, 1e-6, 1e-10);
    CHECK(rep.pass);
  }
}

TEST_CASE("default gradient suite passes") {
  SuiteOptions opt;
  opt.points = 20;
  for (const auto& r : run_gradcheck_suite(opt)) {
    INFO(r.name << " " << r.first_failure);
    CHECK(r.pass());
  }
}
