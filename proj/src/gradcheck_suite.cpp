#include "ellip/gradcheck_suite.hpp"

#include <cmath>
#include <cstdio>
#include <functional>

#include "ellip/autodiff.hpp"
#include "ellip/complex_ad.hpp"
#include "ellip/loss.hpp"
#include "ellip/optics.hpp"
#include "ellip/rng.hpp"

namespace ellip::ad {

namespace {

Tensor random_tensor(Rng& rng, std::size_t rows, std::size_t cols, double lo, double hi) {
  Tensor t(rows, cols);
  for (double& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

// Magnitude in [lo, hi] with a random sign.
Tensor signed_tensor(Rng& rng, std::size_t rows, std::size_t cols, double lo, double hi) {
  Tensor t(rows, cols);
  for (double& v : t.values()) v = (rng.uniform() < 0.5 ? -1.0 : 1.0) * rng.uniform(lo, hi);
  return t;
}

// Contract with fixed random weights so every output entry matters.
Var weighted_sum(Tape& tape, Var y, Rng& rng) {
  return reduce_sum(y * tape.constant(random_tensor(rng, y.rows(), y.cols(), -1.0, 1.0)));
}

struct Case {
  std::string name;
  // Builds the point and the function for one random draw.
  std::function<std::pair<Tensor, TapedFunction>(Rng&)> draw;
};

template <typename F>
Case unary(std::string name, double lo, double hi, F op, bool signed_draw = false) {
  return {name, [=](Rng& rng) {
            Tensor x = signed_draw ? signed_tensor(rng, 3, 4, lo, hi) : random_tensor(rng, 3, 4, lo, hi);
            const std::uint64_t wseed = rng.next();
            TapedFunction f = [=](Tape& t, Var v) {
              Rng w(wseed);
              return weighted_sum(t, op(v), w);
            };
            return std::make_pair(std::move(x), f);
          }};
}

// x on the left (full shape) and on the right as a broadcast row.
template <typename F>
std::vector<Case> binary(const std::string& name, double lo, double hi, F op, bool signed_rhs = false) {
  std::vector<Case> out;
  out.push_back({name + "/lhs", [=](Rng& rng) {
                   Tensor x = random_tensor(rng, 3, 4, lo, hi);
                   Tensor other = signed_rhs ? signed_tensor(rng, 1, 4, 0.5, 2.0)
                                             : random_tensor(rng, 1, 4, lo, hi);
                   const std::uint64_t wseed = rng.next();
                   TapedFunction f = [=](Tape& t, Var v) {
                     Rng w(wseed);
                     return weighted_sum(t, op(v, t.constant(other)), w);
                   };
                   return std::make_pair(std::move(x), f);
                 }});
  out.push_back({name + "/rhs-broadcast", [=](Rng& rng) {
                   Tensor x = signed_rhs ? signed_tensor(rng, 1, 4, 0.5, 2.0)
                                         : random_tensor(rng, 1, 4, lo, hi);
                   Tensor other = random_tensor(rng, 3, 4, lo, hi);
                   const std::uint64_t wseed = rng.next();
                   TapedFunction f = [=](Tape& t, Var v) {
                     Rng w(wseed);
                     return weighted_sum(t, op(t.constant(other), v), w);
                   };
                   return std::make_pair(std::move(x), f);
                 }});
  return out;
}

std::vector<Case> primitive_cases() {
  std::vector<Case> cases;
  auto append = [&](std::vector<Case> more) {
    for (auto& c : more) cases.push_back(std::move(c));
  };
  append(binary("add", -2.0, 2.0, [](Var a, Var b) { return a + b; }));
  append(binary("sub", -2.0, 2.0, [](Var a, Var b) { return a - b; }));
  append(binary("mul", -2.0, 2.0, [](Var a, Var b) { return a * b; }));
  append(binary("div", -2.0, 2.0, [](Var a, Var b) { return a / b; }, true));
  cases.push_back(unary("neg", -2.0, 2.0, [](Var a) { return -a; }));
  cases.push_back(unary("exp", -2.0, 2.0, [](Var a) { return exp(a); }));
  cases.push_back(unary("sqrt", 0.2, 3.0, [](Var a) { return sqrt(a); }));
  cases.push_back(unary("sin", -4.0, 4.0, [](Var a) { return sin(a); }));
  cases.push_back(unary("cos", -4.0, 4.0, [](Var a) { return cos(a); }));
  cases.push_back(unary("atan", -3.0, 3.0, [](Var a) { return atan(a); }));
  cases.push_back(unary("relu", 0.05, 2.0, [](Var a) { return relu(a); }, true));
  cases.push_back(unary("square", -2.0, 2.0, [](Var a) { return square(a); }));
  cases.push_back(unary("scale", -2.0, 2.0, [](Var a) { return a * -1.7; }));
  cases.push_back(unary("add_scalar", -2.0, 2.0, [](Var a) { return a + 0.3; }));
  cases.push_back(unary("smooth_positive", -3.0, 4.0, [](Var a) { return smooth_positive(a); }));
  cases.push_back(unary("reduce_mean", -2.0, 2.0, [](Var a) { return reduce_mean(a) * a; }));
  cases.push_back(unary("reduce_sum", -2.0, 2.0, [](Var a) { return reduce_sum(a) * a; }));
  cases.push_back(unary("softmax_rows", -2.0, 2.0, [](Var a) { return softmax_rows(a); }));
  cases.push_back(unary("reshape", -2.0, 2.0, [](Var a) { return reshape(a, 2, 6) * reshape(a, 2, 6); }));

  cases.push_back({"matmul/lhs", [](Rng& rng) {
                     Tensor x = random_tensor(rng, 3, 4, -1.0, 1.0);
                     Tensor b = random_tensor(rng, 4, 5, -1.0, 1.0);
                     const std::uint64_t wseed = rng.next();
                     TapedFunction f = [=](Tape& t, Var v) {
                       Rng w(wseed);
                       return weighted_sum(t, matmul(v, t.constant(b)), w);
                     };
                     return std::make_pair(std::move(x), f);
                   }});
  cases.push_back({"matmul/rhs", [](Rng& rng) {
                     Tensor x = random_tensor(rng, 4, 5, -1.0, 1.0);
                     Tensor a = random_tensor(rng, 3, 4, -1.0, 1.0);
                     const std::uint64_t wseed = rng.next();
                     TapedFunction f = [=](Tape& t, Var v) {
                       Rng w(wseed);
                       return weighted_sum(t, matmul(t.constant(a), v), w);
                     };
                     return std::make_pair(std::move(x), f);
                   }});
  for (bool transpose : {false, true}) {
    const std::string suffix = transpose ? "/transposed" : "";
    // two groups: a is (2*3, 4); b is (2*5, 4) transposed or (2*4, 5)
    cases.push_back({"group_matmul/lhs" + suffix, [transpose](Rng& rng) {
                       Tensor x = random_tensor(rng, 6, 4, -1.0, 1.0);
                       Tensor b = transpose ? random_tensor(rng, 10, 4, -1.0, 1.0)
                                            : random_tensor(rng, 8, 5, -1.0, 1.0);
                       const std::uint64_t wseed = rng.next();
                       TapedFunction f = [=](Tape& t, Var v) {
                         Rng w(wseed);
                         return weighted_sum(t, group_matmul(v, t.constant(b), 2, transpose), w);
                       };
                       return std::make_pair(std::move(x), f);
                     }});
    cases.push_back({"group_matmul/rhs" + suffix, [transpose](Rng& rng) {
                       Tensor x = transpose ? random_tensor(rng, 10, 4, -1.0, 1.0)
                                            : random_tensor(rng, 8, 5, -1.0, 1.0);
                       Tensor a = random_tensor(rng, 6, 4, -1.0, 1.0);
                       const std::uint64_t wseed = rng.next();
                       TapedFunction f = [=](Tape& t, Var v) {
                         Rng w(wseed);
                         return weighted_sum(t, group_matmul(t.constant(a), v, 2, transpose), w);
                       };
                       return std::make_pair(std::move(x), f);
                     }});
  }
  cases.push_back({"affine_norm/x", [](Rng& rng) {
                     Tensor x = random_tensor(rng, 3, 6, -2.0, 2.0);
                     Tensor g = random_tensor(rng, 1, 6, 0.5, 1.5);
                     Tensor b = random_tensor(rng, 1, 6, -0.5, 0.5);
                     const std::uint64_t wseed = rng.next();
                     TapedFunction f = [=](Tape& t, Var v) {
                       Rng w(wseed);
                       return weighted_sum(t, affine_norm(v, t.constant(g), t.constant(b)), w);
                     };
                     return std::make_pair(std::move(x), f);
                   }});
  cases.push_back({"affine_norm/gamma", [](Rng& rng) {
                     Tensor x = random_tensor(rng, 1, 6, 0.5, 1.5);
                     Tensor in = random_tensor(rng, 3, 6, -2.0, 2.0);
                     Tensor b = random_tensor(rng, 1, 6, -0.5, 0.5);
                     const std::uint64_t wseed = rng.next();
                     TapedFunction f = [=](Tape& t, Var v) {
                       Rng w(wseed);
                       return weighted_sum(t, affine_norm(t.constant(in), v, t.constant(b)), w);
                     };
                     return std::make_pair(std::move(x), f);
                   }});
  cases.push_back({"affine_norm/beta", [](Rng& rng) {
                     Tensor x = random_tensor(rng, 1, 6, -0.5, 0.5);
                     Tensor in = random_tensor(rng, 3, 6, -2.0, 2.0);
                     Tensor g = random_tensor(rng, 1, 6, 0.5, 1.5);
                     const std::uint64_t wseed = rng.next();
                     TapedFunction f = [=](Tape& t, Var v) {
                       Rng w(wseed);
                       return weighted_sum(t, affine_norm(t.constant(in), t.constant(g), v), w);
                     };
                     return std::make_pair(std::move(x), f);
                   }});
  return cases;
}

// Splits a (rows, 2) leaf into the real and imaginary columns of a complex.
DualComplex as_complex(Tape& t, Var x) {
  Tensor pick_re(2, 1), pick_im(2, 1);
  pick_re[0] = 1.0;
  pick_im[1] = 1.0;
  return {matmul(x, t.constant(pick_re)), matmul(x, t.constant(pick_im))};
}

Var complex_weighted(Tape& t, const DualComplex& z, Rng& w) {
  return weighted_sum(t, z.re, w) + weighted_sum(t, z.im, w);
}

std::vector<Case> complex_cases() {
  std::vector<Case> cases;
  cases.push_back({"complex_div", [](Rng& rng) {
                     Tensor x = random_tensor(rng, 3, 2, -2.0, 2.0);
                     Tensor nre = signed_tensor(rng, 3, 1, 0.5, 2.0);
                     Tensor nim = random_tensor(rng, 3, 1, -1.0, 1.0);
                     const std::uint64_t wseed = rng.next();
                     TapedFunction f = [=](Tape& t, Var v) {
                       Rng w(wseed);
                       const DualComplex z = as_complex(t, v);
                       const DualComplex den = complex_constant(t, nre, nim);
                       return complex_weighted(t, complex_div(z, den), w) +
                              complex_weighted(t, complex_div(den, complex_add_real(z, 5.0)), w);
                     };
                     return std::make_pair(std::move(x), f);
                   }});
  cases.push_back({"complex_exp", [](Rng& rng) {
                     Tensor x = random_tensor(rng, 3, 2, -2.0, 2.0);
                     const std::uint64_t wseed = rng.next();
                     TapedFunction f = [=](Tape& t, Var v) {
                       Rng w(wseed);
                       return complex_weighted(t, complex_exp(as_complex(t, v)), w);
                     };
                     return std::make_pair(std::move(x), f);
                   }});
  cases.push_back({"complex_mul", [](Rng& rng) {
                     Tensor x = random_tensor(rng, 3, 2, -2.0, 2.0);
                     const std::uint64_t wseed = rng.next();
                     TapedFunction f = [=](Tape& t, Var v) {
                       Rng w(wseed);
                       const DualComplex z = as_complex(t, v);
                       return complex_weighted(t, complex_mul(z, complex_sub(z, complex_scale(z, 0.5))), w);
                     };
                     return std::make_pair(std::move(x), f);
                   }});
  cases.push_back({"complex_sqrt_decaying", [](Rng& rng) {
                     // w = 1 - (s / N)^2 for random film indices N = n + ik
                     Tensor x(3, 2);
                     for (std::size_t r = 0; r < 3; ++r) {
                       x(r, 0) = rng.uniform(1.0, 5.0);
                       x(r, 1) = rng.uniform(0.01, 5.0);
                     }
                     const double s = std::sin(optics::deg_to_rad(rng.uniform(40.0, 80.0)));
                     const std::uint64_t wseed = rng.next();
                     TapedFunction f = [=](Tape& t, Var v) {
                       Rng w(wseed);
                       const DualComplex n = as_complex(t, v);
                       const DualComplex q = complex_div(complex_constant(t, {s * s, 0.0}), complex_mul(n, n));
                       const DualComplex arg{1.0 - q.re, -q.im};
                       return complex_weighted(t, complex_sqrt_decaying(arg, n), w);
                     };
                     return std::make_pair(std::move(x), f);
                   }});
  return cases;
}

// Random film and substrate at a random wavelength; the measured (psi, delta)
// come from a different random film so the loss is generically non-zero.
loss::KnownBatch random_known(Rng& rng, std::size_t rows, double theta) {
  Tensor n3(rows, 1), k3(rows, 1), lam(rows, 1), psi(rows, 1), delta(rows, 1);
  for (std::size_t r = 0; r < rows; ++r) {
    n3[r] = rng.uniform(1.4, 4.5);
    k3[r] = rng.uniform(0.0, 4.0);
    lam[r] = rng.uniform(380.0, 1000.0);
    const optics::LayerStack s{rng.uniform(1.2, 4.0), rng.uniform(0.0, 2.0), rng.uniform(1.0, 150.0),
                               n3[r], k3[r]};
    const auto pd = optics::forward(s, {theta, 1.0, 0.0, lam[r]});
    psi[r] = pd.psi;
    delta[r] = pd.delta;
  }
  return {n3, k3, lam, psi, delta};
}

std::vector<Case> loss_cases() {
  std::vector<Case> cases;
  cases.push_back({"recon_loss/physical", [](Rng& rng) {
                     const std::size_t rows = 4;
                     const double theta = 50.0 + 10.0 * static_cast<double>(rng.index(3));
                     Tensor x(rows, 3);
                     for (std::size_t r = 0; r < rows; ++r) {
                       x(r, 0) = rng.uniform(1.2, 4.0);
                       x(r, 1) = rng.uniform(0.0, 3.0);
                       x(r, 2) = rng.uniform(1.0, 150.0);
                     }
                     const loss::KnownBatch known = random_known(rng, rows, theta);
                     TapedFunction f = [=](Tape& t, Var v) {
                       Tensor pick(3, 1);
                       Var cols[3];
                       for (std::size_t c = 0; c < 3; ++c) {
                         pick.fill(0.0);
                         pick[c] = 1.0;
                         cols[c] = matmul(v, t.constant(pick));
                       }
                       return loss::recon_loss_physical(cols[0], cols[1], cols[2], known,
                                                        {theta, 1.0, 0.0})
                           .loss;
                     };
                     return std::make_pair(std::move(x), f);
                   }});
  cases.push_back({"recon_loss/normalized", [](Rng& rng) {
                     const std::size_t rows = 4;
                     data::NormStats norm;
                     norm.targets[0] = {2.2, 0.7, false};
                     norm.targets[1] = {0.8, 0.9, false};
                     norm.targets[2] = {48.0, 27.0, false};
                     // k2 stays positive; d reaches below 1 nm into the smooth floor
                     Tensor x(rows, 3);
                     for (std::size_t r = 0; r < rows; ++r) {
                       x(r, 0) = rng.uniform(-1.2, 1.5);
                       x(r, 1) = rng.uniform(-0.8, 1.5);
                       x(r, 2) = rng.uniform(-2.0, 1.5);
                     }
                     const loss::KnownBatch known = random_known(rng, rows, 70.0);
                     TapedFunction f = [=](Tape& t, Var v) {
                       Tensor pick(3, 1);
                       std::array<Var, 3> cols;
                       for (std::size_t c = 0; c < 3; ++c) {
                         pick.fill(0.0);
                         pick[c] = 1.0;
                         cols[c] = matmul(v, t.constant(pick));
                       }
                       return loss::recon_loss(cols, norm, known, {}).loss;
                     };
                     return std::make_pair(std::move(x), f);
                   }});
  return cases;
}

SuiteCaseResult run_case(const Case& c, const SuiteOptions& opt) {
  SuiteCaseResult res;
  res.name = c.name;
  Rng rng(derive_seed(opt.seed, c.name));
  for (std::size_t p = 0; p < opt.points; ++p) {
    auto [point, f] = c.draw(rng);
    const GradCheckReport rep = grad_check(f, point, opt.step, opt.rtol, opt.atol);
    ++res.points;
    res.coordinates += rep.entries.size();
    for (const auto& e : rep.entries) res.max_abs_error = std::max(res.max_abs_error, e.abs_error);
    res.max_rel_error = std::max(res.max_rel_error, rep.max_rel_error);
    if (!rep.pass) {
      if (res.failed_points == 0) res.first_failure = "point " + std::to_string(p) + ": " + rep.summary();
      ++res.failed_points;
    }
  }
  return res;
}

}  // namespace

std::vector<SuiteCaseResult> run_gradcheck_suite(const SuiteOptions& options) {
  std::vector<Case> cases = primitive_cases();
  for (auto& c : complex_cases()) cases.push_back(std::move(c));
  for (auto& c : loss_cases()) cases.push_back(std::move(c));
  std::vector<SuiteCaseResult> out;
  out.reserve(cases.size());
  for (const auto& c : cases) out.push_back(run_case(c, options));
  return out;
}

std::string suite_report(const std::vector<SuiteCaseResult>& results) {
  std::string out;
  char buf[256];
  for (const auto& r : results) {
    std::snprintf(buf, sizeof buf, "%-28s %s points=%zu failed=%zu max_abs=%.2e max_rel=%.2e\n",
                  r.name.c_str(), r.pass() ? "ok  " : "FAIL", r.points, r.failed_points,
                  r.max_abs_error, r.max_rel_error);
    out += buf;
    if (!r.pass() && !r.first_failure.empty()) out += "  " + r.first_failure + "\n";
  }
  return out;
}

}  // namespace ellip::ad
