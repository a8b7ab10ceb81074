#pragma once

#include <complex>
#include <vector>

#include "ellip/autodiff.hpp"

namespace ellip::ad {

/// Complex value carried as two real nodes so every adjoint is an adjoint
/// of real arithmetic.
struct DualComplex {
  Var re;
  Var im;
};

/// Division guard: |b|^2 <= eps marks the row as excluded instead of
/// throwing. `mask` holds 1 for kept rows and 0 for excluded rows.
struct DivGuard {
  double eps = 1e-30;
  Tensor mask;

  std::size_t excluded() const;
};

inline constexpr double kDivEpsilon = 1e-30;

DualComplex complex_constant(Tape& tape, std::complex<double> z);
DualComplex complex_constant(Tape& tape, Tensor re, Tensor im);

DualComplex complex_add(DualComplex a, DualComplex b);
DualComplex complex_sub(DualComplex a, DualComplex b);
DualComplex complex_mul(DualComplex a, DualComplex b);
DualComplex complex_scale(DualComplex a, double s);
DualComplex complex_add_real(DualComplex a, double s);

/// a / b. Without a guard, |b|^2 <= kDivEpsilon throws DomainError. With a
/// guard, offending rows produce 0 with zero adjoint and are recorded.
DualComplex complex_div(DualComplex a, DualComplex b, DivGuard* guard = nullptr);

DualComplex complex_exp(DualComplex z);

/// Principal sqrt(w), negated per row where Im(n * sqrt(w)) < 0. The branch
/// is chosen from primal values; on Im(n * sqrt(w)) == 0 the principal
/// branch (and its derivative) is kept.
DualComplex complex_sqrt_decaying(DualComplex w, DualComplex n);

/// Primal values of a DualComplex row.
std::complex<double> complex_value(const DualComplex& z, std::size_t row = 0);

}  // namespace ellip::ad
