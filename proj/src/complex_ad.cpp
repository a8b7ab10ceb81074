#include "ellip/complex_ad.hpp"

#include <algorithm>
#include <cmath>

namespace ellip::ad {

namespace {

Var constant_like(Var ref, Tensor t) { return ref.tape()->constant(std::move(t)); }

std::size_t broadcast_rows(const Tensor& a, const Tensor& b) {
  return std::max(a.rows(), b.rows());
}

double at_row(const Tensor& t, std::size_t r) { return t.rows() == 1 ? t[0] : t[r]; }

}  // namespace

std::size_t DivGuard::excluded() const {
  std::size_t n = 0;
  for (double m : mask.values()) n += m == 0.0 ? 1 : 0;
  return n;
}

DualComplex complex_constant(Tape& tape, std::complex<double> z) {
  return {tape.constant(z.real()), tape.constant(z.imag())};
}

DualComplex complex_constant(Tape& tape, Tensor re, Tensor im) {
  return {tape.constant(std::move(re)), tape.constant(std::move(im))};
}

DualComplex complex_add(DualComplex a, DualComplex b) { return {a.re + b.re, a.im + b.im}; }

DualComplex complex_sub(DualComplex a, DualComplex b) { return {a.re - b.re, a.im - b.im}; }

DualComplex complex_mul(DualComplex a, DualComplex b) {
  return {a.re * b.re - a.im * b.im, a.re * b.im + a.im * b.re};
}

DualComplex complex_scale(DualComplex a, double s) { return {a.re * s, a.im * s}; }

DualComplex complex_add_real(DualComplex a, double s) { return {a.re + s, a.im}; }

DualComplex complex_div(DualComplex a, DualComplex b, DivGuard* guard) {
  Var den = square(b.re) + square(b.im);
  const Tensor& dv = den.value();
  const double eps = guard ? guard->eps : kDivEpsilon;

  Tensor keep(dv.rows(), dv.cols(), 1.0);
  std::size_t bad = 0;
  for (std::size_t i = 0; i < dv.size(); ++i)
    if (!(dv[i] > eps)) {
      keep[i] = 0.0;
      ++bad;
    }

  Var re_num = a.re * b.re + a.im * b.im;
  Var im_num = a.im * b.re - a.re * b.im;
  if (bad == 0) return {re_num / den, im_num / den};
  if (guard == nullptr) throw DomainError("complex division by |b|^2 <= 1e-30");

  Tensor fill(dv.rows(), dv.cols());
  for (std::size_t i = 0; i < dv.size(); ++i) fill[i] = 1.0 - keep[i];
  Var keep_v = constant_like(den, keep);
  Var safe_den = den * keep_v + constant_like(den, fill);

  if (guard->mask.size() == 0) guard->mask = keep;
  else if (guard->mask.same_shape(keep))
    for (std::size_t i = 0; i < keep.size(); ++i) guard->mask[i] *= keep[i];
  else throw ShapeError("division guard reused with a different batch shape");

  return {re_num * keep_v / safe_den, im_num * keep_v / safe_den};
}

DualComplex complex_exp(DualComplex z) {
  Var m = exp(z.re);
  return {m * cos(z.im), m * sin(z.im)};
}

DualComplex complex_sqrt_decaying(DualComplex w, DualComplex n) {
  const Tensor& a = w.re.value();
  const Tensor& b = w.im.value();
  const std::size_t rows =
      std::max(broadcast_rows(a, b), broadcast_rows(n.re.value(), n.im.value()));
  const std::size_t cols = 1;

  // |a| and sign(b) enter as per-row constants chosen from the primal.
  Tensor sign_a(rows, cols), sign_b(rows, cols), use_a(rows, cols), use_b(rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    const double ar = at_row(a, r), br = at_row(b, r);
    if (ar == 0.0 && br == 0.0) throw DomainError("complex sqrt at the origin is not differentiable");
    const bool right = ar >= 0.0;
    sign_a[r] = right ? 1.0 : -1.0;
    sign_b[r] = br >= 0.0 ? 1.0 : -1.0;
    use_a[r] = right ? 1.0 : 0.0;
    use_b[r] = right ? 0.0 : sign_b[r];
  }
  Var modulus = sqrt(square(w.re) + square(w.im));
  Var u = sqrt((modulus + w.re * constant_like(w.re, sign_a)) * 0.5);
  Var q = w.im / (u * 2.0);
  // a >= 0: (u, q);  a < 0: (sign_b q, sign_b u)
  Var ma = constant_like(u, use_a);
  Var mb = constant_like(u, use_b);
  DualComplex root{u * ma + q * mb, q * ma + u * mb};

  const Tensor& rr = root.re.value();
  const Tensor& ri = root.im.value();
  const Tensor& nr = n.re.value();
  const Tensor& ni = n.im.value();
  Tensor flip(rows, cols, 1.0);
  bool any = false;
  for (std::size_t r = 0; r < rows; ++r) {
    const double im = at_row(nr, r) * at_row(ri, r) + at_row(ni, r) * at_row(rr, r);
    if (im < 0.0) {
      flip[r] = -1.0;
      any = true;
    }
  }
  if (!any) return root;
  Var f = constant_like(u, flip);
  return {root.re * f, root.im * f};
}

std::complex<double> complex_value(const DualComplex& z, std::size_t row) {
  return {at_row(z.re.value(), row), at_row(z.im.value(), row)};
}

}  // namespace ellip::ad
