#include "ellip/optics.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

namespace ellip::optics {

namespace {

constexpr double kPi = std::numbers::pi;

bool is_zero(Complex z) { return z.real() == 0.0 && z.imag() == 0.0; }

}  // namespace

void LayerStack::validate() const {
  if (!(n2 > 0.0) || !(n3 > 0.0) || !(k2 >= 0.0) || !(k3 >= 0.0) || !(d >= 0.0) ||
      !std::isfinite(d)) {
    std::ostringstream os;
    os << "invalid layer stack (n2=" << n2 << ", k2=" << k2 << ", d=" << d << ", n3=" << n3
       << ", k3=" << k3 << ")";
    throw OpticsError(OpticsErrc::InvalidStack, os.str());
  }
}

void ExperimentConfig::validate() const {
  if (!(theta1_deg > 0.0 && theta1_deg < 90.0))
    throw OpticsError(OpticsErrc::InvalidConfig, "angle of incidence must lie in (0, 90) degrees");
  if (!(n1 > 0.0) || !(k1 >= 0.0))
    throw OpticsError(OpticsErrc::InvalidConfig, "ambient index must satisfy n1 > 0, k1 >= 0");
  if (!(lambda > 0.0) || !std::isfinite(lambda))
    throw OpticsError(OpticsErrc::InvalidWavelength, "wavelength must be positive");
}

double deg_to_rad(double deg) { return deg * (kPi / 180.0); }
double rad_to_deg(double rad) { return rad * (180.0 / kPi); }

Complex snell_cos(Complex n_in, Complex n_out, Complex cos_in) {
  if (is_zero(n_out))
    throw OpticsError(OpticsErrc::DegenerateMedium, "refraction into a medium with |N| = 0");
  const Complex ratio = n_in / n_out;
  const Complex sin_in_sq = 1.0 - cos_in * cos_in;
  Complex c = std::sqrt(1.0 - ratio * ratio * sin_in_sq);
  if ((n_out * c).imag() < 0.0) c = -c;
  return c;
}

Complex fresnel_rp(Complex n_up, Complex n_down, Complex cos_up, Complex cos_down) {
  const Complex a = n_down * cos_up;
  const Complex b = n_up * cos_down;
  if (is_zero(a + b))
    throw OpticsError(OpticsErrc::TotalInternalDegeneracy, "r_p denominator vanishes");
  return (a - b) / (a + b);
}

Complex fresnel_rs(Complex n_up, Complex n_down, Complex cos_up, Complex cos_down) {
  const Complex a = n_up * cos_up;
  const Complex b = n_down * cos_down;
  if (is_zero(a + b))
    throw OpticsError(OpticsErrc::TotalInternalDegeneracy, "r_s denominator vanishes");
  return (a - b) / (a + b);
}

Complex phase_beta(double d, double lambda, Complex n2, Complex cos2) {
  if (!(lambda > 0.0))
    throw OpticsError(OpticsErrc::InvalidWavelength, "wavelength must be positive");
  return 2.0 * kPi * (d / lambda) * n2 * cos2;
}

Complex stack_r(Complex r12, Complex r23, Complex beta) {
  const Complex phase = std::exp(Complex(0.0, 2.0) * beta);
  const Complex den = 1.0 + r12 * r23 * phase;
  if (is_zero(den))
    throw OpticsError(OpticsErrc::ResonantDegeneracy, "stack denominator vanishes");
  return (r12 + r23 * phase) / den;
}

Complex reflectance_ratio(const LayerStack& stack, const ExperimentConfig& cfg) {
  stack.validate();
  cfg.validate();
  const Complex n1 = cfg.ambient();
  const Complex n2(stack.n2, stack.k2);
  const Complex n3(stack.n3, stack.k3);
  const Complex cos1(std::cos(deg_to_rad(cfg.theta1_deg)), 0.0);
  const Complex cos2 = snell_cos(n1, n2, cos1);
  const Complex cos3 = snell_cos(n1, n3, cos1);

  const Complex beta = phase_beta(stack.d, cfg.lambda, n2, cos2);
  const Complex rpp = stack_r(fresnel_rp(n1, n2, cos1, cos2), fresnel_rp(n2, n3, cos2, cos3), beta);
  const Complex rss = stack_r(fresnel_rs(n1, n2, cos1, cos2), fresnel_rs(n2, n3, cos2, cos3), beta);
  if (is_zero(rss)) throw OpticsError(OpticsErrc::UndefinedRho, "r_ss vanishes; rho undefined");
  return rpp / rss;
}

PsiDelta psi_delta_from_rho(Complex rho) {
  PsiDelta out;
  out.psi = rad_to_deg(std::atan(std::abs(rho)));
  out.delta = rad_to_deg(std::arg(rho));
  if (out.delta <= -180.0) out.delta = 180.0;
  return out;
}

Complex rho_from_psi_delta(double psi_deg, double delta_deg) {
  const double t = std::tan(deg_to_rad(psi_deg));
  const double a = deg_to_rad(delta_deg);
  return {t * std::cos(a), t * std::sin(a)};
}

PsiDelta forward(const LayerStack& stack, const ExperimentConfig& cfg) {
  return psi_delta_from_rho(reflectance_ratio(stack, cfg));
}

double thickness_period(double n2, const ExperimentConfig& cfg) {
  const double s = cfg.n1 * std::sin(deg_to_rad(cfg.theta1_deg)) / n2;
  const double c2 = 1.0 - s * s;
  if (!(c2 > 0.0))
    throw OpticsError(OpticsErrc::DegenerateMedium, "no real refraction cosine for this film");
  return cfg.lambda / (2.0 * n2 * std::sqrt(c2));
}

}  // namespace ellip::optics
