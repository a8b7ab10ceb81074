#pragma once

#include <complex>
#include <stdexcept>
#include <string>

namespace ellip::optics {

using Complex = std::complex<double>;

enum class OpticsErrc {
  DegenerateMedium,      // |N| = 0
  TotalInternalDegeneracy,  // Fresnel denominator vanishes
  InvalidWavelength,
  ResonantDegeneracy,    // 1 + r12 r23 e^{i2β} vanishes
  UndefinedRho,          // r_ss = 0
  InvalidStack,
  InvalidConfig,
};

class OpticsError : public std::domain_error {
public:
  OpticsError(OpticsErrc code, const std::string& what)
      : std::domain_error(what), code_(code) {}
  OpticsErrc code() const noexcept { return code_; }

private:
  OpticsErrc code_;
};

/// Film on substrate. Film (n2, k2, d) is what an inversion recovers.
struct LayerStack {
  double n2 = 1.0;
  double k2 = 0.0;
  double d = 0.0;  // nm
  double n3 = 1.0;
  double k3 = 0.0;

  void validate() const;
};

struct ExperimentConfig {
  double theta1_deg = 70.0;
  double n1 = 1.0;
  double k1 = 0.0;
  double lambda = 632.8;  // nm, vacuum

  void validate() const;
  Complex ambient() const { return {n1, k1}; }
};

/// Ellipsometric angles in degrees; psi in [0, 90], delta in (-180, 180].
struct PsiDelta {
  double psi = 0.0;
  double delta = 0.0;
};

double deg_to_rad(double deg);
double rad_to_deg(double rad);

/// cos of the refraction angle in the medium N_out, via Snell's law.
/// Principal square root, negated when Im(N_out * cos) < 0 so the
/// transmitted wave decays into an absorbing medium.
Complex snell_cos(Complex n_in, Complex n_out, Complex cos_in);

Complex fresnel_rp(Complex n_up, Complex n_down, Complex cos_up, Complex cos_down);
Complex fresnel_rs(Complex n_up, Complex n_down, Complex cos_up, Complex cos_down);

/// Phase thickness 2π (d/λ) N2 cos θ2.
Complex phase_beta(double d, double lambda, Complex n2, Complex cos2);

/// Film-stack reflection coefficient (r12 + r23 e^{i2β}) / (1 + r12 r23 e^{i2β}).
/// With N = n + ik and Im(N cos θ) >= 0, e^{i2β} is the round-trip factor
/// that decays with film absorption.
Complex stack_r(Complex r12, Complex r23, Complex beta);

/// rpp / rss for the ambient/film/substrate stack.
Complex reflectance_ratio(const LayerStack& stack, const ExperimentConfig& cfg);

/// rho -> (psi, delta) in degrees.
PsiDelta psi_delta_from_rho(Complex rho);

/// tan(psi) exp(i delta) with angles in degrees.
Complex rho_from_psi_delta(double psi_deg, double delta_deg);

PsiDelta forward(const LayerStack& stack, const ExperimentConfig& cfg);

/// Thickness period of a lossless film: λ / (2 n2 cos θ2), cos θ2 real.
double thickness_period(double n2, const ExperimentConfig& cfg);

}  // namespace ellip::optics
