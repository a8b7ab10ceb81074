// Built-in dispersion tables. These are synthetic but physically shaped
// (Cauchy dielectrics, Drude metals, Lorentz absorbers); they are not
// measured data.

#include <cmath>
#include <complex>
#include <functional>
#include <stdexcept>

#include "ellip/dataset.hpp"

namespace ellip::data {

namespace {

constexpr double kEvNm = 1239.841984;  // hc in eV nm
constexpr double kLambdaLo = 380.0;
constexpr double kLambdaHi = 1000.0;
constexpr double kLambdaStep = 10.0;

using NkFn = std::function<std::pair<double, double>(double lambda_nm)>;

MaterialTable tabulate(std::string name, MaterialRole role, const NkFn& fn) {
  MaterialTable t{std::move(name), role, {}};
  for (double l = kLambdaLo; l <= kLambdaHi + 1e-9; l += kLambdaStep) {
    auto [n, k] = fn(l);
    t.samples.push_back({l, n, k});
  }
  t.validate();
  return t;
}

NkFn cauchy(double a, double b, double k_edge = 0.0, double edge_nm = 380.0,
            double edge_width = 30.0) {
  return [=](double l) {
    const double k = k_edge > 0.0 ? k_edge * std::exp((edge_nm - l) / edge_width) : 0.0;
    return std::pair{a + b / (l * l), k};
  };
}

std::pair<double, double> nk_from_eps(std::complex<double> eps) {
  // Im(N) >= 0 branch for Im(eps) >= 0
  std::complex<double> n = std::sqrt(eps);
  if (n.imag() < 0.0) n = -n;
  return {n.real(), n.imag()};
}

NkFn drude(double eps_inf, double plasma_ev, double gamma_ev) {
  return [=](double l) {
    const double w = kEvNm / l;
    const std::complex<double> eps =
        eps_inf - plasma_ev * plasma_ev / std::complex<double>(w * w, gamma_ev * w);
    return nk_from_eps(eps);
  };
}

NkFn lorentz(double eps_inf, double strength, double center_ev, double gamma_ev) {
  return [=](double l) {
    const double w = kEvNm / l;
    const std::complex<double> eps =
        eps_inf + strength * center_ev * center_ev /
                      std::complex<double>(center_ev * center_ev - w * w, -gamma_ev * w);
    return nk_from_eps(eps);
  };
}

NkFn linear(double n600, double dn, double k600, double dk) {
  return [=](double l) {
    const double s = (l - 600.0) / 400.0;
    return std::pair{n600 + dn * s, k600 + dk * s};
  };
}

}  // namespace

std::vector<MaterialTable> builtin_films() {
  const auto F = MaterialRole::Film;
  return {
      tabulate("SiO2", F, cauchy(1.4500, 3.6e3)),
      tabulate("MgF2", F, cauchy(1.3800, 0.0)),
      tabulate("Al2O3", F, cauchy(1.7500, 8.0e3)),
      tabulate("Si3N4", F, cauchy(1.9800, 1.9e4)),
      tabulate("Ta2O5", F, cauchy(2.0500, 2.6e4, 0.01, 380.0, 25.0)),
      tabulate("TiO2", F, cauchy(2.3500, 5.5e4, 0.05, 380.0, 25.0)),
      tabulate("PMMA", F, cauchy(1.4780, 5.0e3)),
      tabulate("Al", F, drude(1.0, 15.0, 0.6)),
      tabulate("Ag", F, drude(3.7, 9.1, 0.02)),
      tabulate("Cr", F, linear(3.0, 0.6, 3.3, 1.0)),
      tabulate("Ge", F, lorentz(1.0, 15.0, 2.2, 1.5)),
      tabulate("ITO", F, drude(3.8, 1.9, 0.12)),
  };
}

std::vector<MaterialTable> builtin_substrates() {
  const auto S = MaterialRole::Substrate;
  return {
      tabulate("Si", S,
               [](double l) {
                 return std::pair{3.70 + 1.0e5 / (l * l), 0.005 + 5.0 * std::exp((300.0 - l) / 30.0)};
               }),
      tabulate("a-Si", S, lorentz(1.0, 11.0, 3.7, 2.0)),
      tabulate("ITO", S, drude(3.8, 1.9, 0.12)),
      tabulate("SrTiO3", S, cauchy(2.2800, 3.5e4)),
  };
}

const MaterialTable& find_material(const std::vector<MaterialTable>& tables,
                                   const std::string& name) {
  for (const auto& t : tables)
    if (t.name == name) return t;
  throw std::invalid_argument("unknown material: " + name);
}

}  // namespace ellip::data
