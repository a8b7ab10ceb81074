#include "ellip/loss.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace ellip::loss {

using ad::DualComplex;

void LossWeights::validate() const {
  if (!(fit >= 0.0) || !(recon >= 0.0) || !(fit + recon > 0.0))
    throw std::invalid_argument("loss weights must be >= 0 with a positive sum");
}

KnownBatch KnownBatch::from_records(std::span<const data::EllipsometricRecord> records) {
  const std::size_t n = records.size();
  KnownBatch k{Tensor(n, 1), Tensor(n, 1), Tensor(n, 1), Tensor(n, 1), Tensor(n, 1)};
  for (std::size_t i = 0; i < n; ++i) {
    k.n3[i] = records[i].n3;
    k.k3[i] = records[i].k3;
    k.lambda[i] = records[i].lambda;
    k.psi[i] = records[i].psi;
    k.delta[i] = records[i].delta;
  }
  return k;
}

KnownBatch KnownBatch::single(double n3, double k3, double lambda, double psi, double delta) {
  return {Tensor::scalar(n3), Tensor::scalar(k3), Tensor::scalar(lambda), Tensor::scalar(psi),
          Tensor::scalar(delta)};
}

namespace {

DualComplex fresnel(DualComplex a, DualComplex b, ad::DivGuard* guard) {
  // (a - b) / (a + b)
  return ad::complex_div(ad::complex_sub(a, b), ad::complex_add(a, b), guard);
}

DualComplex stack(DualComplex r12, DualComplex r23, DualComplex phase, ad::DivGuard* guard) {
  DualComplex t = ad::complex_mul(r23, phase);
  DualComplex num = ad::complex_add(r12, t);
  DualComplex den = ad::complex_add_real(ad::complex_mul(r12, t), 1.0);
  return ad::complex_div(num, den, guard);
}

}  // namespace

DualComplex predicted_rho(Var n2, Var k2, Var d, const KnownBatch& known, const Geometry& geo,
                          ad::DivGuard* guard) {
  Tape& tape = *n2.tape();
  const std::size_t rows = known.size();
  const optics::Complex n1c(geo.n1, geo.k1);
  const double theta = optics::deg_to_rad(geo.theta1_deg);
  const optics::Complex cos1c(std::cos(theta), 0.0);
  const optics::Complex s1 = n1c * std::sin(theta);

  // substrate side carries no unknowns
  Tensor n3r(rows, 1), n3i(rows, 1), c3r(rows, 1), c3i(rows, 1), wave(rows, 1);
  for (std::size_t r = 0; r < rows; ++r) {
    const optics::Complex n3(known.n3[r], known.k3[r]);
    const optics::Complex c3 = optics::snell_cos(n1c, n3, cos1c);
    n3r[r] = n3.real();
    n3i[r] = n3.imag();
    c3r[r] = c3.real();
    c3i[r] = c3.imag();
    if (!(known.lambda[r] > 0.0)) throw std::invalid_argument("wavelength must be positive");
    wave[r] = 2.0 * std::numbers::pi / known.lambda[r];
  }
  const DualComplex N1 = ad::complex_constant(tape, n1c);
  const DualComplex cos1 = ad::complex_constant(tape, cos1c);
  const DualComplex N3 = ad::complex_constant(tape, n3r, n3i);
  const DualComplex cos3 = ad::complex_constant(tape, c3r, c3i);

  const DualComplex N2{n2, k2};
  const DualComplex ratio_sq =
      ad::complex_div(ad::complex_constant(tape, s1 * s1), ad::complex_mul(N2, N2), guard);
  const DualComplex w{1.0 - ratio_sq.re, -ratio_sq.im};
  const DualComplex cos2 = ad::complex_sqrt_decaying(w, N2);

  const DualComplex n2c1 = ad::complex_mul(N2, cos1);
  const DualComplex n1c2 = ad::complex_mul(N1, cos2);
  const DualComplex n1c1 = ad::complex_mul(N1, cos1);
  const DualComplex n2c2 = ad::complex_mul(N2, cos2);
  const DualComplex n3c2 = ad::complex_mul(N3, cos2);
  const DualComplex n2c3 = ad::complex_mul(N2, cos3);
  const DualComplex n3c3 = ad::complex_mul(N3, cos3);

  const DualComplex rp12 = fresnel(n2c1, n1c2, guard);
  const DualComplex rs12 = fresnel(n1c1, n2c2, guard);
  const DualComplex rp23 = fresnel(n3c2, n2c3, guard);
  const DualComplex rs23 = fresnel(n2c2, n3c3, guard);

  // beta = 2 pi (d / lambda) N2 cos2; round-trip factor exp(i 2 beta)
  const Var k0d = d * tape.constant(wave);
  const DualComplex beta{n2c2.re * k0d, n2c2.im * k0d};
  const DualComplex phase = ad::complex_exp({beta.im * -2.0, beta.re * 2.0});

  const DualComplex rpp = stack(rp12, rp23, phase, guard);
  const DualComplex rss = stack(rs12, rs23, phase, guard);
  return ad::complex_div(rpp, rss, guard);
}

ReconResult recon_loss_physical(Var n2, Var k2, Var d, const KnownBatch& known,
                                const Geometry& geo) {
  Tape& tape = *n2.tape();
  const std::size_t rows = known.size();
  Tensor mr(rows, 1), mi(rows, 1);
  for (std::size_t r = 0; r < rows; ++r) {
    const auto rho = optics::rho_from_psi_delta(known.psi[r], known.delta[r]);
    mr[r] = rho.real();
    mi[r] = rho.imag();
  }
  ad::DivGuard guard;
  const DualComplex rho_hat = predicted_rho(n2, k2, d, known, geo, &guard);
  Var per_sample =
      (ad::square(rho_hat.re - tape.constant(mr)) + ad::square(rho_hat.im - tape.constant(mi))) *
      0.5;

  ReconResult out;
  out.batch = rows;
  out.excluded = guard.excluded();
  if (out.excluded == 0) {
    out.loss = ad::reduce_mean(per_sample);
    return out;
  }
  if (static_cast<double>(out.excluded) > kMaxExcludedFraction * static_cast<double>(rows))
    throw ExclusionError("reconstruction loss: " + std::to_string(out.excluded) + " of " +
                         std::to_string(rows) + " samples hit the division guard");
  const double kept = static_cast<double>(rows - out.excluded);
  out.loss = ad::reduce_sum(per_sample * tape.constant(guard.mask)) * (1.0 / kept);
  return out;
}

ReconResult recon_loss(const std::array<Var, 3>& pred, const data::NormStats& norm,
                       const KnownBatch& known, const Geometry& geo, bool thickness_only) {
  const auto& t = norm.targets;
  Tape& tape = *pred[0].tape();
  const Var z_n2 = thickness_only ? tape.constant(pred[0].value()) : pred[0];
  const Var z_k2 = thickness_only ? tape.constant(pred[1].value()) : pred[1];
  Var n2 = z_n2 * t[0].std + t[0].mean;
  Var k2 = ad::relu(z_k2 * t[1].std + t[1].mean);
  Var d = ad::smooth_positive(pred[2] * t[2].std + t[2].mean);
  return recon_loss_physical(n2, k2, d, known, geo);
}

Var fit_loss(const std::array<Var, 3>& pred, const Tensor& targets) {
  Tape& tape = *pred[0].tape();
  const std::size_t rows = targets.rows();
  if (targets.cols() != 3) throw ad::ShapeError("fit_loss targets must be (batch, 3)");
  Var sum;
  for (std::size_t h = 0; h < 3; ++h) {
    if (pred[h].rows() != rows || pred[h].cols() != 1)
      throw ad::ShapeError("fit_loss prediction shape mismatch");
    Tensor col(rows, 1);
    for (std::size_t r = 0; r < rows; ++r) col[r] = targets(r, h);
    Var sq = ad::square(pred[h] - tape.constant(std::move(col)));
    sum = h == 0 ? sq : sum + sq;
  }
  return ad::reduce_mean(sum * (1.0 / 3.0));
}

TotalLoss total_loss(const std::array<Var, 3>& pred, const Tensor& targets, const KnownBatch& known,
                     const data::NormStats& norm, const Geometry& geo, const LossWeights& weights,
                     bool recon_thickness_only) {
  weights.validate();
  TotalLoss out;
  Var fit, recon;
  if (weights.fit > 0.0) {
    fit = fit_loss(pred, targets);
    out.fit = fit.item();
    out.fit_evaluated = true;
  }
  if (weights.recon > 0.0) {
    const ReconResult r = recon_loss(pred, norm, known, geo, recon_thickness_only);
    recon = r.loss;
    out.recon = recon.item();
    out.recon_evaluated = true;
    out.excluded = r.excluded;
  }
  if (out.fit_evaluated && out.recon_evaluated) out.total = fit * weights.fit + recon * weights.recon;
  else if (out.fit_evaluated) out.total = fit * weights.fit;
  else out.total = recon * weights.recon;
  return out;
}

}  // namespace ellip::loss
