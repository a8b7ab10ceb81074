#pragma once

#include <array>
#include <span>

#include "ellip/complex_ad.hpp"
#include "ellip/dataset.hpp"
#include "ellip/optics.hpp"

namespace ellip::loss {

using ad::Tape;
using ad::Tensor;
using ad::Var;

struct LossWeights {
  double fit = 1.0;
  double recon = 1.0;

  void validate() const;
  bool operator==(const LossWeights&) const = default;
};

/// Measured side of a batch: substrate constants, wavelength and (psi, delta),
/// each a (batch, 1) column in physical units.
struct KnownBatch {
  Tensor n3, k3, lambda, psi, delta;

  std::size_t size() const { return lambda.rows(); }
  static KnownBatch from_records(std::span<const data::EllipsometricRecord> records);
  static KnownBatch single(double n3, double k3, double lambda, double psi, double delta);
};

/// Ambient index and angle of incidence shared by a batch.
struct Geometry {
  double theta1_deg = 70.0;
  double n1 = 1.0;
  double k1 = 0.0;

  static Geometry from_manifest(const data::Manifest& m) { return {m.theta1_deg, m.n1, m.k1}; }
};

/// Predicted rho = rpp / rss for film (n2, k2, d) in physical units over
/// the known substrate. Every division goes through `guard`.
ad::DualComplex predicted_rho(Var n2, Var k2, Var d, const KnownBatch& known, const Geometry& geo,
                              ad::DivGuard* guard);

struct ReconResult {
  Var loss;
  std::size_t excluded = 0;
  std::size_t batch = 0;
};

class ExclusionError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline constexpr double kMaxExcludedFraction = 0.01;

/// 1/2 [(Re rho_hat - Re rho)^2 + (Im rho_hat - Im rho)^2] averaged over the
/// batch, with rho = tan(psi) exp(i delta). Rows hitting the division guard
/// are dropped from the mean; more than 1% dropped throws ExclusionError.
ReconResult recon_loss_physical(Var n2, Var k2, Var d, const KnownBatch& known,
                                const Geometry& geo);

/// Same loss from normalized head outputs: targets are denormalized with
/// `norm` inside the graph; k2 passes through relu (a negative extinction
/// would be a gain medium) and d through smooth_positive. With
/// `thickness_only` the n2 and k2 heads enter as constants, so the loss
/// only sends gradient through d.
ReconResult recon_loss(const std::array<Var, 3>& pred, const data::NormStats& norm,
                       const KnownBatch& known, const Geometry& geo, bool thickness_only = false);

/// Mean over the three squared errors, then over the batch. `targets` is
/// (batch, 3) in normalized space.
Var fit_loss(const std::array<Var, 3>& pred, const Tensor& targets);

struct TotalLoss {
  Var total;
  double fit = 0.0;
  double recon = 0.0;
  bool fit_evaluated = false;
  bool recon_evaluated = false;
  std::size_t excluded = 0;
};

/// w_fit * fit + w_recon * recon. A term with zero weight is not built.
TotalLoss total_loss(const std::array<Var, 3>& pred, const Tensor& targets, const KnownBatch& known,
                     const data::NormStats& norm, const Geometry& geo, const LossWeights& weights,
                     bool recon_thickness_only = false);

}  // namespace ellip::loss
