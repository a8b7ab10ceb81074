#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "ellip/loss.hpp"

namespace ellip::invert {

/// Parameter order everywhere in this module: (n2, k2, d).
using Params = std::array<double, 3>;

/// Box over (n2, k2, d). An axis with lo == hi is held fixed; at least one
/// axis must be free.
struct Bounds {
  Params lo{1.0, 0.0, 0.0};
  Params hi{5.0, 5.0, 200.0};

  bool contains(const Params& p) const;
  Params project(const Params& p) const;
};

struct FitProblem {
  loss::KnownBatch known;  // a single measured sample
  loss::Geometry geometry;
  Bounds bounds;
  std::size_t starts = 32;
  double tol = 1e-12;
  std::uint64_t seed = 0;
  std::size_t max_iterations = 1000;
  double dedup_radius = 0.02;
  std::size_t workers = 1;

  void validate() const;
  std::array<bool, 3> free_axes() const;

  static FitProblem for_sample(double n3, double k3, double lambda, double psi, double delta,
                               const loss::Geometry& geo = {});
};

struct ResidualValue {
  double value = 0.0;
  bool degenerate = false;
};

inline constexpr double kDegeneratePenalty = 1e10;

/// The reconstruction loss of the problem's sample evaluated at `params`
/// (the same code path as training). A guarded division yields
/// kDegeneratePenalty with `degenerate` set.
ResidualValue residual(const Params& params, const FitProblem& problem);

/// (n2, k2) at unit scale, d divided by 96 nm.
double scaled_distance(const Params& a, const Params& b);

struct Minimum {
  Params params{};
  double residual = 0.0;
  std::size_t start = 0;  // index of the first start that reached it
};

struct FitResult {
  std::vector<Minimum> minima;  // residual ascending, deduplicated
  std::size_t converged_starts = 0;
  std::size_t total_starts = 0;

  bool found() const { return !minima.empty(); }
  std::string report() const;
};

/// Latin-hypercube start points over the free axes (fixed axes at their
/// bound), deterministic in `seed`.
std::vector<Params> latin_hypercube(const Bounds& bounds, std::size_t count, std::uint64_t seed);

/// Damped Gauss-Newton from one start. Returns the final point and its
/// residual.
Minimum refine(const Params& start, const FitProblem& problem);

/// Multi-start least squares; keeps every end point with residual < tol and
/// merges those closer than dedup_radius.
FitResult solve(const FitProblem& problem);

}  // namespace ellip::invert
