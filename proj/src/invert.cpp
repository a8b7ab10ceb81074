#include "ellip/invert.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <stdexcept>
#include <thread>

#include "ellip/rng.hpp"

namespace ellip::invert {

namespace {

constexpr double kScale[3] = {1.0, 1.0, 96.0};

}  // namespace

bool Bounds::contains(const Params& p) const {
  for (std::size_t i = 0; i < 3; ++i)
    if (!(p[i] >= lo[i] && p[i] <= hi[i])) return false;
  return true;
}

Params Bounds::project(const Params& p) const {
  Params q;
  for (std::size_t i = 0; i < 3; ++i) q[i] = std::clamp(p[i], lo[i], hi[i]);
  return q;
}

void FitProblem::validate() const {
  if (known.size() != 1) throw std::invalid_argument("a fit problem holds exactly one sample");
  bool any_free = false;
  for (std::size_t i = 0; i < 3; ++i) {
    if (!std::isfinite(bounds.lo[i]) || !std::isfinite(bounds.hi[i]) || bounds.lo[i] > bounds.hi[i])
      throw std::invalid_argument("bounds must be finite with lo <= hi");
    any_free = any_free || bounds.lo[i] < bounds.hi[i];
  }
  if (!any_free) throw std::invalid_argument("bounds leave no free parameter");
  if (bounds.lo[0] <= 0.0) throw std::invalid_argument("n2 bounds must be positive");
  if (bounds.lo[1] < 0.0) throw std::invalid_argument("k2 bounds must be non-negative");
  if (bounds.lo[2] < 0.0) throw std::invalid_argument("d bounds must be non-negative");
  if (starts < 1) throw std::invalid_argument("starts must be >= 1");
  if (!(tol > 0.0)) throw std::invalid_argument("tol must be > 0");
  if (!(dedup_radius >= 0.0)) throw std::invalid_argument("dedup_radius must be >= 0");
}

std::array<bool, 3> FitProblem::free_axes() const {
  return {bounds.lo[0] < bounds.hi[0], bounds.lo[1] < bounds.hi[1], bounds.lo[2] < bounds.hi[2]};
}

FitProblem FitProblem::for_sample(double n3, double k3, double lambda, double psi, double delta,
                                  const loss::Geometry& geo) {
  FitProblem p;
  p.known = loss::KnownBatch::single(n3, k3, lambda, psi, delta);
  p.geometry = geo;
  return p;
}

ResidualValue residual(const Params& params, const FitProblem& problem) {
  ad::Tape tape;
  try {
    const auto r = loss::recon_loss_physical(tape.constant(params[0]), tape.constant(params[1]),
                                             tape.constant(params[2]), problem.known,
                                             problem.geometry);
    const double v = r.loss.item();
    if (!std::isfinite(v)) return {kDegeneratePenalty, true};
    return {v, false};
  } catch (const loss::ExclusionError&) {
    return {kDegeneratePenalty, true};
  } catch (const ad::DomainError&) {
    return {kDegeneratePenalty, true};
  }
}

double scaled_distance(const Params& a, const Params& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < 3; ++i) {
    const double d = (a[i] - b[i]) / kScale[i];
    s += d * d;
  }
  return std::sqrt(s);
}

std::string FitResult::report() const {
  if (minima.empty())
    return "no solution: 0 of " + std::to_string(total_starts) +
           " starts converged below tolerance\n";
  std::string out = std::to_string(minima.size()) + " minima from " +
                    std::to_string(converged_starts) + " of " + std::to_string(total_starts) +
                    " converged starts\n";
  char buf[160];
  for (const auto& m : minima) {
    std::snprintf(buf, sizeof buf, "n2=%.10g k2=%.10g d=%.10g residual=%.3e\n", m.params[0],
                  m.params[1], m.params[2], m.residual);
    out += buf;
  }
  return out;
}

std::vector<Params> latin_hypercube(const Bounds& bounds, std::size_t count, std::uint64_t seed) {
  std::vector<Params> pts(count);
  Rng rng(derive_seed(seed, "latin-hypercube"));
  for (std::size_t axis = 0; axis < 3; ++axis) {
    std::vector<std::size_t> strata(count);
    for (std::size_t i = 0; i < count; ++i) strata[i] = i;
    rng.shuffle(std::span<std::size_t>(strata));
    const double lo = bounds.lo[axis], width = bounds.hi[axis] - bounds.lo[axis];
    for (std::size_t i = 0; i < count; ++i) {
      const double u = (static_cast<double>(strata[i]) + rng.uniform()) / static_cast<double>(count);
      pts[i][axis] = width > 0.0 ? std::min(bounds.hi[axis], lo + width * u) : lo;
    }
  }
  return pts;
}

namespace {

struct Linearization {
  std::array<double, 2> r{};      // residual vector (Re, Im)
  std::array<Params, 2> jac{};    // d r_i / d p_j in scaled coordinates
  bool ok = false;
};

Linearization linearize(const Params& p, const FitProblem& problem) {
  Linearization out;
  const auto rho = optics::rho_from_psi_delta(problem.known.psi[0], problem.known.delta[0]);
  ad::Tape tape;
  const ad::Var n2 = tape.variable(ad::Tensor::scalar(p[0]));
  const ad::Var k2 = tape.variable(ad::Tensor::scalar(p[1]));
  const ad::Var d = tape.variable(ad::Tensor::scalar(p[2]));
  ad::DivGuard guard;
  ad::DualComplex rho_hat;
  try {
    rho_hat = loss::predicted_rho(n2, k2, d, problem.known, problem.geometry, &guard);
  } catch (const ad::DomainError&) {
    return out;
  }
  if (guard.excluded() > 0) return out;
  out.r = {rho_hat.re.item() - rho.real(), rho_hat.im.item() - rho.imag()};
  const ad::Var comps[2] = {rho_hat.re, rho_hat.im};
  for (std::size_t i = 0; i < 2; ++i) {
    tape.backward(comps[i]);
    const ad::Var vars[3] = {n2, k2, d};
    for (std::size_t j = 0; j < 3; ++j) out.jac[i][j] = vars[j].grad()[0] * kScale[j];
  }
  out.ok = std::isfinite(out.r[0]) && std::isfinite(out.r[1]);
  return out;
}

// Solves A x = b for a small symmetric positive definite A (Cholesky).
bool solve_spd(std::vector<double> a, std::vector<double> b, std::size_t n, std::vector<double>& x) {
  for (std::size_t j = 0; j < n; ++j) {
    double diag = a[j * n + j];
    for (std::size_t k = 0; k < j; ++k) diag -= a[j * n + k] * a[j * n + k];
    if (!(diag > 0.0)) return false;
    const double l = std::sqrt(diag);
    a[j * n + j] = l;
    for (std::size_t i = j + 1; i < n; ++i) {
      double s = a[i * n + j];
      for (std::size_t k = 0; k < j; ++k) s -= a[i * n + k] * a[j * n + k];
      a[i * n + j] = s / l;
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    double s = b[i];
    for (std::size_t k = 0; k < i; ++k) s -= a[i * n + k] * b[k];
    b[i] = s / a[i * n + i];
  }
  x.assign(n, 0.0);
  for (std::size_t i = n; i-- > 0;) {
    double s = b[i];
    for (std::size_t k = i + 1; k < n; ++k) s -= a[k * n + i] * x[k];
    x[i] = s / a[i * n + i];
  }
  return true;
}

}  // namespace

Minimum refine(const Params& start, const FitProblem& problem) {
  const auto free = problem.free_axes();
  std::vector<std::size_t> axes;
  for (std::size_t j = 0; j < 3; ++j)
    if (free[j]) axes.push_back(j);
  const std::size_t n = axes.size();

  Params x = problem.bounds.project(start);
  double fx = residual(x, problem).value;
  double damping = 1e-3;
  for (std::size_t it = 0; it < problem.max_iterations && fx > 1e-32; ++it) {
    const Linearization lin = linearize(x, problem);
    if (!lin.ok) break;
    std::vector<double> jtj(n * n, 0.0), jtr(n, 0.0);
    for (std::size_t a = 0; a < n; ++a) {
      for (std::size_t i = 0; i < 2; ++i) jtr[a] -= lin.jac[i][axes[a]] * lin.r[i];
      for (std::size_t b = 0; b < n; ++b)
        for (std::size_t i = 0; i < 2; ++i) jtj[a * n + b] += lin.jac[i][axes[a]] * lin.jac[i][axes[b]];
    }
    bool accepted = false;
    while (damping < 1e16) {
      std::vector<double> sys = jtj, step;
      for (std::size_t a = 0; a < n; ++a) sys[a * n + a] += damping;
      if (!solve_spd(sys, jtr, n, step)) {
        damping *= 10.0;
        continue;
      }
      Params trial = x;
      for (std::size_t a = 0; a < n; ++a) trial[axes[a]] += step[a] * kScale[axes[a]];
      trial = problem.bounds.project(trial);
      const ResidualValue ft = residual(trial, problem);
      if (!ft.degenerate && ft.value < fx) {
        const bool stalled = scaled_distance(trial, x) < 1e-15;
        x = trial;
        fx = ft.value;
        damping = std::max(damping / 10.0, 1e-12);
        accepted = !stalled;
        break;
      }
      damping *= 10.0;
    }
    if (!accepted) break;
  }
  return {x, fx, 0};
}

FitResult solve(const FitProblem& problem) {
  problem.validate();
  const auto starts = latin_hypercube(problem.bounds, problem.starts, problem.seed);
  std::vector<Minimum> ends(starts.size());

  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i = next++; i < starts.size(); i = next++) {
      ends[i] = refine(starts[i], problem);
      ends[i].start = i;
    }
  };
  const std::size_t workers = std::clamp<std::size_t>(problem.workers, 1, starts.size());
  if (workers == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }

  FitResult result;
  result.total_starts = starts.size();
  std::vector<Minimum> converged;
  for (const auto& m : ends)
    if (m.residual < problem.tol) converged.push_back(m);
  result.converged_starts = converged.size();
  std::stable_sort(converged.begin(), converged.end(),
                   [](const Minimum& a, const Minimum& b) { return a.residual < b.residual; });
  for (const auto& m : converged) {
    const bool duplicate = std::any_of(result.minima.begin(), result.minima.end(), [&](const Minimum& k) {
      return scaled_distance(k.params, m.params) <= problem.dedup_radius;
    });
    if (!duplicate) result.minima.push_back(m);
  }
  return result;
}

}  // namespace ellip::invert
