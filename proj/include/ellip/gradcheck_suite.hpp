#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace ellip::ad {

struct SuiteCaseResult {
  std::string name;
  std::size_t points = 0;
  std::size_t failed_points = 0;
  std::size_t coordinates = 0;
  double max_abs_error = 0.0;
  double max_rel_error = 0.0;
  std::string first_failure;

  bool pass() const { return failed_points == 0 && points > 0; }
};

struct SuiteOptions {
  std::size_t points = 100;
  std::uint64_t seed = 0;
  double step = 1e-6;
  double rtol = 1e-5;
  double atol = 1e-8;
};

/// Central-difference checks of every tape primitive, the complex helpers
/// and the reconstruction-loss graph, each at `points` random inputs.
std::vector<SuiteCaseResult> run_gradcheck_suite(const SuiteOptions& options = {});

std::string suite_report(const std::vector<SuiteCaseResult>& results);

}  // namespace ellip::ad
