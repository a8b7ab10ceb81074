#pragma once

#include "ellip/autodiff.hpp"

namespace fixture {

// Three records in normalized target space with hand-picked errors.
//   errors  n2: 0.01, 0, -0.125   k2: 0.5, -0.25, 0   d: 0, 0.5, 0.03
//   threshold 0.05 -> accuracy 2/3, 1/3, 2/3
//   MAE = 1.415 / 9
//   SSE = 0.579125, SST = 2 + 2 + 2 -> R^2 = 1 - 0.579125 / 6
struct MetricsCase {
  ellip::ad::Tensor pred{3, 3};
  ellip::ad::Tensor truth{3, 3};
  double threshold = 0.05;
  double accuracy[3] = {2.0 / 3.0, 1.0 / 3.0, 2.0 / 3.0};
  double mae = 1.415 / 9.0;
  double r2 = 1.0 - 0.579125 / 6.0;
};

inline MetricsCase metrics_case() {
  MetricsCase m;
  const double truth[3][3] = {{0, 0, 0}, {1, 1, 1}, {2, 2, -1}};
  const double err[3][3] = {{0.01, 0.5, 0}, {0, -0.25, 0.5}, {-0.125, 0, 0.03}};
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) {
      m.truth(r, c) = truth[r][c];
      m.pred(r, c) = truth[r][c] + err[r][c];
    }
  return m;
}

}  // namespace fixture
