// Copyright (c) 2026 the svdseg authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <functional>
#include <random>

#include "svdseg/common.hpp"

namespace svdseg::testutil {

inline Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed,
                            double stddev = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, stddev);
  Matrix m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j) {
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = dist(rng);
  }
  return m;
}

inline Vector random_vector(Eigen::Index n, std::uint64_t seed, double stddev = 1.0) {
  Matrix m = random_matrix(n, 1, seed, stddev);
  return m.col(0);
}

inline double rel_err(double got, double want) {
  const double denom = std::max(std::abs(want), 1e-12);
  return std::abs(got - want) / denom;
}

inline double rel_err(const Matrix& got, const Matrix& want) {
  const double denom = std::max(want.norm(), 1e-12);
  return (got - want).norm() / denom;
}

// Central finite difference of a scalar loss with respect to one coordinate.
inline double central_diff(double* coord, const std::function<double()>& loss, double h = 1e-5) {
  const double orig = *coord;
  *coord = orig + h;
  const double fp = loss();
  *coord = orig - h;
  const double fm = loss();
  *coord = orig;
  return (fp - fm) / (2.0 * h);
}

}  // namespace svdseg::testutil
