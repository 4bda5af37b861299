// SPDX-License-Identifier: MIT
#pragma once

#include "qkdcone/channels.hpp"
#include "qkdcone/matfun.hpp"

#include <random>

namespace qkdtest {

using namespace qkdcone;
using CM = CMat<double>;
using RV = RVec<double>;

inline CM random_complex(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols) {
  std::normal_distribution<double> nd;
  CM m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = {nd(rng), nd(rng)};
  return m;
}

inline CM random_hermitian(std::mt19937_64& rng, Eigen::Index n) { return hermitize<double>(random_complex(rng, n, n)); }

// Positive definite with eigenvalues bounded away from zero, unit trace.
inline CM random_state(std::mt19937_64& rng, Eigen::Index n, double floor = 0.05) {
  const CM a = random_complex(rng, n, n);
  CM m = a * a.adjoint() / double(n) + floor * CM::Identity(n, n);
  return hermitize<double>(CM(m / m.trace().real()));
}

inline KrausMap<double> random_kraus(std::mt19937_64& rng, Eigen::Index in, Eigen::Index out, int count) {
  std::vector<CM> ops;
  for (int i = 0; i < count; ++i) ops.push_back(random_complex(rng, out, in) / std::sqrt(double(count * in)));
  return KrausMap<double>(std::move(ops));
}

inline double rel_err(const CM& a, const CM& b) { return (a - b).norm() / std::max(1.0, b.norm()); }
inline double rel_err(const RV& a, const RV& b) { return (a - b).norm() / std::max(1.0, b.norm()); }

}  // namespace qkdtest
