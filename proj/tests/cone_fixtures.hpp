// SPDX-License-Identifier: MIT
#pragma once

#include "test_util.hpp"

#include "qkdcone/renyi_cones.hpp"
#include "qkdcone/std_cones.hpp"

#include <stdexcept>
#include <string>

namespace qkdtest {

inline ReducedConeSpec<double> random_true_spec(std::mt19937_64& rng, Eigen::Index q, Eigen::Index m, double alpha) {
  const Eigen::Index out = std::max(q, m) + 1;
  const auto g = random_kraus(rng, q, out, 2);
  const auto z = random_kraus(rng, m, out, int(out));  // enough Kraus operators for full-rank Z(1)
  return make_true_cone_spec<double>(alpha, facially_reduce_pair<double>(g, z));
}

inline ReducedConeSpec<double> random_fast_spec(std::mt19937_64& rng, Eigen::Index q, double alpha) {
  const Eigen::Index out = 2 * q;
  const auto g = random_kraus(rng, q, out, 2);
  std::vector<CM> pins;
  for (int r = 0; r < 2; ++r) pins.push_back(kron<double>(ket_bra<double>(2, r, r), CM::Identity(q, q)));
  return make_fast_cone_spec<double>(alpha, g, KrausMap<double>(pins));
}

inline RV random_interior(std::mt19937_64& rng, RenyiCone<double>& cone) {
  const auto& sp = cone.spec();
  RV x(cone.dim());
  const CM rho = random_state(rng, sp.q, 0.1) * 1.5;
  svec_into<double>(rho, x.data() + 1);
  CM sigma;
  if (cone.is_true()) {
    sigma = random_state(rng, sp.m, 0.1) * 0.8;
    svec_into<double>(sigma, x.data() + 1 + sp.q * sp.q);
  }
  const double psi = cone.psi_at(rho, sigma);
  std::uniform_real_distribution<double> ud(0.05, 1.0);
  x(0) = -psi + ud(rng) * (1 + psi);
  if (!cone_set_point(cone, x)) throw std::runtime_error("random_interior: point left the cone");
  return x;
}

inline RV random_direction(std::mt19937_64& rng, const RenyiCone<double>& cone, const RV& x) {
  std::normal_distribution<double> nd;
  RV h(cone.dim());
  for (Eigen::Index i = 0; i < h.size(); ++i) h(i) = nd(rng);
  return h * (0.3 * x.norm() / h.norm());
}

// Random interior point of each cone family.
inline RV interior_point(Cone<double>& cone, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> uni(0.2, 2.0);
  const auto n = cone.dim();
  RV x(n);
  const std::string kind = cone.name();
  if (kind == "nonneg") {
    for (auto i = 0; i < n; ++i) x(i) = uni(rng);
  } else if (kind == "psd") {
    const auto side = static_cast<Eigen::Index>(std::lround(std::sqrt(double(n))));
    x = svec<double>(CM(random_state(rng, side) * uni(rng)));
  } else if (kind == "kl") {
    const auto d = (n - 1) / 2;
    double dkl = 0;
    for (auto i = 0; i < d; ++i) {
      x(1 + i) = uni(rng);
      x(1 + d + i) = uni(rng);
      dkl += x(1 + i) * std::log(x(1 + i) / x(1 + d + i));
    }
    x(0) = dkl + uni(rng);
  } else {  // log
    x(1) = uni(rng);
    x(2) = uni(rng);
    x(0) = x(1) * std::log(x(2) / x(1)) - uni(rng);
  }
  if (!cone_set_point(cone, x)) throw std::runtime_error("interior_point: point left the " + kind + " cone");
  return x;
}

}  // namespace qkdtest
