// SPDX-License-Identifier: MIT
#pragma once

// Independent checks for the main build. Nothing here reuses the cone or solver kernels;
// only the Hermitian eigendecomposition from matfun is shared.

#include "qkdcone/cone.hpp"
#include "qkdcone/matfun.hpp"
#include "qkdcone/protocols.hpp"

#include <boost/math/constants/constants.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>

#include <functional>
#include <random>

namespace qkdcone::oracles {

template <class T = double>
struct FDSpec {
  T step = T(1e-5);
};

// Five-point central difference of a vector-valued function along dir.
template <class T>
RVec<T> fd_directional(const std::function<RVec<T>(const RVec<T>&)>& fn, const RVec<T>& x, const RVec<T>& dir,
                       FDSpec<T> spec = {}) {
  if (!(spec.step > 0)) throw std::invalid_argument("fd_directional: step must be positive");
  const T h = spec.step;
  const RVec<T> fp1 = fn(x + h * dir), fm1 = fn(x - h * dir);
  const RVec<T> fp2 = fn(x + 2 * h * dir), fm2 = fn(x - 2 * h * dir);
  return (fm2 - 8 * fm1 + 8 * fp1 - fp2) / (12 * h);
}

template <class T>
T relative_error(const RVec<T>& analytic, const RVec<T>& numeric) {
  return (analytic - numeric).norm() / std::max(T(1), analytic.norm());
}

// |analytic - FD| / max(1, |analytic|) for a scalar function's directional derivative.
template <class T>
T fd_check(const std::function<T(const RVec<T>&)>& fn, const RVec<T>& x, const RVec<T>& dir, T analytic,
           FDSpec<T> spec = {}) {
  const std::function<RVec<T>(const RVec<T>&)> wrapped = [&](const RVec<T>& p) {
    return RVec<T>::Constant(1, fn(p));
  };
  const T fd = fd_directional<T>(wrapped, x, dir, spec)(0);
  return std::abs(analytic - fd) / std::max(T(1), std::abs(analytic));
}

struct DerivativeErrors {
  double gradient = 0, hessian = 0, third = 0;
};

// Barrier derivatives at x along dir against finite differences of the next-lower order.
// The cone is left at x on return.
template <class T>
DerivativeErrors cone_derivative_errors(Cone<T>& cone, const RVec<T>& x, const RVec<T>& dir, FDSpec<T> spec = {}) {
  auto at = [&](const RVec<T>& p) {
    if (!cone_set_point(cone, p)) throw std::runtime_error("cone_derivative_errors: FD stencil left the cone");
  };
  const std::function<T(const RVec<T>&)> value = [&](const RVec<T>& p) {
    at(p);
    return cone.barrier();
  };
  const std::function<RVec<T>(const RVec<T>&)> grad_dir = [&](const RVec<T>& p) {
    at(p);
    return cone_gradient(cone);
  };
  const std::function<RVec<T>(const RVec<T>&)> hess_dir = [&](const RVec<T>& p) {
    at(p);
    return cone_hessian_apply(cone, dir);
  };
  at(x);
  const RVec<T> g = cone_gradient(cone);
  const RVec<T> hd = cone_hessian_apply(cone, dir);
  const RVec<T> td = cone_third_order(cone, dir);
  DerivativeErrors out;
  out.gradient = double(fd_check<T>(value, x, dir, g.dot(dir), spec));
  out.hessian = double(relative_error<T>(hd, fd_directional<T>(grad_dir, x, dir, spec)));
  // d/dt of H(x + t dir) dir equals D^3F[., dir, dir]
  out.third = double(relative_error<T>(td, fd_directional<T>(hess_dir, x, dir, spec)));
  at(x);
  return out;
}

struct LhscbReport {
  double homogeneity = 0;       // max over lambda of |F(lx) - F(x) + nu ln l|
  double gradient_pairing = 0;  // |<g, x> + nu|
  double hessian_identity = 0;  // |Hx + g| / |g|
  double third_identity = 0;    // |D^3F[., x, x] - 2g| / |g|
};

// Logarithmic homogeneity identities at x. D^3F[., x, x] = -2 H x = 2 g for an LHSCB.
template <class T>
LhscbReport lhscb_identities(Cone<T>& cone, const RVec<T>& x) {
  LhscbReport rep;
  if (!cone_set_point(cone, x)) throw std::runtime_error("lhscb_identities: point is not interior");
  const T f0 = cone.barrier();
  const RVec<T> g = cone_gradient(cone);
  const RVec<T> hx = cone_hessian_apply(cone, x);
  const RVec<T> tx = cone_third_order(cone, x);
  const T nu = cone.nu();
  rep.gradient_pairing = double(std::abs(g.dot(x) + nu));
  rep.hessian_identity = double((hx + g).norm() / std::max(T(1e-300), g.norm()));
  rep.third_identity = double((tx - 2 * g).norm() / std::max(T(1e-300), g.norm()));
  for (const T lam : {T(0.5), T(2), T(10)}) {
    const RVec<T> scaled = lam * x;
    if (!cone_set_point(cone, scaled)) throw std::runtime_error("lhscb_identities: scaled point left the cone");
    rep.homogeneity = std::max(rep.homogeneity, double(std::abs(cone.barrier() - f0 + nu * std::log(lam))));
  }
  cone_set_point(cone, x);
  return rep;
}

// 2 (D^2F[h,h])^{3/2} - |D^3F[h,h,h]| with h normalized to unit local norm; must be >= 0.
template <class T>
T self_concordance_slack(Cone<T>& cone, const RVec<T>& x, const RVec<T>& h) {
  if (!cone_set_point(cone, x)) throw std::runtime_error("self_concordance_slack: point is not interior");
  const T local = std::sqrt(h.dot(cone_hessian_apply(cone, h)));
  const RVec<T> unit = h / local;
  const T third = unit.dot(cone_third_order(cone, unit));
  return 2 - std::abs(third);
}

// Tr[(s^{(1-a)/2a} r s^{(1-a)/2a})^a] with powers taken on the supports only.
template <class T>
T naive_psi(T alpha, const CMat<T>& rho, const CMat<T>& sigma, T support_tol = T(1e-9)) {
  const auto sr = eigh<T>(hermitize<T>(rho));
  const auto ss = eigh<T>(hermitize<T>(sigma));
  const T top_r = std::max(std::abs(sr.max_eigenvalue()), T(1e-300));
  const T top_s = std::max(std::abs(ss.max_eigenvalue()), T(1e-300));
  const Eigen::Index n = rho.rows();
  CMat<T> proj_r = CMat<T>::Zero(n, n), proj_s = CMat<T>::Zero(n, n), spow = CMat<T>::Zero(n, n);
  const T e = (1 - alpha) / (2 * alpha);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (sr.eigenvalues(i) > support_tol * top_r) proj_r += sr.unitary.col(i) * sr.unitary.col(i).adjoint();
    if (ss.eigenvalues(i) > support_tol * top_s) {
      proj_s += ss.unitary.col(i) * ss.unitary.col(i).adjoint();
      spow += std::pow(ss.eigenvalues(i), e) * ss.unitary.col(i) * ss.unitary.col(i).adjoint();
    }
  }
  // supp(rho) within supp(sigma)  <=>  (1 - P_sigma) P_rho = 0
  if (((CMat<T>::Identity(n, n) - proj_s) * proj_r).norm() > T(1e-6))
    throw std::invalid_argument("naive_psi: support of rho is not contained in support of sigma");
  const CMat<T> inner = hermitize<T>(CMat<T>(spow * rho * spow));
  const auto si = eigh<T>(inner);
  T total = 0;
  for (Eigen::Index i = 0; i < n; ++i)
    if (si.eigenvalues(i) > 0) total += std::pow(si.eigenvalues(i), alpha);
  return total;
}

// Umegaki relative entropy Tr[rho (ln rho - ln sigma)] for full-rank inputs, natural log.
template <class T>
T relative_entropy(const CMat<T>& rho, const CMat<T>& sigma) {
  auto logm = [](const CMat<T>& x) {
    const auto sp = eigh<T>(hermitize<T>(x));
    if (!(sp.min_eigenvalue() > 0)) throw std::invalid_argument("relative_entropy: input is not full rank");
    return CMat<T>(sp.unitary * sp.eigenvalues.array().log().matrix().asDiagonal() * sp.unitary.adjoint());
  };
  return (rho * (logm(rho) - logm(sigma))).trace().real();
}

// |ln Psi_a / (a - 1) - D(rho||sigma)| at a = 1 + 1e-4.
template <class T>
T vn_limit_check(const CMat<T>& rho, const CMat<T>& sigma, T offset = T(1e-4)) {
  const T a = 1 + offset;
  return std::abs(std::log(naive_psi<T>(a, rho, sigma)) / (a - 1) - relative_entropy<T>(rho, sigma));
}

// (1/pi) int |g><g| d^2 g over {r e^{i t}: t in [t_lo, t_hi], r in [r_lo, r_hi]} in the Fock basis
// up to `cutoff`, by nested adaptive Gauss-Kronrod quadrature of <m|g><g|n> r in polar coordinates.
template <class T>
CMat<T> quadrature_region(T t_lo, T t_hi, T r_lo, T r_hi, Eigen::Index cutoff, T abs_tol = T(1e-11)) {
  using boost::math::quadrature::gauss_kronrod;
  if (!(t_hi >= t_lo) || !(r_lo >= 0) || !(r_hi >= r_lo)) throw std::invalid_argument("quadrature_region: invalid region");
  // the Gaussian factor makes everything beyond this radius negligible for small cutoffs
  const T r_max = std::min(r_hi, T(8) + std::sqrt(T(4 * cutoff + 40)));
  const Eigen::Index dim = cutoff + 1;
  CMat<T> out = CMat<T>::Zero(dim, dim);
  if (r_max <= r_lo || t_hi == t_lo) return out;
  std::vector<T> log_fact(dim, T(0));
  for (Eigen::Index k = 1; k < dim; ++k) log_fact[k] = log_fact[k - 1] + std::log(T(k));
  T worst = 0;
  for (Eigen::Index m = 0; m < dim; ++m)
    for (Eigen::Index n = m; n < dim; ++n) {
      // <m|g><g|n> = e^{-r^2} r^{m+n} e^{i(m-n)t} / sqrt(m! n!)
      auto entry = [&](T r, T t, bool imag) {
        const T mag = std::exp(-r * r + T(m + n) * std::log(std::max(r, T(1e-300))) - (log_fact[m] + log_fact[n]) / 2);
        const T ang = T(m - n) * t;
        return mag * r * (imag ? std::sin(ang) : std::cos(ang));
      };
      T err_total = 0;
      Complex<T> value;
      for (const bool imag : {false, true}) {
        if (m == n && imag) continue;
        auto radial = [&](T r) {
          T err = 0;
          const T v = gauss_kronrod<T, 31>::integrate([&](T t) { return entry(r, t, imag); }, t_lo, t_hi, 20, T(1e-13), &err);
          return v;
        };
        T err = 0;
        const T v = gauss_kronrod<T, 31>::integrate(radial, r_lo, r_max, 20, T(1e-13), &err);
        err_total += err;
        if (imag)
          value.imag(v);
        else
          value.real(v);
      }
      worst = std::max(worst, err_total);
      out(m, n) = value / boost::math::constants::pi<T>();
      out(n, m) = std::conj(out(m, n));
    }
  if (worst > abs_tol)
    throw std::runtime_error("quadrature_region: no convergence, estimated error " + std::to_string(double(worst)));
  return out;
}


struct BaselineResult {
  double value = 0;  // objective in nats
  double stationarity = 0;
  int iterations = 0;
  bool converged = false;
};

namespace detail {

template <class T>
CMat<T> apply_kraus(const std::vector<CMat<T>>& ops, const CMat<T>& x) {
  CMat<T> out = CMat<T>::Zero(ops.front().rows(), ops.front().rows());
  for (const auto& k : ops) out += k * x * k.adjoint();
  return out;
}

// omega(W) = (X (x) 1) Choi(E_W) (X (x) 1)^dagger with X = sqrt(sigma_A) and E_W the channel whose
// Stinespring isometry is W (W^dagger W)^{-1/2}; Tr_B omega = sigma_A for every full-rank W.
template <class T>
CMat<T> state_from_stinespring(const CMat<T>& w, const CMat<T>& sqrt_sigma_a, Eigen::Index dim_b) {
  const Eigen::Index da = sqrt_sigma_a.rows();
  const auto gram = eigh<T>(hermitize<T>(CMat<T>(w.adjoint() * w)));
  const CMat<T> iso = w * gram.unitary * gram.eigenvalues.array().rsqrt().matrix().asDiagonal() * gram.unitary.adjoint();
  const Eigen::Index env = iso.rows() / dim_b;
  // |v> = sum_i |i>_A (x) iso|i>, then trace out the environment
  CMat<T> vecs = CMat<T>::Zero(da * dim_b, env);
  for (Eigen::Index i = 0; i < da; ++i)
    for (Eigen::Index b = 0; b < dim_b; ++b)
      for (Eigen::Index e = 0; e < env; ++e) vecs(i * dim_b + b, e) = iso(b * env + e, i);
  const CMat<T> lift = kron<T>(sqrt_sigma_a, CMat<T>(CMat<T>::Identity(dim_b, dim_b)));
  const CMat<T> v = lift * vecs;
  return v * v.adjoint();
}

}  // namespace detail

// First-order reference minimization of the exact fast objective at acceptance radius zero:
//   alpha/(alpha-1) [ sum_c p_c ln(p_c / Tr[O_c w]) - p_bot ln sum_b Psi_{1/alpha}(G_b(w), Z_b G_b(w)) ]
// over states with Tr_B w = sigma_A, using the unreduced maps and naive_psi. Gradient descent with
// Barzilai-Borwein steps and Armijo backtracking on an unconstrained Stinespring parametrization;
// gradients by central differences. The returned value is attained by a feasible state, so it
// upper-bounds the conic optimum.
template <class T>
BaselineResult baseline_minimize(const ProtocolInstance<T>& inst, T alpha, T delta, std::uint64_t seed = 7,
                                 int max_iters = 50000, T stationarity_tol = T(1e-7)) {
  if (!(alpha > 1 && alpha <= 2)) throw std::invalid_argument("baseline_minimize: alpha must lie in (1, 2]");
  if (delta != 0) throw std::invalid_argument("baseline_minimize: only the zero acceptance radius is supported");
  if (inst.dim_ab() > 16) throw std::invalid_argument("baseline_minimize: state dimension above 16");
  const T beta = 1 / alpha, pref = alpha / (alpha - 1);
  const Eigen::Index da = inst.dim_a, db = inst.dim_b;
  const auto sa = eigh<T>(hermitize<T>(inst.sigma_a));
  const CMat<T> sqrt_sa = sa.unitary * sa.eigenvalues.cwiseMax(T(0)).cwiseSqrt().asDiagonal() * sa.unitary.adjoint();
  const Eigen::Index env = da * db;
  const Eigen::Index rows = db * env, nparam = 2 * rows * da;

  auto unpack = [&](const RVec<T>& x) {
    CMat<T> w(rows, da);
    for (Eigen::Index j = 0; j < da; ++j)
      for (Eigen::Index i = 0; i < rows; ++i) w(i, j) = Complex<T>(x(2 * (j * rows + i)), x(2 * (j * rows + i) + 1));
    return w;
  };
  auto objective = [&](const RVec<T>& x) {
    const CMat<T> omega = detail::state_from_stinespring<T>(unpack(x), sqrt_sa, db);
    T kl = 0;
    for (Eigen::Index c = 0; c < inst.alphabet_size(); ++c) {
      if (c == inst.bot_index || inst.reference[c] <= 0) continue;
      const T pc = (inst.observables[c] * omega).trace().real();
      if (!(pc > 0)) return std::numeric_limits<T>::infinity();
      kl += inst.reference[c] * std::log(inst.reference[c] / pc);
    }
    T psi = 0;
    for (const auto& br : inst.branches) {
      const CMat<T> g = hermitize<T>(detail::apply_kraus<T>(br.key_map.operators(), omega));
      const CMat<T> z = hermitize<T>(detail::apply_kraus<T>(br.pinching.operators(), g));
      psi += naive_psi<T>(beta, g, z, T(1e-12));
    }
    return pref * (kl - inst.p_bot * std::log(psi));
  };
  auto gradient = [&](const RVec<T>& x) {
    RVec<T> g(nparam);
    const T h = T(1e-6);
    for (Eigen::Index k = 0; k < nparam; ++k) {
      RVec<T> xp = x, xm = x;
      xp(k) += h;
      xm(k) -= h;
      g(k) = (objective(xp) - objective(xm)) / (2 * h);
    }
    return g;
  };

  // start from the channel that reproduces the honest state as closely as a random dilation allows
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0, 1);
  RVec<T> x(nparam);
  for (auto& v : x) v = T(gauss(rng));
  {
    // honest purification: omega_h = sum_k |v_k><v_k| gives W rows from (X^{-1} (x) 1) v_k
    const auto hs = eigh<T>(hermitize<T>(inst.honest_state));
    CMat<T> inv_sqrt = CMat<T>::Zero(da, da);
    for (Eigen::Index i = 0; i < da; ++i)
      if (sa.eigenvalues(i) > 0) inv_sqrt += sa.unitary.col(i) * sa.unitary.col(i).adjoint() / std::sqrt(sa.eigenvalues(i));
    const CMat<T> unlift = kron<T>(inv_sqrt, CMat<T>(CMat<T>::Identity(db, db)));
    CMat<T> w = CMat<T>::Zero(rows, da);
    for (Eigen::Index e = 0; e < env; ++e) {
      const T lam = std::max(T(0), hs.eigenvalues(e));
      const CMat<T> v = unlift * hs.unitary.col(e) * std::sqrt(lam);
      for (Eigen::Index i = 0; i < da; ++i)
        for (Eigen::Index b = 0; b < db; ++b) w(b * env + e, i) += v(i * db + b);
    }
    // small random admixture keeps W full rank and the iterate interior
    for (Eigen::Index j = 0; j < da; ++j)
      for (Eigen::Index i = 0; i < rows; ++i) {
        const Eigen::Index k = 2 * (j * rows + i);
        x(k) = w(i, j).real() + T(1e-3) * x(k);
        x(k + 1) = w(i, j).imag() + T(1e-3) * x(k + 1);
      }
  }

  BaselineResult out;
  T f = objective(x);
  if (!std::isfinite(f)) throw std::runtime_error("baseline_minimize: starting point has no finite objective");
  RVec<T> g = gradient(x);
  T step = T(1e-2);
  RVec<T> x_prev, g_prev;
  for (int it = 0; it < max_iters; ++it) {
    out.iterations = it;
    out.stationarity = double(g.norm());
    if (g.norm() <= stationarity_tol) {
      out.converged = true;
      break;
    }
    if (it > 0) {
      const RVec<T> sx = x - x_prev, sy = g - g_prev;
      const T curv = sx.dot(sy);
      step = curv > 0 ? sx.squaredNorm() / curv : step * 2;
    }
    T trial_f = 0;
    RVec<T> trial;
    int back = 0;
    for (; back < 60; ++back, step /= 2) {
      trial = x - step * g;
      trial_f = objective(trial);
      if (std::isfinite(trial_f) && trial_f <= f - T(1e-4) * step * g.squaredNorm()) break;
    }
    if (back == 60) break;  // no descent at machine precision
    x_prev = x;
    g_prev = g;
    x = trial;
    f = trial_f;
    g = gradient(x);
  }
  out.value = double(f);
  return out;
}

}  // namespace qkdcone::oracles
