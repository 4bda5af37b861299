// SPDX-License-Identifier: MIT
#pragma once

#include "qkdcone/channels.hpp"
#include "qkdcone/renyi_cones.hpp"

#include <boost/math/special_functions/gamma.hpp>
#include <boost/math/constants/constants.hpp>

#include <numbers>
#include <string>
#include <vector>

namespace qkdcone {

enum class Protocol { BB84, MUB, DMCV };

inline std::string to_string(Protocol p) {
  switch (p) {
    case Protocol::BB84: return "bb84";
    case Protocol::MUB: return "mub";
    case Protocol::DMCV: return "dmcv";
  }
  return "unknown";
}

// One orthogonal piece of the key map: G_b acting on the columns `domain` of the AB space,
// followed by the pinching Z_b on the branch output space.
template <class T = double>
struct KeyBranch {
  KrausMap<T> key_map;   // AB -> branch output (unrestricted domain)
  KrausMap<T> pinching;  // branch output -> branch output
  CMat<T> domain;        // isometry V into AB with G_b = G_b V V^dagger
};

// Reduced true-cone data for one branch: rho = V^dagger omega V, sigma = B^dagger psi B.
template <class T = double>
struct TrueConeBranch {
  ReducedConeSpec<T> spec;
  CMat<T> domain;
  CMat<T> sigma_basis;
};

// Reduced fast-cone data. The full fast Psi is Psi_hat(V^dagger omega V) + offset + Tr[L omega].
template <class T = double>
struct FastConeBranch {
  ReducedConeSpec<T> spec;
  CMat<T> domain;
  T affine_constant = 0;
  CMat<T> affine_observable;  // L, Hermitian on AB
};

template <class T = double>
struct ProtocolInstance {
  Protocol protocol = Protocol::BB84;
  Eigen::Index dim_a = 0, dim_b = 0;
  CMat<T> sigma_a;
  std::vector<CMat<T>> observables;  // O_c on AB; index bot_index is the key outcome
  std::vector<std::string> labels;
  Eigen::Index bot_index = 0;
  std::vector<T> reference;  // honest p over the full alphabet
  T p_bot = 0;
  T p_sift = 0;
  T h_cond_bits = 0;
  CMat<T> honest_state;

  KrausMap<T> key_map;   // full G
  KrausMap<T> pinching;  // full Z
  std::vector<KeyBranch<T>> branches;
  std::vector<TrueConeBranch<T>> true_cones;
  FastConeBranch<T> fast_cone;
  // Mutually orthogonal isometries on AB. When nonempty the program is invariant under a unitary
  // whose eigenspaces they span, so omega may be restricted to operators block diagonal over them.
  std::vector<CMat<T>> invariant_blocks;

  [[nodiscard]] Eigen::Index dim_ab() const { return dim_a * dim_b; }
  [[nodiscard]] Eigen::Index alphabet_size() const { return static_cast<Eigen::Index>(observables.size()); }

  [[nodiscard]] std::vector<T> statistics(const CMat<T>& omega) const {
    std::vector<T> out;
    out.reserve(observables.size());
    for (const auto& o : observables) out.push_back(hs_inner<T>(o, omega));
    return out;
  }

  void validate() const {
    const Eigen::Index n = dim_ab();
    if (sigma_a.rows() != dim_a || std::abs(real_trace<T>(sigma_a) - 1) > T(1e-9) ||
        min_eigenvalue<T>(sigma_a) < -T(1e-12))
      throw std::invalid_argument("ProtocolInstance: sigma_A must be a density matrix");
    CMat<T> total = CMat<T>::Zero(n, n);
    for (const auto& o : observables) total += o;
    if (max_abs<T>(CMat<T>(total - CMat<T>::Identity(n, n))) > T(1e-9))
      throw std::invalid_argument("ProtocolInstance: observables do not resolve the identity");
    T sum = 0;
    for (const T v : reference) {
      if (v < -T(1e-12)) throw std::invalid_argument("ProtocolInstance: negative reference probability");
      sum += v;
    }
    if (std::abs(sum - 1) > T(1e-9)) throw std::invalid_argument("ProtocolInstance: reference does not sum to one");
    if (!invariant_blocks.empty()) {
      CMat<T> resolution = CMat<T>::Zero(n, n);
      for (const auto& v : invariant_blocks) {
        if (v.rows() != n) throw std::invalid_argument("ProtocolInstance: invariant block has the wrong dimension");
        resolution += v * v.adjoint();
      }
      if (max_abs<T>(CMat<T>(resolution - CMat<T>::Identity(n, n))) > T(1e-9))
        throw std::invalid_argument("ProtocolInstance: invariant blocks do not resolve the identity");
    }
  }
};

// Spec copy with a new cone exponent.
template <class T>
ReducedConeSpec<T> at_alpha(ReducedConeSpec<T> spec, T alpha) {
  spec.alpha = alpha;
  spec.validate();
  return spec;
}

template <class T>
std::vector<T> honest_statistics(const ProtocolInstance<T>& inst, const CMat<T>& state) {
  if (state.rows() != inst.dim_ab() || state.cols() != inst.dim_ab())
    throw std::invalid_argument("honest_statistics: state has the wrong dimension");
  if (std::abs(real_trace<T>(state) - 1) > T(1e-8)) throw std::invalid_argument("honest_statistics: state trace is not one");
  return inst.statistics(state);
}

namespace detail {

inline bool is_prime(long d) {
  if (d < 2) return false;
  for (long f = 2; f * f <= d; ++f)
    if (d % f == 0) return false;
  return true;
}

template <class T>
T entropy_bits(const std::vector<T>& p) {
  T h = 0;
  for (const T v : p)
    if (v > 0) h -= v * std::log2(v);
  return h;
}

// H(X|Y) in bits for a joint table joint(x, y), normalized internally.
template <class T>
T conditional_entropy_bits(const RMat<T>& joint) {
  const T total = joint.sum();
  if (!(total > 0)) throw std::invalid_argument("conditional_entropy_bits: empty distribution");
  std::vector<T> all, marg_y;
  for (Eigen::Index x = 0; x < joint.rows(); ++x)
    for (Eigen::Index y = 0; y < joint.cols(); ++y) all.push_back(std::max(T(0), joint(x, y)) / total);
  for (Eigen::Index y = 0; y < joint.cols(); ++y) marg_y.push_back(std::max(T(0), joint.col(y).sum()) / total);
  return std::max(T(0), entropy_bits(all) - entropy_bits(marg_y));
}

template <class T>
CMat<T> projector(const CMat<T>& ket) {
  return ket * ket.adjoint();
}

// Attach the facially reduced cone data to the instance. The first branch drives the fast cone.
template <class T>
void reduce_branches(ProtocolInstance<T>& inst, const T affine_constant, const CMat<T>& affine_observable) {
  const T placeholder = T(0.75);
  inst.true_cones.clear();
  for (const auto& br : inst.branches) {
    const KrausMap<T> restricted = br.key_map.restrict_domain(br.domain);
    const auto red = pinched_reduce_pair<T>(restricted, br.pinching);
    inst.true_cones.push_back({make_true_cone_spec<T>(placeholder, red.pair), br.domain, red.sigma_basis});
  }
  const auto& top = inst.branches.front();
  inst.fast_cone.spec = make_fast_cone_spec<T>(placeholder, top.key_map, top.pinching, &top.domain);
  inst.fast_cone.domain = top.domain;
  inst.fast_cone.affine_constant = affine_constant;
  inst.fast_cone.affine_observable = affine_observable;
}

// Eigenspaces of a unitary with u^order = 1, as isometries. Uses the group-average projectors
// sum_j w^(-jk) u^j / order so degenerate eigenvalues need no care.
template <class T>
std::vector<CMat<T>> cyclic_eigenspaces(const CMat<T>& u, int order) {
  const Eigen::Index n = u.rows();
  std::vector<CMat<T>> powers{CMat<T>::Identity(n, n)};
  for (int j = 1; j < order; ++j) powers.push_back(u * powers.back());
  if (max_abs<T>(CMat<T>(u * powers.back() - CMat<T>::Identity(n, n))) > T(1e-10))
    throw std::invalid_argument("cyclic_eigenspaces: unitary does not have the stated order");
  std::vector<CMat<T>> out;
  for (int k = 0; k < order; ++k) {
    CMat<T> proj = CMat<T>::Zero(n, n);
    for (int j = 0; j < order; ++j)
      proj += std::polar(T(1), -T(2) * std::numbers::pi_v<T> * T(j * k) / T(order)) * powers[j];
    const auto sp = eigh<T>(hermitize<T>(CMat<T>(proj / T(order))));
    std::vector<Eigen::Index> keep;
    for (Eigen::Index i = 0; i < n; ++i)
      if (sp.eigenvalues(i) > T(0.5)) keep.push_back(i);
    if (keep.empty()) continue;
    CMat<T> iso(n, static_cast<Eigen::Index>(keep.size()));
    for (std::size_t i = 0; i < keep.size(); ++i) iso.col(Eigen::Index(i)) = sp.unitary.col(keep[i]);
    out.push_back(std::move(iso));
  }
  return out;
}

template <class T>
CMat<T> dephasing_kraus(Eigen::Index r_dim, Eigen::Index r, Eigen::Index rest) {
  return kron<T>(ket_bra<T>(r_dim, r, r), CMat<T>::Identity(rest, rest));
}

}  // namespace detail

// Qubit BB84 with no-click outcome. Bob's space is span{|0>, |1>, |bot>}.
template <class T = double>
ProtocolInstance<T> build_bb84(T visibility, T chi_db, T p_key) {
  if (!(visibility >= 0 && visibility <= 1)) throw std::invalid_argument("build_bb84: visibility must lie in [0, 1]");
  if (!(chi_db >= 0) || !std::isfinite(chi_db)) throw std::invalid_argument("build_bb84: loss must be nonnegative");
  if (!(p_key > 0 && p_key < 1)) throw std::invalid_argument("build_bb84: key probability must lie in (0, 1)");
  using M = CMat<T>;
  const T eta = std::pow(T(10), -chi_db / 10);
  const T r2 = T(1) / std::sqrt(T(2));

  ProtocolInstance<T> inst;
  inst.protocol = Protocol::BB84;
  inst.dim_a = 2;
  inst.dim_b = 3;
  inst.sigma_a = M::Identity(2, 2) / T(2);

  M plus(2, 1), minus(2, 1);
  plus << r2, r2;
  minus << r2, -r2;
  const M px[2] = {(1 - p_key) * detail::projector<T>(plus), (1 - p_key) * detail::projector<T>(minus)};
  auto embed = [](const M& q2) {
    M q = M::Zero(3, 3);
    q.topLeftCorner(2, 2) = q2;
    return q;
  };
  // Bob: basis y in {Z, X}, outcome b in {0, 1, bot}
  const M qz[3] = {p_key * ket_bra<T>(3, 0, 0), p_key * ket_bra<T>(3, 1, 1), p_key * ket_bra<T>(3, 2, 2)};
  const M qx[3] = {embed(detail::projector<T>(plus)) * (1 - p_key), embed(detail::projector<T>(minus)) * (1 - p_key),
                   (1 - p_key) * ket_bra<T>(3, 2, 2)};

  inst.observables.push_back(p_key * M::Identity(6, 6));
  inst.labels.push_back("bot");
  const char* outcome_name[3] = {"0", "1", "bot"};
  for (int a = 0; a < 2; ++a) {
    for (int y = 0; y < 2; ++y)
      for (int b = 0; b < 3; ++b) {
        inst.observables.push_back(kron<T>(px[a], y == 0 ? qz[b] : qx[b]));
        inst.labels.push_back("X" + std::to_string(a) + "," + (y == 0 ? "Z" : "X") + outcome_name[b]);
      }
  }
  inst.bot_index = 0;

  // Honest state: Bell pair, depolarize Bob's qubit, then erase it to |bot> with probability 1 - eta.
  M bell = M::Zero(4, 1);
  bell(0) = r2;
  bell(3) = r2;
  const M iso = visibility * detail::projector<T>(bell) + (1 - visibility) * M::Identity(4, 4) / T(4);
  std::vector<M> loss_ops;
  M keep = M::Zero(3, 2);
  keep(0, 0) = keep(1, 1) = std::sqrt(eta);
  loss_ops.push_back(kron<T>(M::Identity(2, 2), keep));
  for (int i = 0; i < 2; ++i) {
    M lost = M::Zero(3, 2);
    lost(2, i) = std::sqrt(1 - eta);
    loss_ops.push_back(kron<T>(M::Identity(2, 2), lost));
  }
  if (eta == 1) loss_ops.resize(1);
  inst.honest_state = KrausMap<T>(loss_ops).apply(iso);
  inst.reference = inst.statistics(inst.honest_state);
  inst.p_bot = p_key;
  inst.p_sift = p_key * p_key * eta;

  // Key map: R in {0, 1, bot}, layout R (x) A (x) B.
  M pi01 = M::Zero(3, 3);
  pi01(0, 0) = pi01(1, 1) = 1;
  M g_top = M::Zero(18, 6), g_bot = M::Zero(18, 6);
  for (Eigen::Index r = 0; r < 2; ++r)
    g_top += std::sqrt(p_key) * kron<T>(basis_ket<T>(3, r), kron<T>(ket_bra<T>(2, r, r), pi01));
  M bob_bot = std::sqrt(1 - p_key) * pi01 + ket_bra<T>(3, 2, 2);
  g_bot = kron<T>(basis_ket<T>(3, 2), kron<T>(M::Identity(2, 2), bob_bot));
  inst.key_map = KrausMap<T>({g_top, g_bot});
  inst.pinching = KrausMap<T>({detail::dephasing_kraus<T>(3, 0, 6), detail::dephasing_kraus<T>(3, 1, 6),
                               detail::dephasing_kraus<T>(3, 2, 6)});

  // Branch outputs drop the unused R values.
  M g_top_out = g_top.topRows(12);
  M v_top = M::Zero(6, 4);
  for (Eigen::Index a = 0; a < 2; ++a)
    for (Eigen::Index b = 0; b < 2; ++b) v_top(a * 3 + b, a * 2 + b) = 1;
  inst.branches.push_back({KrausMap<T>({g_top_out}),
                           KrausMap<T>({detail::dephasing_kraus<T>(2, 0, 6), detail::dephasing_kraus<T>(2, 1, 6)}),
                           v_top});
  inst.branches.push_back({KrausMap<T>({M(g_bot.bottomRows(6))}), KrausMap<T>::identity(6), M::Identity(6, 6)});
  // Psi of the bot branch under the fast map is its trace: 1 - Tr[G_top(omega)].
  detail::reduce_branches<T>(inst, T(1), M(-(g_top.adjoint() * g_top)));

  // Key-round error rate among clicked Z/Z rounds.
  RMat<T> joint(2, 2);
  for (int s = 0; s < 2; ++s)
    for (int b = 0; b < 2; ++b)
      joint(s, b) = hs_inner<T>(kron<T>(ket_bra<T>(2, s, s), ket_bra<T>(3, b, b)), inst.honest_state);
  inst.h_cond_bits = detail::conditional_entropy_bits<T>(joint);
  inst.validate();
  return inst;
}

// Mutually unbiased bases of a prime dimension: column j of bases[l] is the j-th vector of basis l.
// Basis 0 is computational; basis 1 + b has entries w^{b k^2 + j k} / sqrt(d) (odd d) or
// i^{b k^2} (-1)^{j k} / sqrt(2) (d = 2).
template <class T = double>
std::vector<CMat<T>> mutually_unbiased_bases(Eigen::Index d, Eigen::Index count) {
  if (!detail::is_prime(static_cast<long>(d))) throw std::invalid_argument("mutually_unbiased_bases: d must be prime");
  if (count < 1 || count > d + 1) throw std::invalid_argument("mutually_unbiased_bases: at most d + 1 bases exist");
  const T pi = boost::math::constants::pi<T>();
  std::vector<CMat<T>> out{CMat<T>::Identity(d, d)};
  for (Eigen::Index b = 0; out.size() < static_cast<std::size_t>(count); ++b) {
    CMat<T> basis(d, d);
    for (Eigen::Index j = 0; j < d; ++j)
      for (Eigen::Index k = 0; k < d; ++k) {
        T phase;
        if (d == 2)
          phase = pi * T(b * k * k) / 2 + pi * T(j * k);
        else
          phase = 2 * pi * T((b * k * k + j * k) % d) / T(d);
        basis(k, j) = std::polar(T(1) / std::sqrt(T(d)), phase);
      }
    out.push_back(std::move(basis));
  }
  return out;
}

template <class T = double>
ProtocolInstance<T> build_mub(Eigen::Index d, Eigen::Index num_bases, T visibility, T p_key) {
  if (!detail::is_prime(static_cast<long>(d))) throw std::invalid_argument("build_mub: d must be prime");
  if (num_bases < 2 || num_bases > d + 1) throw std::invalid_argument("build_mub: number of bases must lie in [2, d + 1]");
  if (!(visibility >= 0 && visibility <= 1)) throw std::invalid_argument("build_mub: visibility must lie in [0, 1]");
  if (!(p_key > 0 && p_key < 1)) throw std::invalid_argument("build_mub: key probability must lie in (0, 1)");
  using M = CMat<T>;
  const Eigen::Index n = d * d;
  ProtocolInstance<T> inst;
  inst.protocol = Protocol::MUB;
  inst.dim_a = inst.dim_b = d;
  inst.sigma_a = M::Identity(d, d) / T(d);

  const auto bases = mutually_unbiased_bases<T>(d, num_bases);
  std::vector<T> basis_prob(num_bases, (1 - p_key) / T(num_bases - 1));
  basis_prob[0] = p_key;

  inst.observables.push_back(p_key * p_key * M::Identity(n, n));
  inst.labels.push_back("bot");
  M rest = M::Identity(n, n) - inst.observables.front();
  for (Eigen::Index l = 1; l < num_bases; ++l) {
    M o = M::Zero(n, n);
    for (Eigen::Index j = 0; j < d; ++j) {
      const M proj = detail::projector<T>(M(bases[l].col(j)));
      o += kron<T>(proj, M(proj.transpose()));
    }
    o *= basis_prob[l] * basis_prob[l];
    rest -= o;
    inst.observables.push_back(std::move(o));
    inst.labels.push_back(std::to_string(l));
  }
  inst.observables.push_back(hermitize<T>(rest));
  inst.labels.push_back(std::to_string(num_bases));
  inst.bot_index = 0;

  M phi = M::Zero(n, 1);
  for (Eigen::Index j = 0; j < d; ++j) phi(j * d + j) = T(1) / std::sqrt(T(d));
  inst.honest_state = visibility * detail::projector<T>(phi) + (1 - visibility) * M::Identity(n, n) / T(n);
  inst.reference = inst.statistics(inst.honest_state);
  inst.p_bot = p_key * p_key;
  inst.p_sift = p_key * p_key;

  M g = M::Zero(d * n, n);
  std::vector<M> z_ops;
  for (Eigen::Index r = 0; r < d; ++r) {
    g += kron<T>(basis_ket<T>(d, r), kron<T>(ket_bra<T>(d, r, r), M(M::Identity(d, d))));
    z_ops.push_back(detail::dephasing_kraus<T>(d, r, n));
  }
  inst.key_map = KrausMap<T>({g});
  inst.pinching = KrausMap<T>(z_ops);
  inst.branches.push_back({inst.key_map, inst.pinching, M::Identity(n, n)});
  detail::reduce_branches<T>(inst, T(0), M::Zero(n, n));

  RMat<T> joint(d, d);
  for (Eigen::Index s = 0; s < d; ++s)
    for (Eigen::Index b = 0; b < d; ++b)
      joint(s, b) = hs_inner<T>(kron<T>(ket_bra<T>(d, s, s), ket_bra<T>(d, b, b)), inst.honest_state);
  inst.h_cond_bits = detail::conditional_entropy_bits<T>(joint);
  inst.validate();
  return inst;
}

// Annular sector {r e^{i theta}: theta in [theta_lo, theta_hi], r in [r_lo, r_hi]}; r_hi may be +inf.
template <class T = double>
struct PhaseSpaceRegion {
  T theta_lo = 0, theta_hi = 0;
  T r_lo = 0, r_hi = std::numeric_limits<T>::infinity();
};

// (1/pi) int_region |g><g| d^2 g in the Fock basis {|0>, ..., |cutoff>}.
//   <m|R|n> = (1/pi) int e^{-r^2} r^{m+n+1} e^{i(m-n) theta} / sqrt(m! n!) dr dtheta.
template <class T = double>
CMat<T> region_operator(const PhaseSpaceRegion<T>& region, Eigen::Index cutoff) {
  if (cutoff < 0) throw std::invalid_argument("region_operator: cutoff must be nonnegative");
  if (!(region.theta_hi >= region.theta_lo) || !(region.r_lo >= 0) || !(region.r_hi >= region.r_lo))
    throw std::invalid_argument("region_operator: invalid region");
  using boost::math::gamma_p;
  using boost::math::gamma_q;
  using boost::math::lgamma;
  const T pi = boost::math::constants::pi<T>();
  const Eigen::Index dim = cutoff + 1;
  CMat<T> out(dim, dim);
  for (Eigen::Index m = 0; m < dim; ++m)
    for (Eigen::Index n = m; n < dim; ++n) {
      // radial part: (1/2) Gamma(s) [P(s, r_hi^2) - P(s, r_lo^2)] / sqrt(m! n!), s = (m+n)/2 + 1
      const T s = T(m + n) / 2 + 1;
      const T lo = region.r_lo * region.r_lo;
      T fraction;
      if (std::isinf(region.r_hi))
        fraction = lo == 0 ? T(1) : gamma_q(s, lo);
      else {
        const T hi = region.r_hi * region.r_hi;
        fraction = (lo > s ? gamma_q(s, lo) - gamma_q(s, hi) : gamma_p(s, hi) - (lo == 0 ? T(0) : gamma_p(s, lo)));
      }
      const T radial = fraction / 2 * std::exp(lgamma(s) - (lgamma(T(m + 1)) + lgamma(T(n + 1))) / 2);
      Complex<T> angular;
      const Eigen::Index k = m - n;
      if (k == 0)
        angular = region.theta_hi - region.theta_lo;
      else
        angular = (std::polar(T(1), T(k) * region.theta_hi) - std::polar(T(1), T(k) * region.theta_lo)) /
                  Complex<T>(0, T(k));
      out(m, n) = radial * angular / pi;
      out(n, m) = std::conj(out(m, n));
    }
  return out;
}

template <class T = double>
CMat<T> coherent_ket(Complex<T> amplitude, Eigen::Index cutoff) {
  CMat<T> ket(cutoff + 1, 1);
  const T norm = std::exp(-std::norm(amplitude) / 2);
  Complex<T> term(norm);
  ket(0) = term;
  for (Eigen::Index k = 1; k <= cutoff; ++k) {
    term *= amplitude / std::sqrt(T(k));
    ket(k) = term;
  }
  return ket;
}

template <class T = double>
struct DmcvParams {
  T amplitude = T(0.8);
  T distance_km = 0;
  Eigen::Index cutoff = 10;
  T delta = T(4.0);
  T delta_s = T(1.5);
  T p_key = T(0.5);
};

template <class T = double>
struct DmcvRegions {
  std::vector<CMat<T>> key;   // four sectors
  std::vector<CMat<T>> test;  // four clipped sectors, inner disc, outer annulus
  T completeness_defect = 0;  // max-entry deviation of sum(test) from identity before renormalization
};

template <class T = double>
DmcvRegions<T> dmcv_regions(Eigen::Index cutoff, T delta, T delta_s) {
  if (!(delta_s > 0 && delta_s < delta)) throw std::invalid_argument("dmcv_regions: need 0 < Delta_s < Delta");
  if (cutoff < 4) throw std::invalid_argument("dmcv_regions: Fock cutoff must be at least 4");
  const T pi = boost::math::constants::pi<T>();
  const T inf = std::numeric_limits<T>::infinity();
  DmcvRegions<T> out;
  for (int z = 0; z < 4; ++z) {
    const T centre = z * pi / 2;
    out.key.push_back(region_operator<T>({centre - pi / 4, centre + pi / 4, T(0), inf}, cutoff));
    out.test.push_back(region_operator<T>({centre - pi / 4, centre + pi / 4, delta_s, delta}, cutoff));
  }
  out.test.push_back(region_operator<T>({T(0), 2 * pi, T(0), delta_s}, cutoff));
  out.test.push_back(region_operator<T>({T(0), 2 * pi, delta, inf}, cutoff));
  const Eigen::Index dim = cutoff + 1;
  auto defect = [&](const std::vector<CMat<T>>& ops) {
    CMat<T> total = CMat<T>::Zero(dim, dim);
    for (const auto& o : ops) total += o;
    return std::make_pair(max_abs<T>(CMat<T>(total - CMat<T>::Identity(dim, dim))), total);
  };
  auto renormalize = [&](std::vector<CMat<T>>& ops) {
    const auto [dev, total] = defect(ops);
    if (dev <= T(1e-8)) return dev;
    const auto sp = eigh<T>(total);
    const CMat<T> inv_sqrt =
        sp.unitary * sp.eigenvalues.array().rsqrt().matrix().template cast<Complex<T>>().asDiagonal() * sp.unitary.adjoint();
    for (auto& o : ops) o = hermitize<T>(CMat<T>(inv_sqrt * o * inv_sqrt));
    return dev;
  };
  out.completeness_defect = renormalize(out.test);
  renormalize(out.key);
  return out;
}

// Discrete-modulated CV protocol with four coherent states and coarse-grained heterodyne
// detection; the key is Bob's sector (reverse reconciliation).
template <class T = double>
ProtocolInstance<T> build_dmcv(const DmcvParams<T>& prm) {
  if (!(prm.amplitude >= 0)) throw std::invalid_argument("build_dmcv: amplitude must be nonnegative");
  if (!(prm.distance_km >= 0)) throw std::invalid_argument("build_dmcv: distance must be nonnegative");
  if (!(prm.p_key > 0 && prm.p_key < 1)) throw std::invalid_argument("build_dmcv: key probability must lie in (0, 1)");
  using M = CMat<T>;
  const auto regions = dmcv_regions<T>(prm.cutoff, prm.delta, prm.delta_s);
  const Eigen::Index db = prm.cutoff + 1, n = 4 * db;
  const T eta = std::pow(T(10), -T(0.02) * prm.distance_km);
  const Complex<T> phase[4] = {{1, 0}, {0, 1}, {-1, 0}, {0, -1}};

  ProtocolInstance<T> inst;
  inst.protocol = Protocol::DMCV;
  inst.dim_a = 4;
  inst.dim_b = db;
  // <g'|g> for coherent states, untruncated
  auto overlap = [](Complex<T> a, Complex<T> b) {  // <b|a>
    return std::exp(-std::norm(a) / 2 - std::norm(b) / 2 + std::conj(b) * a);
  };
  inst.sigma_a = M(4, 4);
  for (int x = 0; x < 4; ++x)
    for (int y = 0; y < 4; ++y) inst.sigma_a(x, y) = overlap(phase[x] * prm.amplitude, phase[y] * prm.amplitude) / T(4);
  inst.sigma_a = hermitize<T>(inst.sigma_a);

  inst.observables.push_back(prm.p_key * M::Identity(n, n));
  inst.labels.push_back("bot");
  for (int x = 0; x < 4; ++x)
    for (int z = 0; z < 6; ++z) {
      inst.observables.push_back((1 - prm.p_key) * kron<T>(ket_bra<T>(4, x, x), regions.test[z]));
      inst.labels.push_back(std::to_string(x) + "," + std::to_string(z));
    }
  inst.bot_index = 0;

  // Pure loss: Bob receives sqrt(eta) i^x g, the environment keeps sqrt(1 - eta) i^x g.
  M state = M::Zero(n, n);
  std::vector<M> kets;
  for (int x = 0; x < 4; ++x) kets.push_back(coherent_ket<T>(phase[x] * (std::sqrt(eta) * prm.amplitude), prm.cutoff));
  const T env = std::sqrt(1 - eta) * prm.amplitude;
  for (int x = 0; x < 4; ++x)
    for (int y = 0; y < 4; ++y)
      state.block(x * db, y * db, db, db) = overlap(phase[x] * env, phase[y] * env) / T(4) * (kets[x] * kets[y].adjoint());
  state = hermitize<T>(state);
  // Truncation shifts the A marginal slightly; restore it with an A-local congruence.
  const M marg = partial_trace_second<T>(state, 4, db);
  const auto ms = eigh<T>(marg);
  const auto ss = eigh<T>(inst.sigma_a);
  RVec<T> inv_root = RVec<T>::Zero(4);
  for (Eigen::Index i = 0; i < 4; ++i)
    if (ms.eigenvalues(i) > T(1e-14) * ms.max_eigenvalue()) inv_root(i) = 1 / std::sqrt(ms.eigenvalues(i));
  const M marg_inv_sqrt = ms.unitary * inv_root.template cast<Complex<T>>().asDiagonal() * ms.unitary.adjoint();
  const M sigma_sqrt =
      ss.unitary * ss.eigenvalues.array().max(T(0)).sqrt().matrix().template cast<Complex<T>>().asDiagonal() *
      ss.unitary.adjoint();
  const M fix = kron<T>(M(sigma_sqrt * marg_inv_sqrt), M(M::Identity(db, db)));
  inst.honest_state = hermitize<T>(M(fix * state * fix.adjoint()));
  inst.reference = inst.statistics(inst.honest_state);
  inst.p_bot = prm.p_key;
  inst.p_sift = prm.p_key;

  M g = M::Zero(4 * n, n);
  std::vector<M> z_ops;
  for (Eigen::Index r = 0; r < 4; ++r) {
    const auto sp = eigh<T>(regions.key[r]);
    const M root = sp.unitary *
                   sp.eigenvalues.array().max(T(0)).sqrt().matrix().template cast<Complex<T>>().asDiagonal() *
                   sp.unitary.adjoint();
    g += kron<T>(basis_ket<T>(4, r), kron<T>(M(M::Identity(4, 4)), root));
    z_ops.push_back(detail::dephasing_kraus<T>(4, r, n));
  }
  inst.key_map = KrausMap<T>({g});
  inst.pinching = KrausMap<T>(z_ops);
  inst.branches.push_back({inst.key_map, inst.pinching, M::Identity(n, n)});
  detail::reduce_branches<T>(inst, T(0), M::Zero(n, n));

  RMat<T> joint(4, 4);  // (Bob's sector z, Alice's symbol x)
  for (int z = 0; z < 4; ++z)
    for (int x = 0; x < 4; ++x) joint(z, x) = hs_inner<T>(kron<T>(ket_bra<T>(4, x, x), regions.key[z]), inst.honest_state);
  inst.h_cond_bits = detail::conditional_entropy_bits<T>(joint);

  // Shifting Alice's symbol while rotating Bob's mode by pi/2 permutes symbols, sectors and
  // test outcomes together and fixes sigma_A and the reference distribution.
  M rotate = M::Zero(n, n);
  for (int x = 0; x < 4; ++x)
    for (Eigen::Index k = 0; k < db; ++k) rotate(((x + 1) % 4) * db + k, x * db + k) = phase[k % 4];
  inst.invariant_blocks = detail::cyclic_eigenspaces<T>(rotate, 4);
  inst.validate();
  return inst;
}

}  // namespace qkdcone
