// SPDX-License-Identifier: MIT
#pragma once

#include "qkdcone/ipm.hpp"
#include "qkdcone/protocols.hpp"
#include "qkdcone/std_cones.hpp"

#include <atomic>
#include <functional>
#include <numbers>
#include <thread>

namespace qkdcone {

template <class T = double>
struct SecurityParams {
  T eps_ec = T(1e-11);
  T eps_pa = T(9e-11);
  T eps_pe_bar = T(9e-11);
  T n = T(1e6);

  void validate() const {
    for (const T e : {eps_ec, eps_pa, eps_pe_bar})
      if (!(e > 0 && e < 1)) throw std::invalid_argument("SecurityParams: epsilon values must lie in (0, 1)");
    if (!(n >= 1) || std::floor(n) != n) throw std::invalid_argument("SecurityParams: n must be a positive integer");
  }
};

// Statistical margin for which 2^|C| exp(-n delta^2 / 2) equals eps_pe_bar.
template <class T>
T delta_from_bhc(T n, Eigen::Index alphabet_size, T eps_pe_bar) {
  if (!(n >= 1)) throw std::invalid_argument("delta_from_bhc: n must be at least 1");
  if (!(eps_pe_bar > 0 && eps_pe_bar < 1)) throw std::invalid_argument("delta_from_bhc: eps must lie in (0, 1)");
  return std::sqrt(2 * (T(alphabet_size) * std::numbers::ln2_v<T> + std::log(1 / eps_pe_bar)) / n);
}

template <class T>
T leak_ec(T n, T p_sift, T h_cond_bits, T f_eff, T eps_ec) {
  if (!(p_sift >= 0 && p_sift <= 1)) throw std::invalid_argument("leak_ec: sifting probability must lie in [0, 1]");
  if (!(h_cond_bits >= 0)) throw std::invalid_argument("leak_ec: conditional entropy must be nonnegative");
  if (!(f_eff >= 1)) throw std::invalid_argument("leak_ec: efficiency must be at least 1");
  return p_sift * n * f_eff * h_cond_bits + std::ceil(std::log2(1 / eps_ec));
}

template <class T>
T key_length(T n, T h_bits, T alpha, T eps_pa, T leak_bits) {
  if (!(alpha > 1 && alpha < 2)) throw std::invalid_argument("key_length: alpha must lie in (1, 2)");
  return n * h_bits - alpha / (alpha - 1) * std::log2(1 / eps_pa) - leak_bits + 2;
}

enum class ConeVariant { Fast, True };

inline const char* to_string(ConeVariant v) { return v == ConeVariant::Fast ? "fast" : "true"; }

// Variable indices of an assembled program, for evaluating candidate points.
struct ProgramLayout {
  Eigen::Index omega = 0;  // first omega coordinate (reduced when the fast program uses invariant blocks)
  Eigen::Index h_kl = 0, h_qkd = 0;
  std::vector<Eigen::Index> q;  // per outcome of the full alphabet
};

template <class T = double>
struct AssembledProgram {
  ConicProgram<T> program;
  ProgramLayout layout;
};

namespace detail {

template <class T>
bool is_identity_domain(const CMat<T>& v) {
  return v.rows() == v.cols() && max_abs<T>(CMat<T>(v - CMat<T>::Identity(v.rows(), v.cols()))) == 0;
}

// Column k holds svec(V^dagger E_k V) for the k-th svec unit E_k of the domain space.
template <class T>
RMat<T> congruence_matrix(const CMat<T>& v) {
  const Eigen::Index n = v.rows(), q = v.cols();
  RMat<T> out(q * q, n * n);
  for (Eigen::Index k = 0; k < n * n; ++k) out.col(k) = svec<T>(CMat<T>(v.adjoint() * svec_basis<T>(n, k) * v));
  return out;
}

// Orthonormal svec coordinates for operators block diagonal over the given isometries.
template <class T>
RMat<T> block_diagonal_basis(const std::vector<CMat<T>>& blocks, Eigen::Index n) {
  Eigen::Index width = 0;
  for (const auto& v : blocks) width += v.cols() * v.cols();
  RMat<T> out(n * n, width);
  Eigen::Index col = 0;
  for (const auto& v : blocks)
    for (Eigen::Index k = 0; k < v.cols() * v.cols(); ++k)
      out.col(col++) = svec<T>(CMat<T>(v * svec_basis<T>(v.cols(), k) * v.adjoint()));
  return out;
}

// Prepends an untouched leading coordinate to a subspace basis.
template <class T>
RMat<T> with_leading_coordinate(const RMat<T>& basis) {
  RMat<T> out = RMat<T>::Zero(basis.rows() + 1, basis.cols() + 1);
  out(0, 0) = 1;
  out.bottomRightCorner(basis.rows(), basis.cols()) = basis;
  return out;
}

template <class T>
struct ProgramAssembler {
  const ProtocolInstance<T>& inst;
  ProgramBuilder<T> b;
  Eigen::Index n_ab = 0;
  std::optional<RMat<T>> omega_basis;  // omega = smat(basis * y) when set

  explicit ProgramAssembler(const ProtocolInstance<T>& i) : inst(i), n_ab(i.dim_ab()) {}

  // Tr[O omega] as an expression in the omega coordinates starting at `omega`.
  AffineExpr<T> trace_with(const CMat<T>& op, Eigen::Index omega) const {
    AffineExpr<T> e;
    RVec<T> w = svec<T>(op);
    // projection onto the invariant basis leaves round-off where the exact coefficient is zero
    const T cut = omega_basis ? T(1e-15) : T(0);
    if (omega_basis) w = omega_basis->transpose() * w;
    for (Eigen::Index k = 0; k < w.size(); ++k)
      if (std::abs(w(k)) > cut) e.add(omega + k, w(k));
    return e;
  }

  // svec(V^dagger omega V) == svec(rho) for rho at `rho`.
  void link_congruence(const CMat<T>& v, Eigen::Index omega, Eigen::Index rho) {
    RMat<T> c = congruence_matrix<T>(v);
    const T cut = omega_basis ? T(1e-15) : T(0);
    if (omega_basis) c = c * *omega_basis;
    for (Eigen::Index r = 0; r < c.rows(); ++r) {
      const auto row = b.add_row(0);
      for (Eigen::Index k = 0; k < c.cols(); ++k)
        if (std::abs(c(r, k)) > cut) b.add_coef(row, omega + k, c(r, k));
      b.add_coef(row, rho + r, -1);
    }
  }

  // Tr_B omega = sigma_A, one row per svec coordinate of the A space.
  void add_marginal(Eigen::Index omega) {
    const Eigen::Index da = inst.dim_a, db = inst.dim_b;
    const RVec<T> target = svec<T>(inst.sigma_a);
    for (Eigen::Index k = 0; k < da * da; ++k) {
      const CMat<T> lifted = kron<T>(svec_basis<T>(da, k), CMat<T>(CMat<T>::Identity(db, db)));
      auto e = trace_with(lifted, omega);
      e.constant = -target(k);
      b.add_equality(e);
    }
  }

  // p-slot of the KL cone tied to the statistics Tr[O_c omega].
  void link_statistics(const std::vector<Eigen::Index>& outcomes, Eigen::Index p_slot, Eigen::Index omega) {
    for (std::size_t i = 0; i < outcomes.size(); ++i) {
      auto e = trace_with(inst.observables[outcomes[i]], omega);
      e.add(p_slot + Eigen::Index(i), -1);
      b.add_equality(e);
    }
  }

  void add_acceptance(const std::vector<Eigen::Index>& q, T delta) {
    std::vector<AffineExpr<T>> diff(q.size());
    for (std::size_t c = 0; c < q.size(); ++c) diff[c].add(q[c], 1).constant = -inst.reference[c];
    l1_reformulate<T>(b, delta, diff);
  }

  void add_normalization(const std::vector<Eigen::Index>& q) {
    AffineExpr<T> e;
    for (const auto i : q) e.add(i, 1);
    e.constant = -1;
    b.add_equality(e);
  }
};

}  // namespace detail

// Conic program for h (nats) at Renyi parameter alpha in (1, 2) and acceptance radius delta.
// Fast: exact formulation with the fast cone at 1/alpha. True: relaxed bound with coefficient
// (p_bot - delta), or with q(bot) pinned to `fixed_q_bot` for the nested search.
template <class T>
AssembledProgram<T> assemble_program(const ProtocolInstance<T>& inst, ConeVariant variant, T alpha, T delta,
                                     std::optional<T> fixed_q_bot = std::nullopt) {
  // alpha = 2 keeps both cone exponents at 1/2 or above; only the key length needs alpha < 2
  if (!(alpha > 1 && alpha <= 2)) throw std::invalid_argument("assemble_program: alpha must lie in (1, 2]");
  if (!(delta >= 0)) throw std::invalid_argument("assemble_program: delta must be nonnegative");
  detail::ProgramAssembler<T> as(inst);
  auto& b = as.b;
  const Eigen::Index nc = inst.alphabet_size(), bot = inst.bot_index;
  AssembledProgram<T> out;
  ProgramLayout& lay = out.layout;
  lay.q.assign(nc, 0);
  const T prefactor = alpha / (alpha - 1);

  if (variant == ConeVariant::Fast) {
    if (fixed_q_bot) throw std::invalid_argument("assemble_program: q(bot) pinning applies to the true cone only");
    const auto& fc = inst.fast_cone;
    const bool direct = detail::is_identity_domain<T>(fc.domain);
    std::shared_ptr<Cone<T>> renyi_cone = std::make_shared<RenyiCone<T>>(at_alpha<T>(fc.spec, 1 / alpha));
    std::shared_ptr<Cone<T>> omega_cone = std::make_shared<PsdCone<T>>(as.n_ab);
    if (!inst.invariant_blocks.empty()) {
      as.omega_basis = detail::block_diagonal_basis<T>(inst.invariant_blocks, as.n_ab);
      if (direct)
        renyi_cone = std::make_shared<SubspaceCone<T>>(renyi_cone, detail::with_leading_coordinate<T>(*as.omega_basis));
      else
        omega_cone = std::make_shared<SubspaceCone<T>>(omega_cone, *as.omega_basis);
    }
    const auto renyi = b.add_cone(renyi_cone);
    if (direct) {
      lay.omega = renyi[1];
    } else {
      lay.omega = b.add_cone(omega_cone)[0];
      as.link_congruence(fc.domain, lay.omega, renyi[1]);
    }
    std::vector<Eigen::Index> tests;
    for (Eigen::Index c = 0; c < nc; ++c)
      if (c != bot) tests.push_back(c);
    const Eigen::Index nt = static_cast<Eigen::Index>(tests.size());
    const auto kl = b.add_cone(std::make_shared<KLCone<T>>(nt));
    const auto lg = b.add_cone(std::make_shared<LogCone<T>>());
    lay.h_kl = kl[0];
    lay.h_qkd = lg[0];
    for (Eigen::Index i = 0; i < nt; ++i) lay.q[tests[i]] = kl[1 + i];
    lay.q[bot] = lg[1];
    as.link_statistics(tests, kl[1 + nt], lay.omega);
    // w = p_bot (-u + c0 + Tr[L omega])
    auto w = as.trace_with(fc.affine_observable, lay.omega);
    for (auto& [i, a] : w.terms) a *= -inst.p_bot;
    w.add(lg[2], 1).add(renyi[0], inst.p_bot);
    w.constant = -inst.p_bot * fc.affine_constant;
    b.add_equality(w);
    b.add_objective(lay.h_kl, prefactor);
    b.add_objective(lay.h_qkd, -prefactor);
  } else {
    const T gamma = alpha / (2 * alpha - 1);
    const T q_bot_coef = fixed_q_bot ? *fixed_q_bot : inst.p_bot - delta;
    if (!fixed_q_bot && !(q_bot_coef > 0))
      throw std::invalid_argument("assemble_program: delta >= p(bot) makes the relaxed bound vacuous; use the nested q(bot) mode");
    if (fixed_q_bot && !(*fixed_q_bot >= 0 && *fixed_q_bot <= 1))
      throw std::invalid_argument("assemble_program: pinned q(bot) must lie in [0, 1]");
    std::vector<typename ProgramBuilder<T>::Block> blocks;
    std::ptrdiff_t omega_owner = -1;
    for (std::size_t k = 0; k < inst.true_cones.size(); ++k) {
      blocks.push_back(b.add_cone(std::make_shared<RenyiCone<T>>(at_alpha<T>(inst.true_cones[k].spec, gamma))));
      if (omega_owner < 0 && detail::is_identity_domain<T>(inst.true_cones[k].domain)) omega_owner = std::ptrdiff_t(k);
    }
    lay.omega = omega_owner >= 0 ? blocks[omega_owner][1] : b.add_cone(std::make_shared<PsdCone<T>>(as.n_ab))[0];
    AffineExpr<T> psi_trace, u_total;
    for (std::size_t k = 0; k < blocks.size(); ++k) {
      const auto& spec = inst.true_cones[k].spec;
      if (std::ptrdiff_t(k) != omega_owner) as.link_congruence(inst.true_cones[k].domain, lay.omega, blocks[k][1]);
      const Eigen::Index sigma = blocks[k][1 + spec.q * spec.q];
      for (Eigen::Index j = 0; j < spec.m; ++j) psi_trace.add(sigma + (j + 1) * (j + 1) - 1, 1);
      u_total.add(blocks[k][0], 1);
    }
    psi_trace.constant = -1;
    b.add_equality(psi_trace);
    const auto kl = b.add_cone(std::make_shared<KLCone<T>>(nc));
    const auto lg = b.add_cone(std::make_shared<LogCone<T>>());
    lay.h_kl = kl[0];
    lay.h_qkd = lg[0];
    std::vector<Eigen::Index> all(nc);
    for (Eigen::Index c = 0; c < nc; ++c) {
      all[c] = c;
      lay.q[c] = kl[1 + c];
    }
    as.link_statistics(all, kl[1 + nc], lay.omega);
    b.add_equality(AffineExpr<T>{-1, {{lg[1], T(1)}}});
    u_total.add(lg[2], 1);
    b.add_equality(u_total);
    if (fixed_q_bot) b.add_equality(AffineExpr<T>{-*fixed_q_bot, {{lay.q[bot], T(1)}}});
    b.add_objective(lay.h_kl, prefactor);
    b.add_objective(lay.h_qkd, q_bot_coef / (gamma - 1));
  }
  as.add_normalization(lay.q);
  as.add_marginal(lay.omega);
  as.add_acceptance(lay.q, delta);
  out.program = b.build();
  return out;
}

// Fast objective (nats) at q = p and omega = the honest state: an upper bound on the fast optimum.
// Empty when the honest key-branch state is singular.
template <class T>
std::optional<T> honest_fast_objective(const ProtocolInstance<T>& inst, T alpha) {
  const auto& fc = inst.fast_cone;
  const CMat<T> rho = fc.domain.adjoint() * inst.honest_state * fc.domain;
  if (!is_positive_definite<T>(hermitize<T>(rho))) return std::nullopt;
  try {
    const T psi = psi_hat<T>(at_alpha<T>(fc.spec, 1 / alpha), hermitize<T>(rho)) + fc.affine_constant +
                  hs_inner<T>(fc.affine_observable, inst.honest_state);
    if (!(psi > 0)) return std::nullopt;
    return -alpha / (alpha - 1) * inst.p_bot * std::log(psi);
  } catch (const DomainError&) {
    return std::nullopt;
  }
}

template <class T = double>
struct KeyRateResult {
  T alpha_used = 0, pk_used = 0, delta_used = 0;
  T h_bits = 0;  // certified per-round entropy (dual objective / ln 2)
  T h_primal_bits = 0;
  T leak_bits = 0;
  T ell = 0;
  T rate = 0;  // max(ell, 0) / n
  std::string status;
  bool solved = false;  // a usable bound was obtained (solve or analytic bound)
  int iterations = 0;
  double time_s = 0;
};

template <class T = double>
struct PipelineOptions {
  SolverOptions<T> solver;
  bool nested_q_bot = false;  // true cone only
  T golden_tolerance = T(0.02);  // relative to the initial q(bot) bracket
  bool prune_with_honest_bound = true;
};

namespace detail {

template <class T>
SolveResult<T> solve_true_nested(const ProtocolInstance<T>& inst, T alpha, T delta, const PipelineOptions<T>& opts,
                                 int& total_iters) {
  const T lo0 = std::max(T(0), inst.p_bot - delta), hi0 = std::min(T(1), inst.p_bot + delta);
  auto inner = [&](T t) {
    auto res = solve(assemble_program<T>(inst, ConeVariant::True, alpha, delta, t).program, opts.solver);
    total_iters += res.iterations;
    return res;
  };
  if (hi0 - lo0 <= T(0)) return inner(lo0);
  const T ratio = (std::sqrt(T(5)) - 1) / 2;
  T lo = lo0, hi = hi0;
  T x1 = hi - ratio * (hi - lo), x2 = lo + ratio * (hi - lo);
  SolveResult<T> r1 = inner(x1), r2 = inner(x2);
  auto value = [](const SolveResult<T>& r) {
    return r.optimal() ? r.primal_objective : std::numeric_limits<T>::infinity();
  };
  while (hi - lo > opts.golden_tolerance * (hi0 - lo0)) {
    if (value(r1) <= value(r2)) {
      hi = x2;
      x2 = x1;
      r2 = std::move(r1);
      x1 = hi - ratio * (hi - lo);
      r1 = inner(x1);
    } else {
      lo = x1;
      x1 = x2;
      r1 = std::move(r2);
      x2 = lo + ratio * (hi - lo);
      r2 = inner(x2);
    }
  }
  return value(r1) <= value(r2) ? r1 : r2;
}

}  // namespace detail

// Full pipeline at one (instance, alpha): delta -> program -> solve -> key length.
template <class T>
KeyRateResult<T> evaluate_key_rate(const ProtocolInstance<T>& inst, T pk, const SecurityParams<T>& sec, ConeVariant variant,
                                   T alpha, T ec_efficiency, const PipelineOptions<T>& opts = {}) {
  sec.validate();
  const auto start = std::chrono::steady_clock::now();
  KeyRateResult<T> res;
  res.alpha_used = alpha;
  res.pk_used = pk;
  res.delta_used = delta_from_bhc<T>(sec.n, inst.alphabet_size(), sec.eps_pe_bar);
  res.leak_bits = leak_ec<T>(sec.n, inst.p_sift, inst.h_cond_bits, ec_efficiency, sec.eps_ec);
  auto finish = [&](T h_bits, T h_primal) {
    res.h_bits = h_bits;
    res.h_primal_bits = h_primal;
    res.ell = key_length<T>(sec.n, h_bits, alpha, sec.eps_pa, res.leak_bits);
    res.rate = std::max(T(0), res.ell) / sec.n;
    res.time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  };

  if (variant == ConeVariant::Fast && opts.prune_with_honest_bound) {
    // ell is increasing in h; if even the honest-point value gives no key, skip the solve.
    if (const auto upper = honest_fast_objective<T>(inst, alpha)) {
      const T upper_bits = *upper / std::numbers::ln2_v<T>;
      if (key_length<T>(sec.n, upper_bits, alpha, sec.eps_pa, res.leak_bits) <= 0) {
        res.status = "bound_no_key";
        res.solved = true;
        finish(upper_bits, upper_bits);
        res.rate = 0;
        return res;
      }
    }
  }

  SolveResult<T> sol;
  int iters = 0;
  try {
    if (variant == ConeVariant::True && opts.nested_q_bot) {
      sol = detail::solve_true_nested<T>(inst, alpha, res.delta_used, opts, iters);
    } else {
      sol = solve(assemble_program<T>(inst, variant, alpha, res.delta_used).program, opts.solver);
      iters = sol.iterations;
    }
  } catch (const std::invalid_argument& e) {
    res.status = std::string("invalid: ") + e.what();
    finish(T(0), T(0));
    res.rate = 0;
    return res;
  }
  res.iterations = iters;
  res.status = to_string(sol.status);
  if (!sol.optimal()) {
    finish(T(0), T(0));
    res.rate = 0;
    return res;
  }
  res.solved = true;
  finish(sol.dual_objective / std::numbers::ln2_v<T>, sol.primal_objective / std::numbers::ln2_v<T>);
  return res;
}

// alpha = 1 + 10^t for t evenly spaced in [log10 lo, log10 hi].
template <class T = double>
std::vector<T> log_spaced_alpha_grid(T lo = T(1e-7), T hi = T(1e-1), int points = 12) {
  if (points < 1 || !(lo > 0) || !(hi >= lo)) throw std::invalid_argument("log_spaced_alpha_grid: invalid range");
  std::vector<T> out;
  for (int i = 0; i < points; ++i) {
    const T t = points == 1 ? std::log10(lo) : std::log10(lo) + (std::log10(hi) - std::log10(lo)) * T(i) / T(points - 1);
    out.push_back(1 + std::pow(T(10), t));
  }
  return out;
}

template <class T = double>
std::vector<T> default_pk_grid() {
  return {T(0.1), T(0.2), T(0.3), T(0.4), T(0.5), T(0.6), T(0.7), T(0.8), T(0.9), T(0.95), T(0.99)};
}

template <class T = double>
struct OptimizationResult {
  KeyRateResult<T> best;
  std::vector<KeyRateResult<T>> evaluations;  // pk-major, alpha-minor
  bool any_success = false;
};

// Runs `count` independent tasks on up to `jobs` threads; task i writes only slot i.
inline void parallel_for(std::size_t count, unsigned jobs, const std::function<void(std::size_t)>& task) {
  jobs = std::max(1u, std::min<unsigned>(jobs, static_cast<unsigned>(count)));
  if (jobs <= 1) {
    for (std::size_t i = 0; i < count; ++i) task(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(count);
  std::vector<std::thread> pool;
  for (unsigned w = 0; w < jobs; ++w)
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < count; i = next++) {
        try {
          task(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

// Grid search over (pk, alpha). The best point maximizes the rate; ties go to the earliest grid point.
template <class T>
OptimizationResult<T> optimize_parameters(const std::function<ProtocolInstance<T>(T)>& instance_builder,
                                          const SecurityParams<T>& sec, ConeVariant variant,
                                          const std::vector<T>& alpha_grid, const std::vector<T>& pk_grid,
                                          T ec_efficiency, unsigned jobs = 1, const PipelineOptions<T>& opts = {}) {
  if (alpha_grid.empty() || pk_grid.empty()) throw std::invalid_argument("optimize_parameters: empty grid");
  sec.validate();
  std::vector<std::optional<ProtocolInstance<T>>> instances(pk_grid.size());
  std::vector<std::string> build_errors(pk_grid.size());
  for (std::size_t k = 0; k < pk_grid.size(); ++k) {
    try {
      instances[k] = instance_builder(pk_grid[k]);
    } catch (const std::invalid_argument& e) {
      build_errors[k] = e.what();
    }
  }
  OptimizationResult<T> out;
  out.evaluations.resize(pk_grid.size() * alpha_grid.size());
  parallel_for(out.evaluations.size(), jobs, [&](std::size_t i) {
    const std::size_t k = i / alpha_grid.size(), a = i % alpha_grid.size();
    if (!instances[k]) {
      KeyRateResult<T> r;
      r.alpha_used = alpha_grid[a];
      r.pk_used = pk_grid[k];
      r.status = "invalid: " + build_errors[k];
      out.evaluations[i] = r;
      return;
    }
    out.evaluations[i] = evaluate_key_rate<T>(*instances[k], pk_grid[k], sec, variant, alpha_grid[a], ec_efficiency, opts);
  });
  for (const auto& r : out.evaluations) {
    if (!r.solved) continue;
    if (!out.any_success || r.rate > out.best.rate) out.best = r;
    out.any_success = true;
  }
  if (!out.any_success) out.best = out.evaluations.front();
  return out;
}

}  // namespace qkdcone
