// SPDX-License-Identifier: MIT
#pragma once

#include "qkdcone/program.hpp"

#include <Eigen/Cholesky>
#include <Eigen/QR>

#include <chrono>
#include <optional>
#include <ostream>
#include <sstream>

namespace qkdcone {

enum class SolveStatus { Optimal, PrimalInfeasible, DualInfeasible, IterationLimit, NumericalFailure };

inline const char* to_string(SolveStatus s) {
  switch (s) {
    case SolveStatus::Optimal: return "optimal";
    case SolveStatus::PrimalInfeasible: return "primal_infeasible";
    case SolveStatus::DualInfeasible: return "dual_infeasible";
    case SolveStatus::IterationLimit: return "iteration_limit";
    case SolveStatus::NumericalFailure: return "numerical_failure";
  }
  return "unknown";
}

template <class T = double>
struct SolverOptions {
  T gap_tol = T(1e-8);
  T feas_tol = T(1e-9);
  T infeas_tol = T(1e-9);
  int max_iters = 400;
  T regularization = T(1e-15);
  T step_fraction = T(0.99);     // fraction of the membership-verified step to the boundary
  T backtrack = T(0.8);
  T predict_proximity = T(0.5);  // predict only from points at least this central
  T max_proximity = T(0.9);      // neighbourhood accepted after a step
  bool third_order_correction = true;
  std::ostream* log = nullptr;
};

template <class T = double>
struct SolveResult {
  SolveStatus status = SolveStatus::NumericalFailure;
  RVec<T> x, y, s;
  T primal_objective = 0, dual_objective = 0;
  T gap = 0;            // relative duality gap
  T primal_residual = 0, dual_residual = 0;
  int iterations = 0;
  double wall_time_s = 0;
  std::string diagnostics;

  [[nodiscard]] bool optimal() const { return status == SolveStatus::Optimal; }
};

namespace detail {

// Dropped-row and scaling bookkeeping of the presolve.
template <class T>
struct Presolved {
  RMat<T> A;
  RVec<T> b, c;
  std::vector<Eigen::Index> kept_rows;
  RVec<T> row_scale;  // A_kept = diag(1/row_scale) A_orig
  T obj_scale = 1;
  bool inconsistent = false;
};

template <class T>
Presolved<T> presolve(const ConicProgram<T>& prog) {
  Presolved<T> out;
  const Eigen::Index m = prog.num_rows();
  out.obj_scale = std::max(T(1), prog.c.cwiseAbs().maxCoeff());
  if (prog.c.size() == 0) out.obj_scale = 1;
  out.c = prog.c / out.obj_scale;
  if (m == 0) {
    out.A.resize(0, prog.num_vars());
    out.b.resize(0);
    out.row_scale.resize(0);
    return out;
  }
  RVec<T> norms(m);
  for (Eigen::Index i = 0; i < m; ++i) norms(i) = std::max(prog.A.row(i).norm(), T(1e-300));
  const RMat<T> scaled = norms.cwiseInverse().asDiagonal() * prog.A;
  const RVec<T> bs = prog.b.cwiseQuotient(norms);
  Eigen::ColPivHouseholderQR<RMat<T>> qr(scaled.transpose());
  qr.setThreshold(T(1e-11));
  const Eigen::Index rank = qr.rank();
  std::vector<Eigen::Index> kept;
  for (Eigen::Index j = 0; j < rank; ++j) kept.push_back(qr.colsPermutation().indices()(j));
  std::sort(kept.begin(), kept.end());
  out.kept_rows = kept;
  out.A.resize(rank, prog.num_vars());
  out.b.resize(rank);
  out.row_scale.resize(rank);
  for (Eigen::Index j = 0; j < rank; ++j) {
    out.A.row(j) = scaled.row(kept[j]);
    out.b(j) = bs(kept[j]);
    out.row_scale(j) = norms(kept[j]);
  }
  if (rank < m) {
    // dropped rows must be combinations of kept rows with matching right-hand sides
    const RMat<T> basis = out.A.transpose();
    Eigen::ColPivHouseholderQR<RMat<T>> bqr(basis);
    for (Eigen::Index i = 0; i < m; ++i) {
      if (std::binary_search(kept.begin(), kept.end(), i)) continue;
      const RVec<T> coef = bqr.solve(RVec<T>(scaled.row(i).transpose()));
      if (std::abs(coef.dot(out.b) - bs(i)) > T(1e-8) * std::max(T(1), std::abs(bs(i)))) out.inconsistent = true;
    }
  }
  return out;
}

}  // namespace detail

// Homogeneous self-dual embedding of  min c'x, Ax = b, x in K  with the path-following
// predictor/centering scheme for cones given only by barrier oracles.
template <class T>
class ConicSolver {
 public:
  ConicSolver(const ConicProgram<T>& prog, SolverOptions<T> opts) : prog_(prog), opt_(std::move(opts)) {
    prog_.validate();
    for (const auto& k : prog_.cones) cones_.push_back(k->clone());
    nu_ = prog_.nu() + 1;
  }

  SolveResult<T> solve() {
    const auto t0 = std::chrono::steady_clock::now();
    SolveResult<T> res;
    pre_ = detail::presolve(prog_);
    if (pre_.inconsistent) {
      res.status = SolveStatus::PrimalInfeasible;
      res.diagnostics = "presolve: dependent equality rows with inconsistent right-hand sides";
      return res;
    }
    A_ = pre_.A;
    b_ = pre_.b;
    c_ = pre_.c;
    n_ = c_.size();
    m_ = b_.size();
    initialize();
    int iter = 0;
    std::string failure;
    for (;; ++iter) {
      if (!evaluate_hessians()) {
        failure = "Hessian factorization failed at an accepted iterate";
        res.status = SolveStatus::NumericalFailure;
        break;
      }
      const auto st = check_termination();
      log_iteration(iter);
      if (st) {
        res.status = *st;
        break;
      }
      if (iter >= opt_.max_iters) {
        res.status = SolveStatus::IterationLimit;
        break;
      }
      if (!factorize()) {
        failure = "KKT Schur complement is singular beyond regularization";
        res.status = SolveStatus::NumericalFailure;
        break;
      }
      const T prox = proximity_exact();
      bool moved = false;
      if (prox < opt_.predict_proximity) moved = take_step(true);
      if (!moved) moved = take_step(false);
      if (!moved) {
        failure = "line search could not find an interior point in the neighbourhood";
        res.status = SolveStatus::NumericalFailure;
        break;
      }
    }
    res.iterations = iter;
    fill_result(res);
    if (!failure.empty()) {
      std::ostringstream os;
      os << failure << " (mu=" << mu_ << ", tau=" << pt_.tau << ", kappa=" << pt_.kappa
         << ", schur condition estimate=" << schur_condition_ << ")";
      res.diagnostics = os.str();
    }
    res.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return res;
  }

 private:
  struct Point {
    RVec<T> x, y, z;
    T tau = 1, kappa = 1;
  };
  struct Direction {
    RVec<T> x, y, z;
    T tau = 0, kappa = 0;
  };
  struct Rhs {
    RVec<T> x, y, z;
    T tau = 0, kappa = 0;
  };

  Eigen::Index offset(std::size_t k) const { return prog_.offsets[k]; }
  Eigen::Index size(std::size_t k) const { return cones_[k]->dim(); }

  template <class V>
  auto seg(V& v, std::size_t k) const {
    return v.segment(offset(k), size(k));
  }

  void initialize() {
    pt_.x.resize(n_);
    pt_.z.resize(n_);
    for (std::size_t k = 0; k < cones_.size(); ++k) {
      RVec<T> xk(size(k));
      cones_[k]->initial_point(std::span<T>(xk.data(), xk.size()));
      if (!cone_set_point(*cones_[k], xk)) throw std::logic_error("ConicSolver: cone initial point is not interior");
      seg(pt_.x, k) = xk;
      seg(pt_.z, k) = -cone_gradient(*cones_[k]);
    }
    pt_.y = RVec<T>::Zero(m_);
    pt_.tau = 1;
    pt_.kappa = 1;
    update_mu();
    grad_.resize(n_);
    for (std::size_t k = 0; k < cones_.size(); ++k) seg(grad_, k) = cone_gradient(*cones_[k]);
  }

  void update_mu() { mu_ = (pt_.x.dot(pt_.z) + pt_.tau * pt_.kappa) / nu_; }

  // Cones are positioned at pt_.x on entry.
  bool evaluate_hessians() {
    hess_.resize(cones_.size());
    chol_.resize(cones_.size());
    for (std::size_t k = 0; k < cones_.size(); ++k) {
      cones_[k]->hessian(hess_[k]);
      if (!factor_block(k)) return false;
    }
    return true;
  }

  bool factor_block(std::size_t k) {
    const RMat<T>& h = hess_[k];
    const T scale = std::max(T(1e-300), h.diagonal().cwiseAbs().maxCoeff());
    T jitter = 0;
    for (int attempt = 0; attempt < 8; ++attempt) {
      RMat<T> hj = h;
      if (jitter > 0) hj.diagonal().array() += jitter;
      chol_[k].compute(hj);
      if (chol_[k].info() == Eigen::Success) return true;
      jitter = jitter == 0 ? T(1e-14) * scale : jitter * 100;
    }
    return false;
  }

  // (mu H + reg)^{-1} v, blockwise.
  RVec<T> hinv(const RVec<T>& v) const {
    RVec<T> out(n_);
    for (std::size_t k = 0; k < cones_.size(); ++k) seg(out, k) = chol_[k].solve(RVec<T>(seg(v, k))) / mu_;
    return out;
  }
  RVec<T> hmul(const RVec<T>& v) const {
    RVec<T> out(n_);
    for (std::size_t k = 0; k < cones_.size(); ++k) seg(out, k) = hess_[k] * seg(v, k);
    return out;
  }

  bool factorize() {
    // static regularization enters through the Schur diagonal; the cone blocks are exact up to jitter
    hinv_at_ = RMat<T>(n_, m_);
    for (Eigen::Index j = 0; j < m_; ++j) hinv_at_.col(j) = hinv(RVec<T>(A_.row(j).transpose()));
    RMat<T> schur = A_ * hinv_at_;
    schur = (schur + schur.transpose()).eval() * T(0.5);
    const T scale = m_ > 0 ? std::max(T(1e-300), schur.diagonal().maxCoeff()) : T(1);
    // smallest diagonal shift that factors; large fixed shifts cap the attainable feasibility
    T reg = opt_.regularization;
    for (int attempt = 0;; ++attempt, reg *= 100) {
      RMat<T> shifted = schur;
      shifted.diagonal().array() += reg * scale;
      schur_.compute(shifted);
      if (m_ == 0 || schur_.info() == Eigen::Success) break;
      if (attempt >= 5) return false;
    }
    if (m_ > 0) {
      const auto d = schur_.matrixL().toDenseMatrix().diagonal();
      schur_condition_ = (d.maxCoeff() / d.minCoeff()) * (d.maxCoeff() / d.minCoeff());
    }
    // the tau column of the reduced system
    dy1_ = m_ > 0 ? RVec<T>(schur_.solve(b_ + A_ * hinv(c_))) : RVec<T>(0);
    dx1_ = hinv(RVec<T>(A_.transpose() * dy1_ - c_));
    tau_den_ = b_.dot(dy1_) - c_.dot(dx1_) + pt_.kappa / pt_.tau;
    return std::isfinite(tau_den_) && tau_den_ > 0;
  }

  Direction solve_reduced(const Rhs& r) const {
    Direction d;
    const RVec<T> r1 = r.x + r.z;
    const RVec<T> ur1 = hinv(r1);
    RVec<T> dy0 = m_ > 0 ? RVec<T>(schur_.solve(r.y - A_ * ur1)) : RVec<T>(0);
    const RVec<T> dx0 = ur1 + hinv_at_ * dy0;
    d.tau = (r.tau + r.kappa / pt_.tau - b_.dot(dy0) + c_.dot(dx0)) / tau_den_;
    d.y = dy0 + d.tau * dy1_;
    d.x = dx0 + d.tau * dx1_;
    d.z = r.z - mu_ * hmul(d.x);
    d.kappa = (r.kappa - pt_.kappa * d.tau) / pt_.tau;
    return d;
  }

  // Residual of the full Newton system at d, for iterative refinement.
  Rhs system_residual(const Rhs& r, const Direction& d) const {
    Rhs e;
    e.y = r.y - (A_ * d.x - b_ * d.tau);
    e.x = r.x - (-A_.transpose() * d.y + c_ * d.tau - d.z);
    e.tau = r.tau - (b_.dot(d.y) - c_.dot(d.x) - d.kappa);
    e.z = r.z - (d.z + mu_ * hmul(d.x));
    e.kappa = r.kappa - (pt_.tau * d.kappa + pt_.kappa * d.tau);
    return e;
  }

  static T rhs_norm(const Rhs& e) {
    return std::sqrt(e.x.squaredNorm() + e.y.squaredNorm() + e.z.squaredNorm() + e.tau * e.tau + e.kappa * e.kappa);
  }

  // Refinement continues while it shrinks the residual of the full system.
  Direction solve_system(const Rhs& r) const {
    Direction d = solve_reduced(r);
    Rhs e = system_residual(r, d);
    T err = rhs_norm(e);
    for (int pass = 0; pass < 4 && err > T(1e-15) * std::max(T(1), rhs_norm(r)); ++pass) {
      const Direction c = solve_reduced(e);
      Direction trial = d;
      trial.x += c.x;
      trial.y += c.y;
      trial.z += c.z;
      trial.tau += c.tau;
      trial.kappa += c.kappa;
      const Rhs e2 = system_residual(r, trial);
      const T err2 = rhs_norm(e2);
      if (!(err2 < err)) break;
      d = std::move(trial);
      e = e2;
      err = err2;
    }
    return d;
  }

  Rhs residuals() const {
    Rhs r;
    r.y = A_ * pt_.x - b_ * pt_.tau;
    r.x = -A_.transpose() * pt_.y + c_ * pt_.tau - pt_.z;
    r.tau = b_.dot(pt_.y) - c_.dot(pt_.x) - pt_.kappa;
    return r;
  }

  // max over cones of |z_k/mu + g_k|_{H_k^{-1}} using the factorized Hessians at the current point.
  T proximity_exact() const {
    T worst = 0;
    for (std::size_t k = 0; k < cones_.size(); ++k) {
      const RVec<T> r = RVec<T>(seg(pt_.z, k)) / mu_ + RVec<T>(seg(grad_, k));
      worst = std::max(worst, std::sqrt(std::max(T(0), r.dot(chol_[k].solve(r)))));
    }
    const T tk = pt_.tau * pt_.kappa / mu_;
    worst = std::max(worst, std::abs(tk - 1));
    return worst;
  }

  // Same measure at a trial point, using preconditioned CG on the trial Hessian with the
  // current factorization as preconditioner. Cones must be positioned at the trial point.
  T proximity_trial(const RVec<T>& z, const RVec<T>& grad, T mu) const {
    T worst = 0;
    for (std::size_t k = 0; k < cones_.size(); ++k) {
      const RVec<T> r = RVec<T>(seg(z, k)) / mu + RVec<T>(seg(grad, k));
      worst = std::max(worst, std::sqrt(std::max(T(0), pcg_energy(k, r))));
      if (worst > opt_.max_proximity) return worst;
    }
    return worst;
  }

  // r' H^{-1} r for the trial Hessian of cone k.
  T pcg_energy(std::size_t k, const RVec<T>& r) const {
    const Eigen::Index nk = r.size();
    RVec<T> w = RVec<T>::Zero(nk), res = r, p = chol_[k].solve(r), hp(nk);
    RVec<T> zres = p;
    T rz = res.dot(zres);
    const T tol = T(1e-6) * std::max(T(1e-300), std::sqrt(std::abs(rz)));
    for (int it = 0; it < 50; ++it) {
      cones_[k]->hessian_apply(std::span<const T>(p.data(), nk), std::span<T>(hp.data(), nk));
      const T php = p.dot(hp);
      if (!(php > 0)) return std::numeric_limits<T>::infinity();
      const T step = rz / php;
      w += step * p;
      res -= step * hp;
      zres = chol_[k].solve(res);
      const T rz_new = res.dot(zres);
      if (std::sqrt(std::abs(rz_new)) <= tol) break;
      p = zres + (rz_new / rz) * p;
      rz = rz_new;
    }
    return r.dot(w);
  }

  Direction second_order(const Direction& d1, bool predict) const {
    Rhs r;
    r.x = RVec<T>::Zero(n_);
    r.y = RVec<T>::Zero(m_);
    r.tau = 0;
    r.kappa = -d1.tau * d1.kappa;
    r.z = RVec<T>(n_);
    for (std::size_t k = 0; k < cones_.size(); ++k) {
      const RVec<T> dk = seg(d1.x, k);
      RVec<T> tk(size(k));
      cones_[k]->third_order(std::span<const T>(dk.data(), dk.size()), std::span<T>(tk.data(), tk.size()));
      seg(r.z, k) = T(-0.5) * mu_ * tk;
    }
    if (predict) r.z += mu_ * hmul(d1.x);
    return solve_system(r);
  }

  // Positions every cone at the trial point; false if any block leaves its cone.
  bool trial_interior(const Point& p) {
    if (!(p.tau > 0) || !(p.kappa > 0)) return false;
    for (std::size_t k = 0; k < cones_.size(); ++k) {
      const RVec<T> xk = seg(p.x, k);
      if (!cone_set_point(*cones_[k], xk)) return false;
    }
    return true;
  }

  Point along(const Direction& d1, const Direction* d2, T a) const {
    Point p;
    const T a2 = a * a;
    p.x = pt_.x + a * d1.x;
    p.y = pt_.y + a * d1.y;
    p.z = pt_.z + a * d1.z;
    p.tau = pt_.tau + a * d1.tau;
    p.kappa = pt_.kappa + a * d1.kappa;
    if (d2) {
      p.x += a2 * d2->x;
      p.y += a2 * d2->y;
      p.z += a2 * d2->z;
      p.tau += a2 * d2->tau;
      p.kappa += a2 * d2->kappa;
    }
    return p;
  }

  bool take_step(bool predict) {
    Rhs r;
    if (predict) {
      r = residuals();
      r.x = -r.x;
      r.y = -r.y;
      r.tau = -r.tau;
      r.z = -pt_.z;
      r.kappa = -pt_.tau * pt_.kappa;
    } else {
      r.x = RVec<T>::Zero(n_);
      r.y = RVec<T>::Zero(m_);
      r.tau = 0;
      r.z = -pt_.z - mu_ * grad_;
      r.kappa = mu_ - pt_.tau * pt_.kappa;
    }
    const Direction d1 = solve_system(r);
    std::optional<Direction> d2;
    if (opt_.third_order_correction) d2 = second_order(d1, predict);
    const Direction* d2p = d2 ? &*d2 : nullptr;

    // boundary along the curve by bisection on membership, then back off
    T lo = 0, hi = 1;
    if (trial_interior(along(d1, d2p, hi))) {
      lo = hi;
    } else {
      for (int it = 0; it < 30; ++it) {
        const T mid = (lo + hi) / 2;
        if (trial_interior(along(d1, d2p, mid)))
          lo = mid;
        else
          hi = mid;
      }
    }
    T a = lo >= 1 ? T(1) : opt_.step_fraction * lo;
    if (!predict) a = std::min(a, T(1));
    RVec<T> grad(n_);
    for (int attempt = 0; attempt < 60 && a > T(1e-9); ++attempt, a *= opt_.backtrack) {
      const Point p = along(d1, d2p, a);
      if (!trial_interior(p)) continue;
      for (std::size_t k = 0; k < cones_.size(); ++k) seg(grad, k) = cone_gradient(*cones_[k]);
      const T mu = (p.x.dot(p.z) + p.tau * p.kappa) / nu_;
      if (!(mu > 0)) continue;
      if (std::abs(p.tau * p.kappa / mu - 1) > opt_.max_proximity) continue;
      if (proximity_trial(p.z, grad, mu) > opt_.max_proximity) continue;
      pt_ = p;
      grad_ = grad;
      mu_ = mu;
      last_step_ = a;
      last_predict_ = predict;
      return true;
    }
    // restore cone positions to the current iterate
    for (std::size_t k = 0; k < cones_.size(); ++k) cone_set_point(*cones_[k], RVec<T>(seg(pt_.x, k)));
    return false;
  }

  struct Metrics {
    T pobj, dobj, abs_gap, rel_gap, pres, dres;
  };

  Metrics metrics() const {
    Metrics m;
    const T tau = pt_.tau;
    m.pobj = c_.dot(pt_.x) / tau;
    m.dobj = b_.dot(pt_.y) / tau;
    m.abs_gap = pt_.x.dot(pt_.z) / (tau * tau);
    m.rel_gap = m.abs_gap / std::max(T(1), std::min(std::abs(m.pobj), std::abs(m.dobj)));
    m.pres = (A_ * pt_.x - b_ * tau).norm() / (tau * (1 + b_.norm()));
    m.dres = (A_.transpose() * pt_.y + pt_.z - c_ * tau).norm() / (tau * (1 + c_.norm()));
    return m;
  }

  std::optional<SolveStatus> check_termination() {
    const Metrics m = metrics();
    const T obj_diff = std::abs(m.pobj - m.dobj) / std::max(T(1), std::min(std::abs(m.pobj), std::abs(m.dobj)));
    const bool gap_ok = m.rel_gap <= opt_.gap_tol && obj_diff <= 10 * opt_.gap_tol;
    if (gap_ok && m.pres <= opt_.feas_tol && m.dres <= opt_.feas_tol) return SolveStatus::Optimal;
    // infeasibility rays of the embedding
    const T by = b_.dot(pt_.y);
    if (by > 0) {
      const T ray = (A_.transpose() * pt_.y + pt_.z).norm() / by;
      if (ray <= opt_.infeas_tol && pt_.tau < T(1e-6) * std::max(T(1), pt_.kappa)) return SolveStatus::PrimalInfeasible;
    }
    const T cx = c_.dot(pt_.x);
    if (cx < 0) {
      const T ray = (A_ * pt_.x).norm() / -cx;
      if (ray <= opt_.infeas_tol && pt_.tau < T(1e-6) * std::max(T(1), pt_.kappa)) return SolveStatus::DualInfeasible;
    }
    if (mu_ < T(1e-14) && pt_.tau < T(1e-10) * std::max(T(1), pt_.kappa)) {
      // ill-posed: both rays vanish
      return SolveStatus::NumericalFailure;
    }
    return std::nullopt;
  }

  void log_iteration(int iter) {
    if (!opt_.log) return;
    const Metrics m = metrics();
    auto& os = *opt_.log;
    os << "iter " << iter << " mu " << mu_ << " gap " << m.rel_gap << " pobj " << m.pobj * pre_.obj_scale << " dobj "
       << m.dobj * pre_.obj_scale << " pres " << m.pres << " dres " << m.dres << " tau " << pt_.tau << " kappa "
       << pt_.kappa << " step " << last_step_ << (last_predict_ ? " P" : " C") << '\n';
  }

  void fill_result(SolveResult<T>& res) const {
    const Metrics m = metrics();
    const T tau = pt_.tau;
    res.x = pt_.x / tau;
    res.s = pt_.z / tau * pre_.obj_scale;
    res.y = RVec<T>::Zero(prog_.num_rows());
    for (std::size_t j = 0; j < pre_.kept_rows.size(); ++j)
      res.y(pre_.kept_rows[j]) = pt_.y(j) / tau / pre_.row_scale(j) * pre_.obj_scale;
    res.primal_objective = prog_.c.dot(res.x);
    res.dual_objective = prog_.b.dot(res.y);
    res.gap = m.rel_gap;
    res.primal_residual = m.pres;
    res.dual_residual = m.dres;
  }

  ConicProgram<T> prog_;
  SolverOptions<T> opt_;
  std::vector<std::unique_ptr<Cone<T>>> cones_;
  T nu_ = 1;
  detail::Presolved<T> pre_;
  RMat<T> A_;
  RVec<T> b_, c_;
  Eigen::Index n_ = 0, m_ = 0;
  Point pt_;
  RVec<T> grad_;
  T mu_ = 1;
  std::vector<RMat<T>> hess_;
  std::vector<Eigen::LLT<RMat<T>>> chol_;
  Eigen::LLT<RMat<T>> schur_;
  RMat<T> hinv_at_;
  RVec<T> dy1_, dx1_;
  T tau_den_ = 1;
  T schur_condition_ = 0;
  T last_step_ = 0;
  bool last_predict_ = false;
};

template <class T>
SolveResult<T> solve(const ConicProgram<T>& prog, const SolverOptions<T>& opts = {}) {
  return ConicSolver<T>(prog, opts).solve();
}

}  // namespace qkdcone
