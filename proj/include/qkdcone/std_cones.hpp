// SPDX-License-Identifier: MIT
#pragma once

#include "qkdcone/cone.hpp"
#include "qkdcone/program.hpp"

#include <Eigen/Cholesky>

#include <array>
#include <optional>

namespace qkdcone {

// Nonnegative orthant with barrier -sum ln x.
template <class T = double>
class NonnegCone final : public Cone<T> {
 public:
  explicit NonnegCone(Eigen::Index d) : d_(d) {
    if (d < 1) throw std::invalid_argument("NonnegCone: dimension must be positive");
  }
  [[nodiscard]] Eigen::Index dim() const override { return d_; }
  [[nodiscard]] T nu() const override { return T(d_); }
  [[nodiscard]] std::string name() const override { return "nonneg"; }
  [[nodiscard]] std::unique_ptr<Cone<T>> clone() const override { return std::make_unique<NonnegCone>(*this); }

  bool set_point(std::span<const T> x) override {
    x_ = as_vec<T>(x);
    valid_ = (x_.array() > 0).all() && x_.allFinite();
    return valid_;
  }
  void initial_point(std::span<T> x) const override { as_vec<T>(x).setOnes(); }
  [[nodiscard]] T barrier() const override { return -x_.array().log().sum(); }
  void gradient(std::span<T> out) const override { as_vec<T>(out) = -x_.cwiseInverse(); }
  void hessian_apply(std::span<const T> dir, std::span<T> out) const override {
    as_vec<T>(out) = as_vec<T>(dir).array() / x_.array().square();
  }
  void third_order(std::span<const T> dir, std::span<T> out) const override {
    as_vec<T>(out) = -2 * as_vec<T>(dir).array().square() / x_.array().cube();
  }
  void hessian(RMat<T>& out) const override { out = x_.array().square().inverse().matrix().asDiagonal(); }

 private:
  Eigen::Index d_;
  RVec<T> x_;
  bool valid_ = false;
};

// Complex Hermitian PSD cone in the real vectorization, barrier -logdet X.
template <class T = double>
class PsdCone final : public Cone<T> {
 public:
  explicit PsdCone(Eigen::Index side) : n_(side) {
    if (side < 1) throw std::invalid_argument("PsdCone: side dimension must be positive");
  }
  [[nodiscard]] Eigen::Index dim() const override { return n_ * n_; }
  [[nodiscard]] T nu() const override { return T(n_); }
  [[nodiscard]] std::string name() const override { return "psd"; }
  [[nodiscard]] std::unique_ptr<Cone<T>> clone() const override { return std::make_unique<PsdCone>(*this); }
  [[nodiscard]] Eigen::Index side() const { return n_; }

  bool set_point(std::span<const T> x) override {
    for (const T v : x)
      if (!std::isfinite(v)) return false;
    const CMat<T> m = smat<T>(x.data(), n_);
    Eigen::LLT<CMat<T>> llt(m);
    if (llt.info() != Eigen::Success) return false;
    const CMat<T> l = llt.matrixL();
    for (Eigen::Index i = 0; i < n_; ++i)
      if (!(l(i, i).real() > 0)) return false;
    logdet_ = 0;
    for (Eigen::Index i = 0; i < n_; ++i) logdet_ += 2 * std::log(l(i, i).real());
    inv_ = hermitize<T>(CMat<T>(llt.solve(CMat<T>::Identity(n_, n_))));
    return true;
  }
  void initial_point(std::span<T> x) const override { svec_into<T>(CMat<T>::Identity(n_, n_), x.data()); }
  [[nodiscard]] T barrier() const override { return -logdet_; }
  void gradient(std::span<T> out) const override { svec_into<T>(CMat<T>(-inv_), out.data()); }
  void hessian_apply(std::span<const T> dir, std::span<T> out) const override {
    const CMat<T> h = smat<T>(dir.data(), n_);
    svec_into<T>(CMat<T>(inv_ * h * inv_), out.data());
  }
  void third_order(std::span<const T> dir, std::span<T> out) const override {
    const CMat<T> ih = inv_ * smat<T>(dir.data(), n_);
    svec_into<T>(CMat<T>(T(-2) * ih * ih * inv_), out.data());
  }

 private:
  Eigen::Index n_;
  CMat<T> inv_;
  T logdet_ = 0;
};

// Vector relative entropy cone {(u, q, p) : u >= sum q ln(q/p), q, p > 0} with barrier
// -ln(u - D(q||p)) - sum ln q - sum ln p.
template <class T = double>
class KLCone final : public Cone<T> {
 public:
  explicit KLCone(Eigen::Index d) : d_(d) {
    if (d < 1) throw std::invalid_argument("KLCone: dimension must be positive");
  }
  [[nodiscard]] Eigen::Index dim() const override { return 1 + 2 * d_; }
  [[nodiscard]] T nu() const override { return T(1 + 2 * d_); }
  [[nodiscard]] std::string name() const override { return "kl"; }
  [[nodiscard]] std::unique_ptr<Cone<T>> clone() const override { return std::make_unique<KLCone>(*this); }
  [[nodiscard]] Eigen::Index length() const { return d_; }

  bool set_point(std::span<const T> x) override {
    u_ = x[0];
    q_ = as_vec<T>(x.subspan(1, d_));
    p_ = as_vec<T>(x.subspan(1 + d_, d_));
    if (!std::isfinite(u_) || !(q_.array() > 0).all() || !(p_.array() > 0).all() || !q_.allFinite() ||
        !p_.allFinite())
      return false;
    logratio_ = (q_.array() / p_.array()).log();
    z_ = u_ - (q_.array() * logratio_.array()).sum();
    return z_ > 0 && std::isfinite(z_);
  }

  void initial_point(std::span<T> x) const override {
    if (center_.size() == 0) center_ = central_point(*this, symmetric_start());
    as_vec<T>(x) = center_;
  }

  [[nodiscard]] T barrier() const override {
    return -std::log(z_) - q_.array().log().sum() - p_.array().log().sum();
  }

  void gradient(std::span<T> out) const override {
    const EpigraphTerm<T> ep{z_};
    out[0] = ep.grad_u();
    for (Eigen::Index i = 0; i < d_; ++i) {
      out[1 + i] = (logratio_(i) + 1) / z_ - 1 / q_(i);
      out[1 + d_ + i] = -q_(i) / p_(i) / z_ - 1 / p_(i);
    }
  }

  void hessian_apply(std::span<const T> dir, std::span<T> out) const override {
    const T du = dir[0];
    const auto dq = as_vec<T>(dir.subspan(1, d_));
    const auto dp = as_vec<T>(dir.subspan(1 + d_, d_));
    const T zdot = du - directional_phi(dq, dp);
    const EpigraphTerm<T> ep{z_};
    out[0] = ep.hess_u(zdot);
    const T cg = ep.hess_grad_coeff(zdot), ch = ep.hess_hphi_coeff();
    for (Eigen::Index i = 0; i < d_; ++i) {
      const T hq = dq(i) / q_(i) - dp(i) / p_(i);
      const T hp = -dq(i) / p_(i) + q_(i) * dp(i) / (p_(i) * p_(i));
      out[1 + i] = cg * (logratio_(i) + 1) + ch * hq + dq(i) / (q_(i) * q_(i));
      out[1 + d_ + i] = cg * (-q_(i) / p_(i)) + ch * hp + dp(i) / (p_(i) * p_(i));
    }
  }

  void third_order(std::span<const T> dir, std::span<T> out) const override {
    const T du = dir[0];
    const auto dq = as_vec<T>(dir.subspan(1, d_));
    const auto dp = as_vec<T>(dir.subspan(1 + d_, d_));
    T curv = 0;
    RVec<T> hq(d_), hp(d_);
    for (Eigen::Index i = 0; i < d_; ++i) {
      hq(i) = dq(i) / q_(i) - dp(i) / p_(i);
      hp(i) = -dq(i) / p_(i) + q_(i) * dp(i) / (p_(i) * p_(i));
      curv += hq(i) * dq(i) + hp(i) * dp(i);
    }
    const T zdot = du - directional_phi(dq, dp);
    const T zddot = -curv;
    const EpigraphTerm<T> ep{z_};
    out[0] = ep.third_u(zdot, zddot);
    const T cg = ep.third_grad_coeff(zdot, zddot), ch = ep.third_hphi_coeff(zdot), ct = ep.third_tphi_coeff();
    for (Eigen::Index i = 0; i < d_; ++i) {
      const T q = q_(i), p = p_(i);
      const T tq = -dq(i) * dq(i) / (q * q) + dp(i) * dp(i) / (p * p);
      const T tp = 2 * dq(i) * dp(i) / (p * p) - 2 * q * dp(i) * dp(i) / (p * p * p);
      out[1 + i] = cg * (logratio_(i) + 1) + ch * hq(i) + ct * tq - 2 * dq(i) * dq(i) / (q * q * q);
      out[1 + d_ + i] = cg * (-q / p) + ch * hp(i) + ct * tp - 2 * dp(i) * dp(i) / (p * p * p);
    }
  }

  void hessian(RMat<T>& out) const override {
    const Eigen::Index n = dim();
    RVec<T> grad_phi(n);
    grad_phi(0) = -1;
    for (Eigen::Index i = 0; i < d_; ++i) {
      grad_phi(1 + i) = logratio_(i) + 1;
      grad_phi(1 + d_ + i) = -q_(i) / p_(i);
    }
    // rank-one epigraph term plus hess(phi)/z and the log barriers of q and p
    out = grad_phi * grad_phi.transpose() / (z_ * z_);
    for (Eigen::Index i = 0; i < d_; ++i) {
      const T q = q_(i), p = p_(i);
      out(1 + i, 1 + i) += 1 / (q * z_) + 1 / (q * q);
      out(1 + i, 1 + d_ + i) += -1 / (p * z_);
      out(1 + d_ + i, 1 + i) += -1 / (p * z_);
      out(1 + d_ + i, 1 + d_ + i) += q / (p * p * z_) + 1 / (p * p);
    }
  }

 private:
  RVec<T> symmetric_start() const {
    RVec<T> x = RVec<T>::Ones(dim());
    x(0) = T(1 + d_);
    return x;
  }

  T directional_phi(const ConstVecMap<T>& dq, const ConstVecMap<T>& dp) const {
    T v = 0;
    for (Eigen::Index i = 0; i < d_; ++i) v += (logratio_(i) + 1) * dq(i) - q_(i) / p_(i) * dp(i);
    return v;
  }

  Eigen::Index d_;
  T u_ = 0, z_ = 0;
  RVec<T> q_, p_, logratio_;
  mutable RVec<T> center_;
};

// Logarithm cone {(u, v, w) : u <= v ln(w/v), v, w > 0}, barrier -ln(v ln(w/v) - u) - ln v - ln w.
// It is the one-dimensional KL cone with the epigraph coordinate negated.
template <class T = double>
class LogCone final : public Cone<T> {
 public:
  [[nodiscard]] Eigen::Index dim() const override { return 3; }
  [[nodiscard]] T nu() const override { return T(3); }
  [[nodiscard]] std::string name() const override { return "log"; }
  [[nodiscard]] std::unique_ptr<Cone<T>> clone() const override { return std::make_unique<LogCone>(*this); }

  bool set_point(std::span<const T> x) override {
    const std::array<T, 3> y{-x[0], x[1], x[2]};
    return kl_.set_point(y);
  }
  void initial_point(std::span<T> x) const override {
    kl_.initial_point(x);
    x[0] = -x[0];
  }
  [[nodiscard]] T barrier() const override { return kl_.barrier(); }
  void gradient(std::span<T> out) const override {
    kl_.gradient(out);
    out[0] = -out[0];
  }
  void hessian_apply(std::span<const T> dir, std::span<T> out) const override {
    const std::array<T, 3> d{-dir[0], dir[1], dir[2]};
    kl_.hessian_apply(d, out);
    out[0] = -out[0];
  }
  void third_order(std::span<const T> dir, std::span<T> out) const override {
    const std::array<T, 3> d{-dir[0], dir[1], dir[2]};
    kl_.third_order(d, out);
    out[0] = -out[0];
  }
  void hessian(RMat<T>& out) const override {
    kl_.hessian(out);
    out.row(0) *= -1;
    out.col(0) *= -1;
  }

 private:
  KLCone<T> kl_{1};
};

// Encodes ||expr||_1 <= delta with nonnegative slacks: expr_i = a_i - b_i and
// sum (a_i + b_i) + s = delta. A zero radius becomes the equalities expr_i = 0.
template <class T>
struct L1Slacks {
  std::optional<typename ProgramBuilder<T>::Block> block;  // (a, b, s), absent when delta = 0
  std::vector<Eigen::Index> rows;
};

template <class T>
L1Slacks<T> l1_reformulate(ProgramBuilder<T>& builder, T delta, const std::vector<AffineExpr<T>>& expr) {
  if (!(delta >= 0)) throw std::invalid_argument("l1_reformulate: radius must be nonnegative");
  L1Slacks<T> out;
  const auto d = static_cast<Eigen::Index>(expr.size());
  if (delta == 0) {
    for (const auto& e : expr) out.rows.push_back(builder.add_equality(e));
    return out;
  }
  const auto blk = builder.add_cone(std::make_shared<NonnegCone<T>>(2 * d + 1));
  out.block = blk;
  for (Eigen::Index i = 0; i < d; ++i) {
    AffineExpr<T> e = expr[i];
    e.add(blk[i], T(-1)).add(blk[d + i], T(1));
    out.rows.push_back(builder.add_equality(e));
  }
  const Eigen::Index budget = builder.add_row(delta);
  for (Eigen::Index i = 0; i < 2 * d + 1; ++i) builder.add_coef(budget, blk[i], T(1));
  out.rows.push_back(budget);
  return out;
}

}  // namespace qkdcone
