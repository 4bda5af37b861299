// SPDX-License-Identifier: MIT
#pragma once

#include "qkdcone/matfun.hpp"

#include <Eigen/Cholesky>

#include <memory>
#include <span>
#include <string>

namespace qkdcone {

template <class T> using ConstVecMap = Eigen::Map<const RVec<T>>;
template <class T> using VecMap = Eigen::Map<RVec<T>>;

template <class T>
ConstVecMap<T> as_vec(std::span<const T> s) {
  return ConstVecMap<T>(s.data(), static_cast<Eigen::Index>(s.size()));
}
template <class T>
VecMap<T> as_vec(std::span<T> s) {
  return VecMap<T>(s.data(), static_cast<Eigen::Index>(s.size()));
}

// Barrier oracle for a proper cone with a logarithmically homogeneous self-concordant barrier.
// set_point caches everything derived from the point; later queries refer to that point.
template <class T = double>
class Cone {
 public:
  virtual ~Cone() = default;

  [[nodiscard]] virtual Eigen::Index dim() const = 0;
  [[nodiscard]] virtual T nu() const = 0;
  [[nodiscard]] virtual std::string name() const = 0;
  [[nodiscard]] virtual std::unique_ptr<Cone> clone() const = 0;

  // Returns whether x lies in the interior; derivative queries require a true return.
  virtual bool set_point(std::span<const T> x) = 0;
  virtual void initial_point(std::span<T> x) const = 0;

  [[nodiscard]] virtual T barrier() const = 0;
  virtual void gradient(std::span<T> out) const = 0;
  virtual void hessian_apply(std::span<const T> dir, std::span<T> out) const = 0;
  // Third directional derivative contracted twice with dir: D^3 F(x)[., dir, dir].
  virtual void third_order(std::span<const T> dir, std::span<T> out) const = 0;

  // Dense Hessian; the default assembles it from hessian_apply.
  virtual void hessian(RMat<T>& out) const {
    const Eigen::Index n = dim();
    out.resize(n, n);
    RVec<T> e = RVec<T>::Zero(n), col(n);
    for (Eigen::Index k = 0; k < n; ++k) {
      e(k) = 1;
      hessian_apply(std::span<const T>(e.data(), n), std::span<T>(col.data(), n));
      out.col(k) = col;
      e(k) = 0;
    }
    out = (out + out.transpose()).eval() * T(0.5);
  }

  [[nodiscard]] bool in_interior(std::span<const T> x) {
    return set_point(x);
  }
};

template <class T>
RVec<T> cone_gradient(const Cone<T>& cone) {
  RVec<T> g(cone.dim());
  cone.gradient(std::span<T>(g.data(), g.size()));
  return g;
}

template <class T>
RVec<T> cone_hessian_apply(const Cone<T>& cone, const RVec<T>& d) {
  RVec<T> out(cone.dim());
  cone.hessian_apply(std::span<const T>(d.data(), d.size()), std::span<T>(out.data(), out.size()));
  return out;
}

template <class T>
RVec<T> cone_third_order(const Cone<T>& cone, const RVec<T>& d) {
  RVec<T> out(cone.dim());
  cone.third_order(std::span<const T>(d.data(), d.size()), std::span<T>(out.data(), out.size()));
  return out;
}

template <class T>
RVec<T> cone_initial_point(const Cone<T>& cone) {
  RVec<T> x(cone.dim());
  cone.initial_point(std::span<T>(x.data(), x.size()));
  return x;
}

template <class T>
bool cone_set_point(Cone<T>& cone, const RVec<T>& x) {
  return cone.set_point(std::span<const T>(x.data(), x.size()));
}

// The point with x = -grad F(x), i.e. the minimizer of F(x) + |x|^2/2, by damped Newton from an
// interior start. Works on a private copy so the caller's cached point is untouched.
template <class T>
RVec<T> central_point(const Cone<T>& cone, RVec<T> x, T tol = T(1e-13), int max_iter = 200) {
  auto work = cone.clone();
  if (!cone_set_point(*work, x)) throw std::invalid_argument("central_point: start is not interior");
  RMat<T> h;
  for (int it = 0; it < max_iter; ++it) {
    const RVec<T> r = cone_gradient(*work) + x;
    if (r.norm() <= tol * std::max(T(1), x.norm())) break;
    work->hessian(h);
    h.diagonal().array() += 1;
    const RVec<T> step = h.ldlt().solve(r);
    T t = 1;
    RVec<T> next = x - step;
    while (!cone_set_point(*work, next)) {
      t /= 2;
      if (t < T(1e-12)) throw std::runtime_error("central_point: line search failed");
      next = x - t * step;
    }
    x = next;
  }
  return x;
}

// Derivatives of F = -ln(u - phi(x)) up to third order given those of phi. Shared by the
// epigraph-type cones (Renyi, KL, log).
template <class T>
struct EpigraphTerm {
  T z;  // u - phi(x) > 0

  [[nodiscard]] T value() const { return -std::log(z); }
  // gradient: d/du = -1/z, d/dx = grad_phi / z
  [[nodiscard]] T grad_u() const { return -1 / z; }
  [[nodiscard]] T grad_x_scale() const { return 1 / z; }

  // Hessian along h: zdot = h_u - <grad_phi, h_x>.
  //   u: zdot / z^2;  x: -(zdot/z^2) grad_phi + (1/z) hess_phi h_x
  [[nodiscard]] T hess_u(T zdot) const { return zdot / (z * z); }
  [[nodiscard]] T hess_grad_coeff(T zdot) const { return -zdot / (z * z); }
  [[nodiscard]] T hess_hphi_coeff() const { return 1 / z; }

  // Third order along h with zddot = -<hess_phi h_x, h_x>.
  [[nodiscard]] T third_u(T zdot, T zddot) const { return zddot / (z * z) - 2 * zdot * zdot / (z * z * z); }
  [[nodiscard]] T third_grad_coeff(T zdot, T zddot) const { return 2 * zdot * zdot / (z * z * z) - zddot / (z * z); }
  [[nodiscard]] T third_hphi_coeff(T zdot) const { return -2 * zdot / (z * z); }
  [[nodiscard]] T third_tphi_coeff() const { return 1 / z; }
};


// Restriction of a cone to the range of a matrix with orthonormal columns: {y : P y in K}.
// The restricted barrier F(P y) keeps the parameter of the inner barrier. The range must meet
// the interior; the inner initial point is projected onto it.
template <class T = double>
class SubspaceCone final : public Cone<T> {
 public:
  SubspaceCone(std::shared_ptr<const Cone<T>> inner, RMat<T> basis)
      : inner_(inner->clone()), basis_(std::make_shared<const RMat<T>>(std::move(basis))) {
    const RMat<T>& b = *basis_;
    if (b.rows() != inner_->dim()) throw std::invalid_argument("SubspaceCone: basis rows must match the inner cone");
    if (b.cols() == 0 || b.cols() > b.rows()) throw std::invalid_argument("SubspaceCone: invalid basis width");
    const T dev = (b.transpose() * b - RMat<T>::Identity(b.cols(), b.cols())).cwiseAbs().maxCoeff();
    if (dev > T(1e-10)) throw std::invalid_argument("SubspaceCone: basis columns are not orthonormal");
  }
  SubspaceCone(const SubspaceCone& other) : inner_(other.inner_->clone()), basis_(other.basis_) {}

  [[nodiscard]] Eigen::Index dim() const override { return basis_->cols(); }
  [[nodiscard]] T nu() const override { return inner_->nu(); }
  [[nodiscard]] std::string name() const override { return "subspace-" + inner_->name(); }
  [[nodiscard]] std::unique_ptr<Cone<T>> clone() const override { return std::make_unique<SubspaceCone>(*this); }
  [[nodiscard]] const RMat<T>& basis() const { return *basis_; }

  bool set_point(std::span<const T> y) override {
    lifted_ = *basis_ * as_vec<T>(y);
    return cone_set_point(*inner_, lifted_);
  }
  void initial_point(std::span<T> y) const override {
    as_vec<T>(y) = basis_->transpose() * cone_initial_point(*inner_);
    auto probe = inner_->clone();
    if (!cone_set_point(*probe, RVec<T>(*basis_ * as_vec<T>(std::span<const T>(y.data(), y.size())))))
      throw std::logic_error("SubspaceCone: the subspace misses the inner initial point");
  }
  [[nodiscard]] T barrier() const override { return inner_->barrier(); }
  void gradient(std::span<T> out) const override { as_vec<T>(out) = basis_->transpose() * cone_gradient(*inner_); }
  void hessian_apply(std::span<const T> dir, std::span<T> out) const override {
    as_vec<T>(out) = basis_->transpose() * cone_hessian_apply(*inner_, RVec<T>(*basis_ * as_vec<T>(dir)));
  }
  void third_order(std::span<const T> dir, std::span<T> out) const override {
    as_vec<T>(out) = basis_->transpose() * cone_third_order(*inner_, RVec<T>(*basis_ * as_vec<T>(dir)));
  }
  // Narrow subspaces: one inner Hessian product per basis column beats the full inner Hessian.
  void hessian(RMat<T>& out) const override {
    const RMat<T>& b = *basis_;
    RMat<T> hb;
    if (2 * b.cols() < b.rows()) {
      hb.resize(b.rows(), b.cols());
      for (Eigen::Index k = 0; k < b.cols(); ++k) hb.col(k) = cone_hessian_apply(*inner_, RVec<T>(b.col(k)));
    } else {
      RMat<T> full;
      inner_->hessian(full);
      hb = full * b;
    }
    out = b.transpose() * hb;
    out = (out + out.transpose()).eval() * T(0.5);
  }

 private:
  std::unique_ptr<Cone<T>> inner_;
  std::shared_ptr<const RMat<T>> basis_;
  RVec<T> lifted_;
};

}  // namespace qkdcone
