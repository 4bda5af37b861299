// SPDX-License-Identifier: MIT
#pragma once

#include "qkdcone/channels.hpp"
#include "qkdcone/cone.hpp"

#include <Eigen/SVD>

#include <optional>

namespace qkdcone {

enum class RenyiVariant { True, Fast };

// Facially reduced data of a Renyi QKD cone. In the fast variant the pinching blocks act on rho.
template <class T = double>
struct ReducedConeSpec {
  T alpha = T(0.5);
  T s_alpha = T(-1);
  RenyiVariant variant = RenyiVariant::Fast;
  KrausMap<T> ghat;                      // q -> k
  std::vector<KrausMap<T>> zhat_blocks;  // (m or q) -> n_b, orthogonal output blocks
  std::vector<CMat<T>> s_blocks;         // n_b x k row blocks of S
  Eigen::Index q = 0, m = 0;

  [[nodiscard]] Eigen::Index k() const { return ghat.out_dim(); }
  [[nodiscard]] T nu() const { return T(1 + q + (variant == RenyiVariant::True ? m : 0)); }
  [[nodiscard]] Eigen::Index dim() const {
    return 1 + q * q + (variant == RenyiVariant::True ? m * m : 0);
  }
  [[nodiscard]] Eigen::Index z_in_dim() const { return variant == RenyiVariant::True ? m : q; }

  [[nodiscard]] CMat<T> S() const {
    Eigen::Index rows = 0;
    for (const auto& b : s_blocks) rows += b.rows();
    CMat<T> s(rows, k());
    Eigen::Index r = 0;
    for (const auto& b : s_blocks) {
      s.middleRows(r, b.rows()) = b;
      r += b.rows();
    }
    return s;
  }

  // Zhat as one map into the direct sum of the blocks.
  [[nodiscard]] KrausMap<T> zhat() const {
    Eigen::Index total = 0;
    for (const auto& b : zhat_blocks) total += b.out_dim();
    std::vector<CMat<T>> ops;
    Eigen::Index off = 0;
    for (const auto& b : zhat_blocks) {
      for (const auto& kop : b.operators()) {
        CMat<T> big = CMat<T>::Zero(total, kop.cols());
        big.middleRows(off, kop.rows()) = kop;
        ops.push_back(std::move(big));
      }
      off += b.out_dim();
    }
    return KrausMap<T>(std::move(ops));
  }

  void validate() const {
    if (!(alpha >= T(0.5) && alpha < T(1))) {
      if (alpha == T(1)) throw std::invalid_argument("ReducedConeSpec: alpha = 1 is not a Renyi cone exponent");
      throw std::invalid_argument("ReducedConeSpec: alpha must lie in [1/2, 1)");
    }
    if (ghat.in_dim() != q) throw std::invalid_argument("ReducedConeSpec: ghat input dimension differs from q");
    if (zhat_blocks.empty() || zhat_blocks.size() != s_blocks.size())
      throw std::invalid_argument("ReducedConeSpec: block structure mismatch");
    for (std::size_t b = 0; b < zhat_blocks.size(); ++b) {
      if (zhat_blocks[b].in_dim() != z_in_dim()) throw std::invalid_argument("ReducedConeSpec: zhat input dimension");
      if (s_blocks[b].rows() != zhat_blocks[b].out_dim() || s_blocks[b].cols() != k())
        throw std::invalid_argument("ReducedConeSpec: S block shape");
    }
    auto strictly_positive = [](const KrausMap<T>& map) {
      const auto sp = eigh<T>(map.apply(CMat<T>::Identity(map.in_dim(), map.in_dim())));
      return sp.min_eigenvalue() > T(1e-9) * std::max(T(1e-300), sp.max_eigenvalue());
    };
    if (!strictly_positive(ghat)) throw std::invalid_argument("ReducedConeSpec: ghat is not strictly positive");
    for (const auto& b : zhat_blocks)
      if (!strictly_positive(b)) throw std::invalid_argument("ReducedConeSpec: zhat block is not strictly positive");
    check_isometry<T>(S(), T(1e-8), "ReducedConeSpec");
  }
};

template <class T>
ReducedConeSpec<T> make_true_cone_spec(T alpha, const ReducedPair<T>& pair) {
  ReducedConeSpec<T> spec;
  spec.alpha = alpha;
  spec.variant = RenyiVariant::True;
  spec.ghat = pair.g.reduced_map;
  spec.zhat_blocks = pair.z.block_maps;
  for (std::size_t b = 0; b < pair.z.block_maps.size(); ++b) {
    const Eigen::Index off = pair.z.block_offsets[b];
    spec.s_blocks.push_back(pair.S.middleRows(off, pair.z.block_offsets[b + 1] - off));
  }
  spec.q = spec.ghat.in_dim();
  spec.m = spec.zhat_blocks.front().in_dim();
  spec.validate();
  return spec;
}

// Fast cone from the unreduced key map G and pinching Z, with optional domain reduction V of rho.
template <class T>
ReducedConeSpec<T> make_fast_cone_spec(T alpha, const KrausMap<T>& g, const KrausMap<T>& z,
                                       const CMat<T>* domain = nullptr) {
  const KrausMap<T> gv = domain ? g.restrict_domain(*domain) : g;
  const auto red_g = facially_reduce<T>(gv, false);
  const auto red_zg = facially_reduce<T>(z.compose(gv), true);
  const CMat<T> s = red_zg.isometry_W.adjoint() * red_g.isometry_W;
  check_isometry<T>(s, T(1e-8), "make_fast_cone_spec");
  ReducedConeSpec<T> spec;
  spec.alpha = alpha;
  spec.variant = RenyiVariant::Fast;
  spec.ghat = red_g.reduced_map;
  spec.zhat_blocks = red_zg.block_maps;
  for (std::size_t b = 0; b < red_zg.block_maps.size(); ++b) {
    const Eigen::Index off = red_zg.block_offsets[b];
    spec.s_blocks.push_back(s.middleRows(off, red_zg.block_offsets[b + 1] - off));
  }
  spec.q = gv.in_dim();
  spec.m = 0;
  spec.validate();
  return spec;
}

namespace detail {

// E = c e_i e_j^T + conj(c) e_j e_i^T is the Hermitian matrix whose svec is a unit vector.
template <class T>
struct SparseHermitian {
  Eigen::Index i, j;
  Complex<T> c;
};

template <class T>
SparseHermitian<T> svec_unit(const SvecCoordinate& co) {
  const T r = T(1) / std::sqrt(T(2));
  switch (co.kind) {
    case SvecCoordinate::Kind::Diagonal:
      return {co.row, co.col, Complex<T>(T(0.5), 0)};
    case SvecCoordinate::Kind::Real:
      return {co.row, co.col, Complex<T>(r, 0)};
    default:
      return {co.row, co.col, Complex<T>(0, r)};
  }
}

// A E B for the sparse Hermitian E.
template <class T>
CMat<T> sandwich_sparse(const CMat<T>& a, const SparseHermitian<T>& e, const CMat<T>& b) {
  return e.c * a.col(e.i) * b.row(e.j) + std::conj(e.c) * a.col(e.j) * b.row(e.i);
}

template <class T>
CMat<T> apply_sparse(const KrausMap<T>& map, const SparseHermitian<T>& e) {
  CMat<T> out = CMat<T>::Zero(map.out_dim(), map.out_dim());
  for (const auto& k : map.operators()) out += sandwich_sparse<T>(k, e, CMat<T>(k.adjoint()));
  return out;
}

}  // namespace detail

// Barrier oracle for the RenyiQKD (true) and FastRenyiQKD cones,
//   F(u, rho[, sigma]) = -ln(u - s Psi) - logdet rho [- logdet sigma],
// with Psi = Tr[(G^1/2 Y G^1/2)^alpha], G = Ghat(rho), Y = sum_b S_b^dagger h(Z_b) S_b,
// Z_b = Zhat_b(sigma or rho), h(x) = x^((1-alpha)/alpha).
template <class T = double>
class RenyiCone final : public Cone<T> {
 public:
  explicit RenyiCone(std::shared_ptr<const ReducedConeSpec<T>> spec) : spec_(std::move(spec)) {
    spec_->validate();
    init_static();
  }
  explicit RenyiCone(ReducedConeSpec<T> spec) : RenyiCone(std::make_shared<const ReducedConeSpec<T>>(std::move(spec))) {}

  [[nodiscard]] Eigen::Index dim() const override { return spec_->dim(); }
  [[nodiscard]] T nu() const override { return spec_->nu(); }
  [[nodiscard]] std::string name() const override {
    return spec_->variant == RenyiVariant::True ? "renyi-true" : "renyi-fast";
  }
  [[nodiscard]] std::unique_ptr<Cone<T>> clone() const override { return std::make_unique<RenyiCone>(*this); }
  [[nodiscard]] const ReducedConeSpec<T>& spec() const { return *spec_; }
  [[nodiscard]] bool is_true() const { return spec_->variant == RenyiVariant::True; }

  bool set_point(std::span<const T> x) override {
    valid_ = false;
    if (static_cast<Eigen::Index>(x.size()) != dim()) throw std::invalid_argument("RenyiCone: point dimension");
    for (const T v : x)
      if (!std::isfinite(v)) return false;
    const auto& sp = *spec_;
    p_ = Point{};
    p_.u = x[0];
    p_.rho = smat<T>(x.data() + 1, sp.q);
    if (is_true()) p_.sigma = smat<T>(x.data() + 1 + sp.q * sp.q, sp.m);
    try {
      p_.rho_spec = eigh<T>(p_.rho);
      if (!(p_.rho_spec.min_eigenvalue() > 0)) return false;
      if (is_true()) {
        p_.sigma_spec = eigh<T>(p_.sigma);
        if (!(p_.sigma_spec.min_eigenvalue() > 0)) return false;
      }
      compute_point();
    } catch (const DomainError&) {
      return false;
    }
    if (!(p_.z > 0) || !std::isfinite(p_.z)) return false;
    valid_ = true;
    return true;
  }

  void initial_point(std::span<T> x) const override {
    const auto& sp = *spec_;
    T rho_scale = 1, sigma_scale = 1;
    const T a = sp.alpha;
    const T s = sp.s_alpha;
    if (!is_true()) {
      const T d = T(sp.q);
      rho_scale = std::sqrt((d + 3) / (2 * d + 2) - s / 2 * std::sqrt(1 + 4 / ((d + 1) * (d + 1))));
    } else {
      const T d = T(sp.q);
      // residual in gamma after eliminating delta^2 = 1 + (1-a)(gamma^2-1)/a
      auto residual = [&](T g) {
        const T g2m1 = g * g - 1;
        const T d2 = 1 + (1 - a) * g2m1 / a;
        return g2m1 * g2m1 * std::pow(g, -2 * a) * std::pow(d2, a - 1) + d * a * g2m1 - a * a;
      };
      T g = 1 + a / (2 * d);
      bool ok = false;
      for (int it = 0; it < 100; ++it) {
        const T r = residual(g);
        const T hstep = std::max(T(1e-7), T(1e-7) * g);
        const T dr = (residual(g + hstep) - residual(g - hstep)) / (2 * hstep);
        if (!std::isfinite(r) || !std::isfinite(dr) || dr == 0) break;
        T next = g - r / dr;
        if (next <= 0) next = g / 2;
        if (std::abs(next - g) < T(1e-14) * std::max(T(1), g)) {
          g = next;
          ok = true;
          break;
        }
        g = next;
      }
      if (ok && std::abs(residual(g)) < T(1e-9)) {
        const T d2 = 1 + (1 - a) * (g * g - 1) / a;
        if (d2 > 0) {
          rho_scale = g;
          sigma_scale = std::sqrt(d2);
        }
      }
    }
    RVec<T> pt = RVec<T>::Zero(dim());
    const CMat<T> rho = CMat<T>::Identity(sp.q, sp.q) * rho_scale;
    svec_into<T>(rho, pt.data() + 1);
    if (is_true()) svec_into<T>(CMat<T>(CMat<T>::Identity(sp.m, sp.m) * sigma_scale), pt.data() + 1 + sp.q * sp.q);
    const T psi = psi_at(rho, is_true() ? CMat<T>(CMat<T>::Identity(sp.m, sp.m) * sigma_scale) : CMat<T>());
    pt(0) = s * psi / 2 + std::sqrt(1 + psi * psi / 4);
    for (Eigen::Index i = 0; i < dim(); ++i) x[i] = pt(i);
  }

  [[nodiscard]] T barrier() const override {
    require_valid();
    T val = -std::log(p_.z);
    for (Eigen::Index i = 0; i < p_.rho_spec.dim(); ++i) val -= std::log(p_.rho_spec.eigenvalues(i));
    if (is_true())
      for (Eigen::Index i = 0; i < p_.sigma_spec.dim(); ++i) val -= std::log(p_.sigma_spec.eigenvalues(i));
    return val;
  }

  [[nodiscard]] T psi() const {
    require_valid();
    return p_.psi;
  }

  // Gradient of Psi with respect to rho and (true variant) sigma.
  [[nodiscard]] const CMat<T>& psi_gradient_rho() const {
    require_valid();
    return p_.grad_rho;
  }
  [[nodiscard]] const CMat<T>& psi_gradient_sigma() const {
    require_valid();
    return p_.grad_sigma;
  }

  void gradient(std::span<T> out) const override {
    require_valid();
    const auto& sp = *spec_;
    const T s = sp.s_alpha;
    out[0] = -1 / p_.z;
    svec_into<T>(CMat<T>(p_.grad_rho * (s / p_.z) - p_.rho_inv), out.data() + 1);
    if (is_true()) svec_into<T>(CMat<T>(p_.grad_sigma * (s / p_.z) - p_.sigma_inv), out.data() + 1 + sp.q * sp.q);
  }

  void hessian_apply(std::span<const T> dir, std::span<T> out) const override {
    require_valid();
    const auto& sp = *spec_;
    const T s = sp.s_alpha;
    const T du = dir[0];
    const CMat<T> drho = smat<T>(dir.data() + 1, sp.q);
    CMat<T> dsigma;
    if (is_true()) dsigma = smat<T>(dir.data() + 1 + sp.q * sp.q, sp.m);
    const Jet jet = psi_jet(drho, dsigma, false);
    T inner = hs_inner<T>(p_.grad_rho, drho);
    if (is_true()) inner += hs_inner<T>(p_.grad_sigma, dsigma);
    const T zdot = du - s * inner;
    const T z = p_.z;
    out[0] = zdot / (z * z);
    const T cg = -zdot / (z * z) * s;
    const T ch = s / z;
    svec_into<T>(CMat<T>(cg * p_.grad_rho + ch * jet.d1_rho + p_.rho_inv * drho * p_.rho_inv), out.data() + 1);
    if (is_true())
      svec_into<T>(CMat<T>(cg * p_.grad_sigma + ch * jet.d1_sigma + p_.sigma_inv * dsigma * p_.sigma_inv),
                   out.data() + 1 + sp.q * sp.q);
  }

  void third_order(std::span<const T> dir, std::span<T> out) const override {
    require_valid();
    const auto& sp = *spec_;
    const T s = sp.s_alpha;
    const T du = dir[0];
    const CMat<T> drho = smat<T>(dir.data() + 1, sp.q);
    CMat<T> dsigma;
    if (is_true()) dsigma = smat<T>(dir.data() + 1 + sp.q * sp.q, sp.m);
    const Jet jet = psi_jet(drho, dsigma, true);
    T inner = hs_inner<T>(p_.grad_rho, drho);
    T curv = hs_inner<T>(jet.d1_rho, drho);
    if (is_true()) {
      inner += hs_inner<T>(p_.grad_sigma, dsigma);
      curv += hs_inner<T>(jet.d1_sigma, dsigma);
    }
    const EpigraphTerm<T> ep{p_.z};
    const T zdot = du - s * inner;
    const T zddot = -s * curv;
    out[0] = ep.third_u(zdot, zddot);
    const T cg = ep.third_grad_coeff(zdot, zddot) * s;
    const T ch = ep.third_hphi_coeff(zdot) * s;
    const T ct = ep.third_tphi_coeff() * s;
    const CMat<T> rd = p_.rho_inv * drho;
    svec_into<T>(CMat<T>(cg * p_.grad_rho + ch * jet.d1_rho + ct * jet.d2_rho - T(2) * rd * rd * p_.rho_inv),
                 out.data() + 1);
    if (is_true()) {
      const CMat<T> sd = p_.sigma_inv * dsigma;
      svec_into<T>(CMat<T>(cg * p_.grad_sigma + ch * jet.d1_sigma + ct * jet.d2_sigma - T(2) * sd * sd * p_.sigma_inv),
                   out.data() + 1 + sp.q * sp.q);
    }
  }

  // Dense Hessian. Directions that leave Z unchanged interact only through the G-dependence,
  // which has a cheap closed form; the remaining columns use full jets and symmetry.
  void hessian(RMat<T>& out) const override {
    require_valid();
    const auto& sp = *spec_;
    const Eigen::Index nq = sp.q * sp.q;
    const Eigen::Index nm = is_true() ? sp.m * sp.m : 0;
    const Eigen::Index nx = nq + nm;
    RMat<T> hpsi = RMat<T>::Zero(nx, nx);
    RVec<T> col(nx);

    // Psi Hessian between Z-null rho directions: <Ghat(E_l), R Dg'(M)[R Ghat(E_k) R] R>
    const CMat<T>& v = p_.v_m;
    const CMat<T> vadj = v.adjoint();
    const auto& f1 = p_.gp_m->table1();
    std::vector<Eigen::Index> null_rho;
    for (Eigen::Index k = 0; k < nq; ++k)
      if (!rho_z_active_[k]) null_rho.push_back(k);
    const Eigen::Index kdim = sp.k();
    CMat<T> a(kdim, kdim);
    for (const Eigen::Index k : null_rho) {
      const auto e = detail::svec_unit<T>(rho_coords_[k]);
      const CMat<T> gk = detail::apply_sparse<T>(sp.ghat, e);
      a.noalias() = v * gk * vadj;
      for (Eigen::Index j = 0; j < kdim; ++j)
        for (Eigen::Index i = 0; i < kdim; ++i) a(i, j) *= f1(i, j);
      const CMat<T> back = sp.ghat.adjoint_apply(CMat<T>(vadj * a * v));
      svec_into<T>(back, col.data());
      for (const Eigen::Index l : null_rho) hpsi(l, k) = col(l);
    }
    // full jets for every remaining direction
    auto full_column = [&](Eigen::Index k) {
      CMat<T> drho = CMat<T>::Zero(sp.q, sp.q);
      CMat<T> dsigma;
      if (is_true()) dsigma = CMat<T>::Zero(sp.m, sp.m);
      if (k < nq)
        drho = svec_basis<T>(sp.q, k);
      else
        dsigma = svec_basis<T>(sp.m, k - nq);
      const Jet jet = psi_jet(drho, dsigma, false);
      svec_into<T>(jet.d1_rho, col.data());
      if (is_true()) svec_into<T>(jet.d1_sigma, col.data() + nq);
      hpsi.col(k) = col;
      hpsi.row(k) = col.transpose();
    };
    for (Eigen::Index k = 0; k < nq; ++k)
      if (rho_z_active_[k]) full_column(k);
    for (Eigen::Index k = 0; k < nm; ++k)
      if (sigma_z_active_[k]) full_column(nq + k);

    const T s = sp.s_alpha;
    const T z = p_.z;
    RVec<T> gphi(nx);
    svec_into<T>(CMat<T>(p_.grad_rho * s), gphi.data());
    if (is_true()) svec_into<T>(CMat<T>(p_.grad_sigma * s), gphi.data() + nq);

    out.resize(dim(), dim());
    out(0, 0) = 1 / (z * z);
    out.block(1, 0, nx, 1) = -gphi / (z * z);
    out.block(0, 1, 1, nx) = -gphi.transpose() / (z * z);
    RMat<T> hxx = (s / z) * (hpsi + hpsi.transpose()) * T(0.5);
    hxx.noalias() += gphi * gphi.transpose() / (z * z);
    add_logdet_hessian(p_.rho_inv, rho_coords_, hxx, 0);
    if (is_true()) add_logdet_hessian(p_.sigma_inv, sigma_coords_, hxx, nq);
    out.block(1, 1, nx, nx) = hxx;
  }

  // Psi at an arbitrary positive definite argument (no caching).
  [[nodiscard]] T psi_at(const CMat<T>& rho, const CMat<T>& sigma) const {
    const auto& sp = *spec_;
    const CMat<T> g = sp.ghat.apply(rho);
    const auto hfun = ScalarFunction<T>::power((1 - sp.alpha) / sp.alpha);
    CMat<T> y = CMat<T>::Zero(sp.k(), sp.k());
    for (std::size_t b = 0; b < sp.zhat_blocks.size(); ++b) {
      const CMat<T> zb = sp.zhat_blocks[b].apply(is_true() ? sigma : rho);
      y += sp.s_blocks[b].adjoint() * spectral_apply<T>(hfun, zb) * sp.s_blocks[b];
    }
    const CMat<T> gh = spectral_apply<T>(ScalarFunction<T>::power(T(0.5)), g);
    const auto sp_m = eigh<T>(CMat<T>(gh * y * gh));
    T acc = 0;
    for (Eigen::Index i = 0; i < sp_m.dim(); ++i) acc += std::pow(std::max(T(0), sp_m.eigenvalues(i)), sp.alpha);
    return acc;
  }

 private:
  struct Jet {
    CMat<T> d1_rho, d1_sigma, d2_rho, d2_sigma;
  };

  struct Point {
    T u = 0;
    CMat<T> rho, sigma, rho_inv, sigma_inv;
    SpectralDecomposition<T> rho_spec, sigma_spec;
    CMat<T> g, y, r, q, n, np, x_mat;
    std::optional<SpectralFunction<T>> sqrt_g, sqrt_y, gp_m, gp_mp;
    std::vector<SpectralFunction<T>> h_z;
    std::vector<CMat<T>> w;
    CMat<T> rg, rn, qy, qnp;  // cached products
    CMat<T> v_m;              // U_M^dagger R
    T psi = 0, z = 0;
    CMat<T> grad_rho, grad_sigma;
  };

  void require_valid() const {
    if (!valid_) throw std::logic_error("RenyiCone: derivative requested at a non-interior or unset point");
  }

  void init_static() {
    const auto& sp = *spec_;
    rho_coords_ = svec_coordinates(sp.q);
    if (is_true()) sigma_coords_ = svec_coordinates(sp.m);
    // a direction is Z-active when some Zhat block maps it to a nonzero matrix
    auto active = [&](const SvecCoordinate& co) {
      const auto e = detail::svec_unit<T>(co);
      for (const auto& b : sp.zhat_blocks)
        if (max_abs<T>(detail::apply_sparse<T>(b, e)) > T(1e-14)) return true;
      return false;
    };
    rho_z_active_.assign(rho_coords_.size(), false);
    sigma_z_active_.assign(sigma_coords_.size(), false);
    if (is_true()) {
      for (std::size_t k = 0; k < sigma_coords_.size(); ++k) sigma_z_active_[k] = active(sigma_coords_[k]);
    } else {
      for (std::size_t k = 0; k < rho_coords_.size(); ++k) rho_z_active_[k] = active(rho_coords_[k]);
    }
    const T a = sp.alpha;
    h_fn_ = ScalarFunction<T>::power((1 - a) / a);
    gp_fn_ = ScalarFunction<T>::power(a - 1, a);
    sqrt_fn_ = ScalarFunction<T>::power(T(0.5));
  }

  static CMat<T> inverse_from(const SpectralDecomposition<T>& sp) {
    RVec<T> inv = sp.eigenvalues.cwiseInverse();
    return hermitize<T>(CMat<T>(sp.unitary * inv.template cast<Complex<T>>().asDiagonal() * sp.unitary.adjoint()));
  }

  void compute_point() {
    const auto& sp = *spec_;
    Point& p = p_;
    p.rho_inv = inverse_from(p.rho_spec);
    if (is_true()) p.sigma_inv = inverse_from(p.sigma_spec);

    p.g = sp.ghat.apply(p.rho);
    auto g_spec = std::make_shared<const SpectralDecomposition<T>>(eigh<T>(p.g));
    if (!(g_spec->min_eigenvalue() > 0)) throw DomainError("RenyiCone: Ghat(rho) is not positive definite");
    p.sqrt_g = SpectralFunction<T>(g_spec, sqrt_fn_);
    p.q = p.sqrt_g->value();

    const CMat<T>& zarg = is_true() ? p.sigma : p.rho;
    const Eigen::Index kdim = sp.k();
    p.y = CMat<T>::Zero(kdim, kdim);
    p.h_z.clear();
    for (std::size_t b = 0; b < sp.zhat_blocks.size(); ++b) {
      const CMat<T> zb = sp.zhat_blocks[b].apply(zarg);
      auto zspec = std::make_shared<const SpectralDecomposition<T>>(eigh<T>(zb));
      if (!(zspec->min_eigenvalue() > 0)) throw DomainError("RenyiCone: Zhat block is not positive definite");
      p.h_z.emplace_back(zspec, h_fn_);
      p.y.noalias() += sp.s_blocks[b].adjoint() * p.h_z.back().value() * sp.s_blocks[b];
    }
    p.y = hermitize<T>(p.y);
    auto y_spec = std::make_shared<const SpectralDecomposition<T>>(eigh<T>(p.y));
    if (!(y_spec->min_eigenvalue() > 0)) throw DomainError("RenyiCone: S^dagger h(Z) S is not positive definite");
    p.sqrt_y = SpectralFunction<T>(y_spec, sqrt_fn_);
    p.r = p.sqrt_y->value();

    // Y^1/2 G^1/2 = U Lambda V^dagger diagonalizes M = R G R and M' = Q Y Q simultaneously.
    const CMat<T> amat = p.r * p.q;
    Eigen::JacobiSVD<CMat<T>> svd(amat, Eigen::ComputeFullU | Eigen::ComputeFullV);
    const Eigen::Index n = amat.rows();
    RVec<T> lam(n);
    CMat<T> um(n, n), vm(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const Eigen::Index src = n - 1 - i;  // ascending order
      const T sv = svd.singularValues()(src);
      lam(i) = sv * sv;
      um.col(i) = svd.matrixU().col(src);
      vm.col(i) = svd.matrixV().col(src);
    }
    if (!(lam(0) > 0)) throw DomainError("RenyiCone: degenerate sandwich");
    auto m_spec = std::make_shared<const SpectralDecomposition<T>>(SpectralDecomposition<T>{lam, um});
    auto mp_spec = std::make_shared<const SpectralDecomposition<T>>(SpectralDecomposition<T>{lam, vm});
    p.gp_m = SpectralFunction<T>(m_spec, gp_fn_);
    p.gp_mp = SpectralFunction<T>(mp_spec, gp_fn_);
    p.n = p.gp_m->value();
    p.np = p.gp_mp->value();
    p.psi = 0;
    for (Eigen::Index i = 0; i < n; ++i) p.psi += std::pow(lam(i), sp.alpha);
    p.z = p.u - sp.s_alpha * p.psi;

    p.rg = p.r * p.g;
    p.rn = p.r * p.n;
    p.qy = p.q * p.y;
    p.qnp = p.q * p.np;
    p.v_m = um.adjoint() * p.r;

    const CMat<T> pmat = hermitize<T>(CMat<T>(p.rn * p.r));
    p.x_mat = hermitize<T>(CMat<T>(p.qnp * p.q));
    p.grad_rho = sp.ghat.adjoint_apply(pmat);
    p.w.clear();
    CMat<T> gz = CMat<T>::Zero(sp.z_in_dim(), sp.z_in_dim());
    for (std::size_t b = 0; b < sp.zhat_blocks.size(); ++b) {
      p.w.push_back(hermitize<T>(CMat<T>(sp.s_blocks[b] * p.x_mat * sp.s_blocks[b].adjoint())));
      gz += sp.zhat_blocks[b].adjoint_apply(p.h_z[b].first(p.w.back()));
    }
    if (is_true())
      p.grad_sigma = gz;
    else
      p.grad_rho += gz;
  }

  // First and optionally second derivative of grad Psi along (drho, dsigma).
  Jet psi_jet(const CMat<T>& drho, const CMat<T>& dsigma, bool second) const {
    const auto& sp = *spec_;
    const Point& p = p_;
    const Eigen::Index kdim = sp.k();
    const CMat<T>& dz_arg = is_true() ? dsigma : drho;
    const bool has_g = max_abs<T>(drho) > 0;
    const bool has_z = max_abs<T>(dz_arg) > 0;
    const std::size_t nb = sp.zhat_blocks.size();

    std::vector<CMat<T>> zd(nb);
    CMat<T> yd = CMat<T>::Zero(kdim, kdim), ydd = CMat<T>::Zero(kdim, kdim);
    if (has_z) {
      for (std::size_t b = 0; b < nb; ++b) {
        zd[b] = sp.zhat_blocks[b].apply(dz_arg);
        yd.noalias() += sp.s_blocks[b].adjoint() * p.h_z[b].first(zd[b]) * sp.s_blocks[b];
        if (second) ydd.noalias() += sp.s_blocks[b].adjoint() * p.h_z[b].second(zd[b], zd[b]) * sp.s_blocks[b];
      }
      yd = hermitize<T>(yd);
      ydd = hermitize<T>(ydd);
    }
    const CMat<T> gd = has_g ? sp.ghat.apply(drho) : CMat<T>::Zero(kdim, kdim);

    auto sym = [](const CMat<T>& a) { return CMat<T>(a + a.adjoint()); };

    // R = Y^1/2 and Q = G^1/2 along the path
    CMat<T> rd = CMat<T>::Zero(kdim, kdim), rdd = CMat<T>::Zero(kdim, kdim);
    if (has_z) {
      rd = p.sqrt_y->first(yd);
      if (second) rdd = p.sqrt_y->second(yd, yd) + p.sqrt_y->first(ydd);
    }
    CMat<T> qd = CMat<T>::Zero(kdim, kdim), qdd = CMat<T>::Zero(kdim, kdim);
    if (has_g) {
      qd = p.sqrt_g->first(gd);
      if (second) qdd = p.sqrt_g->second(gd, gd);
    }

    // M = R G R, P = R g'(M) R
    CMat<T> md = p.r * gd * p.r;
    if (has_z) md += sym(CMat<T>(p.rg * rd));
    md = hermitize<T>(md);
    const CMat<T> nd = p.gp_m->first(md);
    CMat<T> pd = p.r * nd * p.r;
    if (has_z) pd += sym(CMat<T>(p.rn * rd));

    Jet jet;
    jet.d1_rho = sp.ghat.adjoint_apply(hermitize<T>(pd));
    CMat<T> mdd, ndd, pdd;
    if (second) {
      mdd = CMat<T>::Zero(kdim, kdim);
      if (has_z) {
        mdd += sym(CMat<T>(p.rg * rdd)) + T(2) * rd * p.g * rd;
        if (has_g) mdd += T(2) * sym(CMat<T>(rd * gd * p.r));
      }
      mdd = hermitize<T>(mdd);
      ndd = p.gp_m->second(md, md) + p.gp_m->first(mdd);
      pdd = p.r * ndd * p.r;
      if (has_z) pdd += sym(CMat<T>(p.rn * rdd)) + T(2) * rd * p.n * rd + T(2) * sym(CMat<T>(rd * nd * p.r));
      jet.d2_rho = sp.ghat.adjoint_apply(hermitize<T>(pdd));
    }

    // M' = Q Y Q, X = Q g'(M') Q, W_b = S_b X S_b^dagger
    CMat<T> mpd = p.q * yd * p.q;
    if (has_g) mpd += sym(CMat<T>(p.qy * qd));
    mpd = hermitize<T>(mpd);
    const CMat<T> npd = p.gp_mp->first(mpd);
    CMat<T> xd = p.q * npd * p.q;
    if (has_g) xd += sym(CMat<T>(p.qnp * qd));
    xd = hermitize<T>(xd);
    CMat<T> xdd;
    if (second) {
      CMat<T> mpdd = p.q * ydd * p.q;
      if (has_g) {
        mpdd += sym(CMat<T>(p.qy * qdd)) + T(2) * qd * p.y * qd;
        if (has_z) mpdd += T(2) * sym(CMat<T>(qd * yd * p.q));
      }
      mpdd = hermitize<T>(mpdd);
      const CMat<T> npdd = p.gp_mp->second(mpd, mpd) + p.gp_mp->first(mpdd);
      xdd = p.q * npdd * p.q;
      if (has_g) xdd += sym(CMat<T>(p.qnp * qdd)) + T(2) * qd * p.np * qd + T(2) * sym(CMat<T>(qd * npd * p.q));
      xdd = hermitize<T>(xdd);
    }

    const Eigen::Index zin = sp.z_in_dim();
    CMat<T> s1 = CMat<T>::Zero(zin, zin), s2 = CMat<T>::Zero(zin, zin);
    for (std::size_t b = 0; b < nb; ++b) {
      const CMat<T>& sb = sp.s_blocks[b];
      const CMat<T> wd = sb * xd * sb.adjoint();
      CMat<T> t1 = p.h_z[b].first(wd);
      if (has_z) t1 += p.h_z[b].second(p.w[b], zd[b]);
      s1 += sp.zhat_blocks[b].adjoint_apply(t1);
      if (second) {
        const CMat<T> wdd = sb * xdd * sb.adjoint();
        CMat<T> t2 = p.h_z[b].first(wdd);
        if (has_z) t2 += p.h_z[b].third(zd[b], p.w[b]) + T(2) * p.h_z[b].second(wd, zd[b]);
        s2 += sp.zhat_blocks[b].adjoint_apply(t2);
      }
    }
    if (is_true()) {
      jet.d1_sigma = s1;
      if (second) jet.d2_sigma = s2;
    } else {
      jet.d1_rho += s1;
      if (second) jet.d2_rho += s2;
    }
    return jet;
  }

  static void add_logdet_hessian(const CMat<T>& inv, const std::vector<SvecCoordinate>& coords, RMat<T>& h,
                                 Eigen::Index offset) {
    // H_kl = Re Tr[inv E_k inv E_l]
    const Eigen::Index n = inv.rows();
    RVec<T> col(n * n);
    for (std::size_t k = 0; k < coords.size(); ++k) {
      const auto e = detail::svec_unit<T>(coords[k]);
      const CMat<T> m = detail::sandwich_sparse<T>(inv, e, inv);
      svec_into<T>(hermitize<T>(m), col.data());
      h.block(offset, offset + static_cast<Eigen::Index>(k), n * n, 1) += col;
    }
  }

  std::shared_ptr<const ReducedConeSpec<T>> spec_;
  std::vector<SvecCoordinate> rho_coords_, sigma_coords_;
  std::vector<bool> rho_z_active_, sigma_z_active_;
  ScalarFunction<T> h_fn_, gp_fn_, sqrt_fn_;
  Point p_;
  bool valid_ = false;
};

// Psi evaluated through the reduced maps.
template <class T>
T psi_hat(const ReducedConeSpec<T>& spec, const CMat<T>& rho, const CMat<T>& sigma = CMat<T>()) {
  if (!is_positive_definite<T>(rho)) throw DomainError("psi_hat: rho is not positive definite");
  if (spec.variant == RenyiVariant::True && !is_positive_definite<T>(sigma))
    throw DomainError("psi_hat: sigma is not positive definite");
  return RenyiCone<T>(spec).psi_at(rho, sigma);
}

}  // namespace qkdcone
