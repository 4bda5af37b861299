// SPDX-License-Identifier: MIT
#pragma once

#include "qkdcone/matfun.hpp"

#include <numeric>
#include <optional>

namespace qkdcone {

// Completely positive map X -> sum_i K_i X K_i^dagger.
template <class T = double>
class KrausMap {
 public:
  KrausMap() = default;
  explicit KrausMap(std::vector<CMat<T>> kraus) : kraus_(std::move(kraus)) {
    if (kraus_.empty()) throw std::invalid_argument("KrausMap: at least one Kraus operator required");
    out_ = kraus_.front().rows();
    in_ = kraus_.front().cols();
    if (in_ < 1 || out_ < 1) throw std::invalid_argument("KrausMap: empty Kraus operator");
    for (const auto& k : kraus_)
      if (k.rows() != out_ || k.cols() != in_) throw std::invalid_argument("KrausMap: Kraus operators disagree in shape");
  }

  static KrausMap identity(Eigen::Index dim) { return KrausMap({CMat<T>::Identity(dim, dim)}); }
  static KrausMap conjugation(const CMat<T>& k) { return KrausMap({k}); }

  // Choi matrix sum_{ij} |i><j| (x) Phi(|i><j|), input factor first.
  [[nodiscard]] CMat<T> choi() const {
    CMat<T> c = CMat<T>::Zero(in_ * out_, in_ * out_);
    for (const auto& k : kraus_) {
      // vectorized Kraus: column index i, row index i*out + a
      Eigen::Matrix<Complex<T>, Eigen::Dynamic, 1> v(in_ * out_);
      for (Eigen::Index i = 0; i < in_; ++i)
        for (Eigen::Index a = 0; a < out_; ++a) v(i * out_ + a) = k(a, i);
      c += v * v.adjoint();
    }
    return c;
  }

  static KrausMap from_choi(const CMat<T>& choi, Eigen::Index in_dim, Eigen::Index out_dim, T cutoff = T(1e-12)) {
    if (choi.rows() != in_dim * out_dim || choi.cols() != in_dim * out_dim)
      throw std::invalid_argument("KrausMap::from_choi: shape mismatch");
    const auto sp = eigh<T>(choi);
    const T top = std::max(T(0), sp.max_eigenvalue());
    if (sp.min_eigenvalue() < -T(1e-9) * std::max(T(1), top))
      throw std::invalid_argument("KrausMap::from_choi: Choi matrix is not positive semidefinite");
    std::vector<CMat<T>> ops;
    for (Eigen::Index e = sp.dim() - 1; e >= 0; --e) {
      const T lam = sp.eigenvalues(e);
      if (lam <= cutoff * std::max(T(1), top)) break;
      CMat<T> k(out_dim, in_dim);
      for (Eigen::Index i = 0; i < in_dim; ++i)
        for (Eigen::Index a = 0; a < out_dim; ++a) k(a, i) = std::sqrt(lam) * sp.unitary(i * out_dim + a, e);
      ops.push_back(std::move(k));
    }
    if (ops.empty()) ops.push_back(CMat<T>::Zero(out_dim, in_dim));
    return KrausMap(std::move(ops));
  }

  [[nodiscard]] Eigen::Index in_dim() const { return in_; }
  [[nodiscard]] Eigen::Index out_dim() const { return out_; }
  [[nodiscard]] const std::vector<CMat<T>>& operators() const { return kraus_; }

  [[nodiscard]] CMat<T> apply(const CMat<T>& x) const {
    if (x.rows() != in_ || x.cols() != in_) throw std::invalid_argument("KrausMap::apply: dimension mismatch");
    CMat<T> out = CMat<T>::Zero(out_, out_);
    for (const auto& k : kraus_) out.noalias() += k * x * k.adjoint();
    return hermitize<T>(out);
  }
  [[nodiscard]] HermitianMatrix<T> apply(const HermitianMatrix<T>& x) const { return HermitianMatrix<T>(apply(x.matrix())); }

  [[nodiscard]] CMat<T> adjoint_apply(const CMat<T>& y) const {
    if (y.rows() != out_ || y.cols() != out_) throw std::invalid_argument("KrausMap::adjoint_apply: dimension mismatch");
    CMat<T> out = CMat<T>::Zero(in_, in_);
    for (const auto& k : kraus_) out.noalias() += k.adjoint() * y * k;
    return hermitize<T>(out);
  }
  [[nodiscard]] HermitianMatrix<T> adjoint_apply(const HermitianMatrix<T>& y) const {
    return HermitianMatrix<T>(adjoint_apply(y.matrix()));
  }

  // (*this) o inner
  [[nodiscard]] KrausMap compose(const KrausMap& inner) const {
    if (inner.out_dim() != in_) throw std::invalid_argument("KrausMap::compose: dimension mismatch");
    std::vector<CMat<T>> ops;
    for (const auto& l : kraus_)
      for (const auto& k : inner.operators()) {
        CMat<T> lk = l * k;
        if (max_abs<T>(lk) > 0) ops.push_back(std::move(lk));
      }
    if (ops.empty()) ops.push_back(CMat<T>::Zero(out_, inner.in_dim()));
    return KrausMap(std::move(ops));
  }

  // X -> Phi(V X V^dagger)
  [[nodiscard]] KrausMap restrict_domain(const CMat<T>& v) const {
    std::vector<CMat<T>> ops;
    for (const auto& k : kraus_) ops.push_back(k * v);
    return KrausMap(std::move(ops));
  }

  // X -> W^dagger Phi(X) W
  [[nodiscard]] KrausMap compress_codomain(const CMat<T>& w) const {
    std::vector<CMat<T>> ops;
    for (const auto& k : kraus_) ops.push_back(w.adjoint() * k);
    return KrausMap(std::move(ops));
  }

  [[nodiscard]] KrausMap scaled(T factor) const {
    std::vector<CMat<T>> ops;
    for (const auto& k : kraus_) ops.push_back(k * std::sqrt(factor));
    return KrausMap(std::move(ops));
  }

  [[nodiscard]] bool is_identity() const {
    return kraus_.size() == 1 && in_ == out_ && max_abs<T>(CMat<T>(kraus_[0] - CMat<T>::Identity(in_, in_))) == 0;
  }

 private:
  std::vector<CMat<T>> kraus_;
  Eigen::Index in_ = 0, out_ = 0;
};

template <class T>
KrausMap<T> sum_maps(const KrausMap<T>& a, const KrausMap<T>& b) {
  auto ops = a.operators();
  ops.insert(ops.end(), b.operators().begin(), b.operators().end());
  return KrausMap<T>(std::move(ops));
}

// Relative eigenvalue cutoff separating the support of Phi(1) from round-off.
template <class T>
constexpr T support_cutoff() {
  return T(1e-9);
}

// Orthonormal basis of the support of a PSD matrix (eigenvectors, descending eigenvalue order).
template <class T>
CMat<T> support_basis(const CMat<T>& psd, T cutoff = support_cutoff<T>(), T reference_top = T(0)) {
  const auto sp = eigh<T>(psd);
  const T top = reference_top > 0 ? reference_top : sp.max_eigenvalue();
  if (!(top > 0)) throw std::invalid_argument("support_basis: zero matrix has empty support");
  Eigen::Index k = 0;
  for (Eigen::Index e = sp.dim() - 1; e >= 0 && sp.eigenvalues(e) > cutoff * top; --e) ++k;
  CMat<T> w(sp.dim(), k);
  for (Eigen::Index c = 0; c < k; ++c) w.col(c) = sp.unitary.col(sp.dim() - 1 - c);
  return w;
}

template <class T>
CMat<T> support_isometry(const KrausMap<T>& map) {
  const CMat<T> image = map.apply(CMat<T>::Identity(map.in_dim(), map.in_dim()));
  if (max_abs<T>(image) == 0) throw std::invalid_argument("support_isometry: zero map");
  return support_basis<T>(image);
}

// Reduced map X -> W^dagger Phi(X) W that is strictly positive. The reduced codomain may split
// into orthogonal blocks (block_offsets/block_maps) when Phi(X) is block diagonal for every X.
template <class T = double>
struct FacialReduction {
  KrausMap<T> reduced_map;
  CMat<T> isometry_W;
  Eigen::Index reduced_dim = 0;
  std::vector<Eigen::Index> block_offsets;  // size blocks+1
  std::vector<KrausMap<T>> block_maps;

  [[nodiscard]] std::size_t block_count() const { return block_maps.size(); }
};

// Connected components of output rows, coupling all rows touched by the same Kraus operator. Phi(X) is block diagonal
// with respect to this partition for all X.
template <class T>
std::vector<std::vector<Eigen::Index>> output_row_blocks(const KrausMap<T>& map, T tol = T(0)) {
  const Eigen::Index m = map.out_dim();
  std::vector<Eigen::Index> parent(m);
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](Eigen::Index a) {
    while (parent[a] != a) a = parent[a] = parent[parent[a]];
    return a;
  };
  std::vector<bool> used(m, false);
  for (const auto& k : map.operators()) {
    const T scale = max_abs<T>(k);
    Eigen::Index first = -1;
    for (Eigen::Index r = 0; r < m; ++r) {
      if (k.row(r).cwiseAbs().maxCoeff() <= tol * scale || scale == 0) continue;
      used[r] = true;
      if (first < 0) {
        first = r;
      } else {
        const auto ra = find(first), rb = find(r);
        if (ra != rb) parent[std::max(ra, rb)] = std::min(ra, rb);
      }
    }
  }
  std::vector<std::vector<Eigen::Index>> blocks;
  std::vector<Eigen::Index> slot(m, -1);
  for (Eigen::Index r = 0; r < m; ++r) {
    if (!used[r]) continue;
    const auto root = find(r);
    if (slot[root] < 0) {
      slot[root] = static_cast<Eigen::Index>(blocks.size());
      blocks.emplace_back();
    }
    blocks[slot[root]].push_back(r);
  }
  return blocks;
}

template <class T>
FacialReduction<T> facially_reduce(const KrausMap<T>& map, bool split_blocks = true) {
  const Eigen::Index m = map.out_dim();
  std::vector<std::vector<Eigen::Index>> rows;
  if (split_blocks) {
    rows = output_row_blocks<T>(map);
  } else {
    rows.emplace_back(m);
    std::iota(rows.back().begin(), rows.back().end(), 0);
  }
  FacialReduction<T> red;
  std::vector<CMat<T>> pieces;
  Eigen::Index total = 0;
  const T global_top = eigh<T>(map.apply(CMat<T>::Identity(map.in_dim(), map.in_dim()))).max_eigenvalue();
  red.block_offsets.push_back(0);
  for (const auto& blk : rows) {
    CMat<T> embed = CMat<T>::Zero(m, static_cast<Eigen::Index>(blk.size()));
    for (std::size_t i = 0; i < blk.size(); ++i) embed(blk[i], static_cast<Eigen::Index>(i)) = 1;
    const KrausMap<T> restricted = map.compress_codomain(embed);
    const CMat<T> image = restricted.apply(CMat<T>::Identity(map.in_dim(), map.in_dim()));
    if (max_abs<T>(image) == 0) continue;
    const CMat<T> wb = support_basis<T>(image, support_cutoff<T>(), global_top);
    if (wb.cols() == 0) continue;
    pieces.push_back(embed * wb);
    red.block_maps.push_back(restricted.compress_codomain(wb));
    total += wb.cols();
    red.block_offsets.push_back(total);
  }
  if (pieces.empty()) throw std::invalid_argument("facially_reduce: zero map");
  red.isometry_W.resize(m, total);
  Eigen::Index col = 0;
  for (const auto& p : pieces) {
    red.isometry_W.middleCols(col, p.cols()) = p;
    col += p.cols();
  }
  red.reduced_dim = total;
  red.reduced_map = map.compress_codomain(red.isometry_W);
  return red;
}

template <class T = double>
struct ReducedPair {
  FacialReduction<T> g;
  FacialReduction<T> z;
  CMat<T> S;
};

template <class T>
void check_isometry(const CMat<T>& s, T tol, const char* what) {
  const CMat<T> gram = s.adjoint() * s;
  const T dev = max_abs<T>(CMat<T>(gram - CMat<T>::Identity(gram.rows(), gram.cols())));
  if (dev > tol)
    throw std::invalid_argument(std::string(what) + ": support of the key map is not contained in the support of the " +
                                "pinching map (S^dagger S deviates from identity by " + std::to_string(double(dev)) + ")");
}

// Reduces (G, Z) for the pair Psi(G(.), Z(.)). S = W_Z^dagger W_G must be an isometry.
template <class T>
ReducedPair<T> facially_reduce_pair(const KrausMap<T>& g, const KrausMap<T>& z) {
  if (g.out_dim() != z.out_dim()) throw std::invalid_argument("facially_reduce_pair: codomains differ");
  ReducedPair<T> pair{facially_reduce<T>(g, false), facially_reduce<T>(z, true), {}};
  pair.S = pair.z.isometry_W.adjoint() * pair.g.isometry_W;
  check_isometry<T>(pair.S, T(1e-8), "facially_reduce_pair");
  return pair;
}

// True-cone reduction when Z is a pinching {P_r}: the sigma argument is restricted to
// span_r range(P_r W_G) without changing the infimum over sigma. Returns the pair for a map
// whose domain is that span: Ghat = reduce(G), Zhat = pinching on the span, S = V^dagger W_G.
template <class T>
std::optional<std::vector<CMat<T>>> pinching_projectors(const KrausMap<T>& z, T tol = T(1e-12)) {
  const Eigen::Index m = z.out_dim();
  if (z.in_dim() != m) return std::nullopt;
  std::vector<CMat<T>> projectors;
  CMat<T> sum = CMat<T>::Zero(m, m);
  for (const auto& p : z.operators()) {
    if (max_abs<T>(CMat<T>(p - p.adjoint())) > tol) return std::nullopt;
    if (max_abs<T>(CMat<T>(p * p - p)) > tol) return std::nullopt;
    for (const auto& q : projectors)
      if (max_abs<T>(CMat<T>(p * q)) > tol) return std::nullopt;
    projectors.push_back(p);
    sum += p;
  }
  if (max_abs<T>(CMat<T>(sum - CMat<T>::Identity(m, m))) > tol) return std::nullopt;
  return projectors;
}

template <class T = double>
struct PinchedReduction {
  ReducedPair<T> pair;
  CMat<T> sigma_basis;  // V: columns span the retained sigma subspace of Z's domain
};

template <class T>
PinchedReduction<T> pinched_reduce_pair(const KrausMap<T>& g, const KrausMap<T>& z) {
  const auto projectors = pinching_projectors<T>(z);
  if (!projectors) throw std::invalid_argument("pinched_reduce_pair: Z is not a pinching map");
  PinchedReduction<T> out;
  out.pair.g = facially_reduce<T>(g, false);
  const CMat<T>& wg = out.pair.g.isometry_W;
  const Eigen::Index m = z.out_dim();
  std::vector<CMat<T>> bases;
  Eigen::Index k = 0;
  for (const auto& p : *projectors) {
    const CMat<T> img = p * wg;
    if (max_abs<T>(img) <= T(1e-12)) continue;
    CMat<T> b = support_basis<T>(CMat<T>(img * img.adjoint()));
    k += b.cols();
    bases.push_back(std::move(b));
  }
  out.sigma_basis.resize(m, k);
  FacialReduction<T>& zr = out.pair.z;
  zr.block_offsets.push_back(0);
  Eigen::Index col = 0;
  std::vector<CMat<T>> ops;
  for (const auto& b : bases) {
    out.sigma_basis.middleCols(col, b.cols()) = b;
    col += b.cols();
    zr.block_offsets.push_back(col);
  }
  for (std::size_t r = 0; r < bases.size(); ++r) {
    CMat<T> sel = CMat<T>::Zero(bases[r].cols(), k);
    sel.middleCols(zr.block_offsets[r], bases[r].cols()).setIdentity();
    zr.block_maps.push_back(KrausMap<T>({sel}));
    CMat<T> proj = CMat<T>::Zero(k, k);
    proj.block(zr.block_offsets[r], zr.block_offsets[r], bases[r].cols(), bases[r].cols()).setIdentity();
    ops.push_back(std::move(proj));
  }
  zr.reduced_map = KrausMap<T>(std::move(ops));
  zr.isometry_W = CMat<T>::Identity(k, k);
  zr.reduced_dim = k;
  out.pair.S = out.sigma_basis.adjoint() * wg;
  check_isometry<T>(out.pair.S, T(1e-8), "pinched_reduce_pair");
  return out;
}

// Partial trace over the second tensor factor of a (da*db)-dim operator.
template <class T>
CMat<T> partial_trace_second(const CMat<T>& x, Eigen::Index da, Eigen::Index db) {
  CMat<T> out = CMat<T>::Zero(da, da);
  for (Eigen::Index i = 0; i < da; ++i)
    for (Eigen::Index j = 0; j < da; ++j) {
      Complex<T> acc(0);
      for (Eigen::Index b = 0; b < db; ++b) acc += x(i * db + b, j * db + b);
      out(i, j) = acc;
    }
  return out;
}

template <class T>
CMat<T> kron(const CMat<T>& a, const CMat<T>& b) {
  CMat<T> out(a.rows() * b.rows(), a.cols() * b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.cols(); ++j) out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
  return out;
}

template <class T>
CMat<T> ket_bra(Eigen::Index dim, Eigen::Index i, Eigen::Index j) {
  CMat<T> out = CMat<T>::Zero(dim, dim);
  out(i, j) = 1;
  return out;
}

template <class T>
CMat<T> basis_ket(Eigen::Index dim, Eigen::Index i) {
  CMat<T> out = CMat<T>::Zero(dim, 1);
  out(i, 0) = 1;
  return out;
}

}  // namespace qkdcone
