// SPDX-License-Identifier: MIT
#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <functional>
#include <limits>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace qkdcone {

template <class T> using Complex = std::complex<T>;
template <class T> using CMat = Eigen::Matrix<Complex<T>, Eigen::Dynamic, Eigen::Dynamic>;
template <class T> using RMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
template <class T> using RVec = Eigen::Matrix<T, Eigen::Dynamic, 1>;

class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

template <class T>
CMat<T> hermitize(const CMat<T>& m) {
  return (m + m.adjoint()) * T(0.5);
}

template <class T>
T max_abs(const CMat<T>& m) {
  T best = 0;
  for (Eigen::Index j = 0; j < m.cols(); ++j)
    for (Eigen::Index i = 0; i < m.rows(); ++i) best = std::max(best, std::abs(m(i, j)));
  return best;
}

// Hilbert-Schmidt inner product Re Tr[A^dagger B]; real for Hermitian arguments.
template <class T>
T hs_inner(const CMat<T>& a, const CMat<T>& b) {
  T acc = 0;
  const Eigen::Index n = a.size();
  const Complex<T>* pa = a.data();
  const Complex<T>* pb = b.data();
  for (Eigen::Index k = 0; k < n; ++k) acc += pa[k].real() * pb[k].real() + pa[k].imag() * pb[k].imag();
  return acc;
}

template <class T>
T real_trace(const CMat<T>& m) {
  return m.trace().real();
}

// A square complex matrix that is Hermitian up to a tolerance; symmetrized on construction.
template <class T = double>
class HermitianMatrix {
 public:
  explicit HermitianMatrix(const CMat<T>& entries, T hermiticity_tol = T(1e-12)) {
    if (entries.rows() != entries.cols() || entries.rows() < 1)
      throw std::invalid_argument("HermitianMatrix: entries must be square with dim >= 1");
    const T scale = std::max(T(1), max_abs<T>(entries));
    const T dev = max_abs<T>(CMat<T>(entries - entries.adjoint()));
    if (dev > hermiticity_tol * scale * 2)
      throw std::invalid_argument("HermitianMatrix: input is not Hermitian (deviation " + std::to_string(double(dev)) + ")");
    m_ = hermitize<T>(entries);
  }
  static HermitianMatrix identity(Eigen::Index dim) { return HermitianMatrix(CMat<T>::Identity(dim, dim)); }

  [[nodiscard]] Eigen::Index dim() const { return m_.rows(); }
  [[nodiscard]] const CMat<T>& matrix() const { return m_; }
  [[nodiscard]] Complex<T> operator()(Eigen::Index i, Eigen::Index j) const { return m_(i, j); }

 private:
  CMat<T> m_;
};

template <class T = double>
struct SpectralDecomposition {
  RVec<T> eigenvalues;  // ascending
  CMat<T> unitary;

  [[nodiscard]] Eigen::Index dim() const { return eigenvalues.size(); }
  [[nodiscard]] CMat<T> reconstruct() const {
    return unitary * eigenvalues.template cast<Complex<T>>().asDiagonal() * unitary.adjoint();
  }
  [[nodiscard]] T min_eigenvalue() const { return eigenvalues(0); }
  [[nodiscard]] T max_eigenvalue() const { return eigenvalues(eigenvalues.size() - 1); }
};

// Hermitian eigensolver (tridiagonal QR). The input is read through its lower triangle after symmetrization.
template <class T>
SpectralDecomposition<T> eigh(const CMat<T>& x) {
  Eigen::SelfAdjointEigenSolver<CMat<T>> solver(hermitize<T>(x));
  if (solver.info() != Eigen::Success) throw std::runtime_error("eigh: eigensolver did not converge");
  return {solver.eigenvalues(), solver.eigenvectors()};
}

template <class T>
SpectralDecomposition<T> eigh(const HermitianMatrix<T>& x) {
  return eigh<T>(x.matrix());
}

// Real scalar function with derivatives through third order, used spectrally.
template <class T = double>
struct ScalarFunction {
  std::string name;
  std::function<T(T)> f, df, d2f, d3f;
  std::function<bool(T)> in_domain;
  // Optional cancellation-free first divided difference for distinct arguments.
  std::function<T(T, T)> first_difference;

  void check_domain(T x) const {
    if (!in_domain(x)) {
      std::ostringstream os;
      os.precision(17);
      os << name << ": eigenvalue " << double(x) << " outside the function domain";
      throw DomainError(os.str());
    }
  }

  // c * x^p; fractional or negative exponents require x > 0.
  static ScalarFunction power(T p, T c = T(1)) {
    ScalarFunction fn;
    std::ostringstream os;
    if (c != 1) os << double(c) << "*";
    os << "x^" << double(p);
    fn.name = os.str();
    const bool integral = (p == std::floor(p)) && p >= 0;
    fn.f = [p, c](T x) { return c * std::pow(x, p); };
    fn.df = [p, c](T x) { return p == 0 ? T(0) : c * p * std::pow(x, p - 1); };
    fn.d2f = [p, c](T x) { return p * (p - 1) == 0 ? T(0) : c * p * (p - 1) * std::pow(x, p - 2); };
    fn.d3f = [p, c](T x) { return p * (p - 1) * (p - 2) == 0 ? T(0) : c * p * (p - 1) * (p - 2) * std::pow(x, p - 3); };
    if (integral)
      fn.in_domain = [](T x) { return std::isfinite(x); };
    else
      fn.in_domain = [](T x) { return x > 0 && std::isfinite(x); };
    if (!integral) {
      fn.first_difference = [p, c](T a, T b) {
        // (a^p - b^p)/(a - b) = b^(p-1) expm1(p log1p(t)) / t with t = (a-b)/b
        const T t = (a - b) / b;
        if (std::abs(t) < T(0.5)) return c * std::pow(b, p - 1) * std::expm1(p * std::log1p(t)) / t;
        return c * (std::pow(a, p) - std::pow(b, p)) / (a - b);
      };
    }
    return fn;
  }

  static ScalarFunction log() {
    ScalarFunction fn;
    fn.name = "log";
    fn.f = [](T x) { return std::log(x); };
    fn.df = [](T x) { return 1 / x; };
    fn.d2f = [](T x) { return -1 / (x * x); };
    fn.d3f = [](T x) { return 2 / (x * x * x); };
    fn.in_domain = [](T x) { return x > 0 && std::isfinite(x); };
    fn.first_difference = [](T a, T b) {
      const T t = (a - b) / b;
      if (std::abs(t) < T(0.5)) return std::log1p(t) / (a - b);
      return (std::log(a) - std::log(b)) / (a - b);
    };
    return fn;
  }

  static ScalarFunction xlogx() {
    ScalarFunction fn;
    fn.name = "x log x";
    fn.f = [](T x) { return x * std::log(x); };
    fn.df = [](T x) { return std::log(x) + 1; };
    fn.d2f = [](T x) { return 1 / x; };
    fn.d3f = [](T x) { return -1 / (x * x); };
    fn.in_domain = [](T x) { return x > 0 && std::isfinite(x); };
    return fn;
  }

  static ScalarFunction identity() { return power(T(1)); }
};

// Coincidence test shared by all divided-difference orders.
template <class T>
bool eigenvalues_coincide(T a, T b) {
  return std::abs(a - b) < T(1e-10) * std::max(T(1), std::max(std::abs(a), std::abs(b)));
}

template <class T>
T first_divided_difference(const ScalarFunction<T>& fn, T a, T b) {
  if (eigenvalues_coincide(a, b)) return fn.df((a + b) / 2);
  if (fn.first_difference) return fn.first_difference(a, b);
  return (fn.f(a) - fn.f(b)) / (a - b);
}

template <class T>
T second_divided_difference(const ScalarFunction<T>& fn, T a, T b, T c) {
  std::array<T, 3> x{a, b, c};
  std::sort(x.begin(), x.end());
  if (eigenvalues_coincide(x[0], x[2])) return fn.d2f((x[0] + x[1] + x[2]) / 3) / 2;
  return (first_divided_difference(fn, x[1], x[2]) - first_divided_difference(fn, x[0], x[1])) / (x[2] - x[0]);
}

template <class T>
T third_divided_difference(const ScalarFunction<T>& fn, T a, T b, T c, T d) {
  std::array<T, 4> x{a, b, c, d};
  std::sort(x.begin(), x.end());
  if (eigenvalues_coincide(x[0], x[3])) return fn.d3f((x[0] + x[1] + x[2] + x[3]) / 4) / 6;
  return (second_divided_difference(fn, x[1], x[2], x[3]) - second_divided_difference(fn, x[0], x[1], x[2])) /
         (x[3] - x[0]);
}

// Dense tables of divided differences on a fixed spectrum. Entries are indexed by eigenvalue
// position; the order-3 table is laid out as ((i*n + k)*n + l)*n + j.
template <class T = double>
struct DividedDifferenceTable {
  int order = 1;
  Eigen::Index n = 0;
  std::vector<T> values;

  [[nodiscard]] T operator()(Eigen::Index i, Eigen::Index j) const { return values[i * n + j]; }
  [[nodiscard]] T operator()(Eigen::Index i, Eigen::Index j, Eigen::Index k) const { return values[(i * n + j) * n + k]; }
  [[nodiscard]] T operator()(Eigen::Index i, Eigen::Index k, Eigen::Index l, Eigen::Index j) const {
    return values[((i * n + k) * n + l) * n + j];
  }
};

template <class T>
DividedDifferenceTable<T> divided_differences(const ScalarFunction<T>& fn, const RVec<T>& lambda, int order) {
  if (order < 1 || order > 3) throw std::invalid_argument("divided_differences: order must be 1, 2 or 3");
  const Eigen::Index n = lambda.size();
  for (Eigen::Index i = 0; i < n; ++i) fn.check_domain(lambda(i));
  DividedDifferenceTable<T> table;
  table.order = order;
  table.n = n;
  if (order == 1) {
    table.values.resize(n * n);
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < n; ++j) table.values[i * n + j] = first_divided_difference(fn, lambda(i), lambda(j));
  } else if (order == 2) {
    table.values.resize(n * n * n);
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < n; ++j)
        for (Eigen::Index k = 0; k < n; ++k)
          table.values[(i * n + j) * n + k] = second_divided_difference(fn, lambda(i), lambda(j), lambda(k));
  } else {
    table.values.resize(n * n * n * n);
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index k = 0; k < n; ++k)
        for (Eigen::Index l = 0; l < n; ++l)
          for (Eigen::Index j = 0; j < n; ++j)
            table.values[((i * n + k) * n + l) * n + j] =
                third_divided_difference(fn, lambda(i), lambda(k), lambda(l), lambda(j));
  }
  return table;
}

// A spectral function f frozen at a point X = U diag(lambda) U^dagger. Divided-difference tables
// are built on first use, so one object should serve all derivative queries at a point.
template <class T = double>
class SpectralFunction {
 public:
  SpectralFunction(std::shared_ptr<const SpectralDecomposition<T>> spectrum, ScalarFunction<T> fn)
      : spec_(std::move(spectrum)), fn_(std::move(fn)) {
    for (Eigen::Index i = 0; i < spec_->dim(); ++i) fn_.check_domain(spec_->eigenvalues(i));
  }
  SpectralFunction(const CMat<T>& x, ScalarFunction<T> fn)
      : SpectralFunction(std::make_shared<const SpectralDecomposition<T>>(eigh<T>(x)), std::move(fn)) {}

  [[nodiscard]] const SpectralDecomposition<T>& spectrum() const { return *spec_; }
  [[nodiscard]] Eigen::Index dim() const { return spec_->dim(); }

  [[nodiscard]] CMat<T> value() const {
    RVec<T> fl(dim());
    for (Eigen::Index i = 0; i < dim(); ++i) fl(i) = fn_.f(spec_->eigenvalues(i));
    return hermitize<T>(CMat<T>(spec_->unitary * fl.template cast<Complex<T>>().asDiagonal() * spec_->unitary.adjoint()));
  }

  [[nodiscard]] T trace_value() const {
    T acc = 0;
    for (Eigen::Index i = 0; i < dim(); ++i) acc += fn_.f(spec_->eigenvalues(i));
    return acc;
  }

  // U (F1 . (U^dagger H U)) U^dagger
  [[nodiscard]] CMat<T> first(const CMat<T>& h) const { return from_eigenbasis(first_eigenbasis(to_eigenbasis(h))); }

  // D^2 f(X)[H,K]
  [[nodiscard]] CMat<T> second(const CMat<T>& h, const CMat<T>& k) const {
    return from_eigenbasis(second_eigenbasis(to_eigenbasis(h), to_eigenbasis(k)));
  }

  // D^3 f(X)[H,H,K]
  [[nodiscard]] CMat<T> third(const CMat<T>& h, const CMat<T>& k) const {
    return from_eigenbasis(third_eigenbasis(to_eigenbasis(h), to_eigenbasis(k)));
  }

  [[nodiscard]] CMat<T> to_eigenbasis(const CMat<T>& a) const { return spec_->unitary.adjoint() * a * spec_->unitary; }
  [[nodiscard]] CMat<T> from_eigenbasis(const CMat<T>& a) const {
    return hermitize<T>(CMat<T>(spec_->unitary * a * spec_->unitary.adjoint()));
  }

  [[nodiscard]] CMat<T> first_eigenbasis(const CMat<T>& hh) const {
    const auto& f1 = table1();
    const Eigen::Index n = dim();
    CMat<T> out(n, n);
    for (Eigen::Index j = 0; j < n; ++j)
      for (Eigen::Index i = 0; i < n; ++i) out(i, j) = hh(i, j) * f1(i, j);
    return out;
  }

  [[nodiscard]] CMat<T> second_eigenbasis(const CMat<T>& hh, const CMat<T>& kk) const {
    const auto& f2 = table2();
    const Eigen::Index n = dim();
    CMat<T> out = CMat<T>::Zero(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < n; ++j) {
        Complex<T> acc(0);
        const T* row = &f2.values[(i * n + j) * n];
        for (Eigen::Index k = 0; k < n; ++k) acc += row[k] * (hh(i, k) * kk(k, j) + kk(i, k) * hh(k, j));
        out(i, j) = acc;
      }
    return out;
  }

  [[nodiscard]] CMat<T> third_eigenbasis(const CMat<T>& hh, const CMat<T>& kk) const {
    const Eigen::Index n = dim();
    const auto& lam = spec_->eigenvalues;
    const auto& f2 = table2();
    // third differences on the fly from the second-order table (eigenvalues are sorted)
    auto dd3 = [&](Eigen::Index a, Eigen::Index b, Eigen::Index c, Eigen::Index d) {
      std::array<Eigen::Index, 4> idx{a, b, c, d};
      std::sort(idx.begin(), idx.end());
      const T lo = lam(idx[0]);
      const T hi = lam(idx[3]);
      if (eigenvalues_coincide(lo, hi)) return fn_.d3f((lam(idx[0]) + lam(idx[1]) + lam(idx[2]) + lam(idx[3])) / 4) / 6;
      return (f2(idx[1], idx[2], idx[3]) - f2(idx[0], idx[1], idx[2])) / (hi - lo);
    };
    CMat<T> out = CMat<T>::Zero(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < n; ++j) {
        Complex<T> acc(0);
        for (Eigen::Index k = 0; k < n; ++k)
          for (Eigen::Index l = 0; l < n; ++l) {
            const Complex<T> term = hh(i, k) * hh(k, l) * kk(l, j) + hh(i, k) * kk(k, l) * hh(l, j) + kk(i, k) * hh(k, l) * hh(l, j);
            acc += dd3(i, k, l, j) * term;
          }
        out(i, j) = T(2) * acc;
      }
    return out;
  }

  [[nodiscard]] const DividedDifferenceTable<T>& table1() const {
    if (!f1_) f1_ = std::make_shared<DividedDifferenceTable<T>>(divided_differences(fn_, spec_->eigenvalues, 1));
    return *f1_;
  }
  [[nodiscard]] const DividedDifferenceTable<T>& table2() const {
    if (!f2_) {
      // build from the first-order table so near-coincident handling stays consistent
      const auto& f1 = table1();
      const auto& lam = spec_->eigenvalues;
      const Eigen::Index n = dim();
      auto tab = std::make_shared<DividedDifferenceTable<T>>();
      tab->order = 2;
      tab->n = n;
      tab->values.resize(n * n * n);
      for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < n; ++j)
          for (Eigen::Index k = 0; k < n; ++k) {
            std::array<Eigen::Index, 3> idx{i, j, k};
            std::sort(idx.begin(), idx.end());
            T v;
            if (eigenvalues_coincide(lam(idx[0]), lam(idx[2])))
              v = fn_.d2f((lam(idx[0]) + lam(idx[1]) + lam(idx[2])) / 3) / 2;
            else
              v = (f1(idx[1], idx[2]) - f1(idx[0], idx[1])) / (lam(idx[2]) - lam(idx[0]));
            tab->values[(i * n + j) * n + k] = v;
          }
      f2_ = std::move(tab);
    }
    return *f2_;
  }

  [[nodiscard]] const ScalarFunction<T>& function() const { return fn_; }

 private:
  std::shared_ptr<const SpectralDecomposition<T>> spec_;
  ScalarFunction<T> fn_;
  mutable std::shared_ptr<DividedDifferenceTable<T>> f1_, f2_;
};

template <class T>
CMat<T> spectral_apply(const ScalarFunction<T>& fn, const CMat<T>& x) {
  return SpectralFunction<T>(x, fn).value();
}

template <class T>
HermitianMatrix<T> spectral_apply(const ScalarFunction<T>& fn, const HermitianMatrix<T>& x) {
  return HermitianMatrix<T>(spectral_apply<T>(fn, x.matrix()));
}

// Fréchet derivative of order dirs.size() (1: Df[H], 2: D^2f[H,K], 3: D^3f[H,H,K] with dirs = {H,K}
// or {H,H,K}).
template <class T>
CMat<T> frechet_derivative(const ScalarFunction<T>& fn, const CMat<T>& x, const std::vector<CMat<T>>& dirs) {
  SpectralFunction<T> sf(x, fn);
  switch (dirs.size()) {
    case 1:
      return sf.first(dirs[0]);
    case 2:
      return sf.second(dirs[0], dirs[1]);
    case 3:
      if (max_abs<T>(CMat<T>(dirs[0] - dirs[1])) != 0)
        throw std::invalid_argument("frechet_derivative: third order is evaluated as D^3f[H,H,K]");
      return sf.third(dirs[0], dirs[2]);
    default:
      throw std::invalid_argument("frechet_derivative: between one and three directions required");
  }
}

// Real vectorization of Hermitian matrices: for each column j, the diagonal entry then, for i < j,
// sqrt2 Re X_ij and sqrt2 Im X_ij. Preserves the Hilbert-Schmidt inner product.
inline Eigen::Index svec_length(Eigen::Index n) { return n * n; }

template <class T>
void svec_into(const CMat<T>& x, T* out) {
  const Eigen::Index n = x.rows();
  const T r2 = std::sqrt(T(2));
  Eigen::Index p = 0;
  for (Eigen::Index j = 0; j < n; ++j) {
    for (Eigen::Index i = 0; i < j; ++i) {
      out[p++] = r2 * x(i, j).real();
      out[p++] = r2 * x(i, j).imag();
    }
    out[p++] = x(j, j).real();
  }
}

template <class T>
RVec<T> svec(const CMat<T>& x) {
  RVec<T> v(svec_length(x.rows()));
  svec_into<T>(x, v.data());
  return v;
}

template <class T>
CMat<T> smat(const T* v, Eigen::Index n) {
  const T r2 = std::sqrt(T(2));
  CMat<T> x(n, n);
  Eigen::Index p = 0;
  for (Eigen::Index j = 0; j < n; ++j) {
    for (Eigen::Index i = 0; i < j; ++i) {
      const Complex<T> z(v[p] / r2, v[p + 1] / r2);
      p += 2;
      x(i, j) = z;
      x(j, i) = std::conj(z);
    }
    x(j, j) = Complex<T>(v[p++], 0);
  }
  return x;
}

template <class T>
CMat<T> smat(const RVec<T>& v) {
  const auto n = static_cast<Eigen::Index>(std::llround(std::sqrt(static_cast<double>(v.size()))));
  if (n * n != v.size()) throw std::invalid_argument("smat: length is not a perfect square");
  return smat<T>(v.data(), n);
}

// Hermitian matrix whose svec is the k-th unit vector.
template <class T>
CMat<T> svec_basis(Eigen::Index n, Eigen::Index k) {
  RVec<T> e = RVec<T>::Zero(n * n);
  e(k) = 1;
  return smat<T>(e);
}

// Sparse description of svec_basis: up to two nonzero entries.
struct SvecCoordinate {
  Eigen::Index row = 0, col = 0;
  enum class Kind { Diagonal, Real, Imag } kind = Kind::Diagonal;
};

inline std::vector<SvecCoordinate> svec_coordinates(Eigen::Index n) {
  std::vector<SvecCoordinate> out;
  out.reserve(n * n);
  for (Eigen::Index j = 0; j < n; ++j) {
    for (Eigen::Index i = 0; i < j; ++i) {
      out.push_back({i, j, SvecCoordinate::Kind::Real});
      out.push_back({i, j, SvecCoordinate::Kind::Imag});
    }
    out.push_back({j, j, SvecCoordinate::Kind::Diagonal});
  }
  return out;
}

template <class T>
T min_eigenvalue(const CMat<T>& x) {
  Eigen::SelfAdjointEigenSolver<CMat<T>> solver(hermitize<T>(x), Eigen::EigenvaluesOnly);
  return solver.eigenvalues()(0);
}

// Cholesky-based positive definiteness test.
template <class T>
bool is_positive_definite(const CMat<T>& x) {
  Eigen::LLT<CMat<T>> llt(hermitize<T>(x));
  if (llt.info() != Eigen::Success) return false;
  const auto& l = llt.matrixLLT();
  for (Eigen::Index i = 0; i < l.rows(); ++i)
    if (!(l(i, i).real() > 0) || !std::isfinite(l(i, i).real())) return false;
  return true;
}

}  // namespace qkdcone
