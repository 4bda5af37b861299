// SPDX-License-Identifier: MIT
#pragma once

#include "qkdcone/cone.hpp"

#include <tuple>
#include <vector>

namespace qkdcone {

// min c^T x  s.t.  A x = b,  x in K_1 x ... x K_r (cones laid out contiguously in order).
template <class T = double>
struct ConicProgram {
  RVec<T> c;
  RMat<T> A;
  RVec<T> b;
  std::vector<std::shared_ptr<const Cone<T>>> cones;
  std::vector<Eigen::Index> offsets;

  [[nodiscard]] Eigen::Index num_vars() const { return c.size(); }
  [[nodiscard]] Eigen::Index num_rows() const { return b.size(); }
  [[nodiscard]] T nu() const {
    T total = 0;
    for (const auto& k : cones) total += k->nu();
    return total;
  }

  void validate() const {
    if (cones.size() != offsets.size()) throw std::invalid_argument("ConicProgram: offsets do not match cones");
    Eigen::Index pos = 0;
    for (std::size_t i = 0; i < cones.size(); ++i) {
      if (offsets[i] != pos) throw std::invalid_argument("ConicProgram: cones must partition the variable vector");
      pos += cones[i]->dim();
    }
    if (pos != c.size()) throw std::invalid_argument("ConicProgram: cone dimensions do not cover the variables");
    if (A.rows() != b.size() || A.cols() != c.size()) throw std::invalid_argument("ConicProgram: A has wrong shape");
    if (!c.allFinite() || !A.allFinite() || !b.allFinite()) throw std::invalid_argument("ConicProgram: non-finite data");
  }
};

// Affine scalar expression constant + sum coef * x[var].
template <class T = double>
struct AffineExpr {
  T constant = 0;
  std::vector<std::pair<Eigen::Index, T>> terms;

  AffineExpr& add(Eigen::Index var, T coef) {
    terms.emplace_back(var, coef);
    return *this;
  }
  [[nodiscard]] T evaluate(const RVec<T>& x) const {
    T v = constant;
    for (const auto& [i, a] : terms) v += a * x(i);
    return v;
  }
};

// Incremental construction of a ConicProgram: cones first claim variable blocks, then
// equality rows and objective coefficients refer to variable indices.
template <class T = double>
class ProgramBuilder {
 public:
  struct Block {
    Eigen::Index offset = 0, size = 0;
    [[nodiscard]] Eigen::Index operator[](Eigen::Index i) const { return offset + i; }
  };

  Block add_cone(std::shared_ptr<const Cone<T>> cone) {
    Block blk{num_vars_, cone->dim()};
    offsets_.push_back(num_vars_);
    num_vars_ += cone->dim();
    cones_.push_back(std::move(cone));
    return blk;
  }

  Eigen::Index add_row(T rhs) {
    rhs_.push_back(rhs);
    return static_cast<Eigen::Index>(rhs_.size()) - 1;
  }
  void add_coef(Eigen::Index row, Eigen::Index var, T value) {
    if (value != T(0)) entries_.emplace_back(row, var, value);
  }
  // expr == 0 as one row.
  Eigen::Index add_equality(const AffineExpr<T>& expr) {
    const Eigen::Index row = add_row(-expr.constant);
    for (const auto& [i, a] : expr.terms) add_coef(row, i, a);
    return row;
  }
  void add_objective(Eigen::Index var, T value) { objective_.emplace_back(var, value); }

  [[nodiscard]] Eigen::Index num_vars() const { return num_vars_; }
  [[nodiscard]] Eigen::Index num_rows() const { return static_cast<Eigen::Index>(rhs_.size()); }

  [[nodiscard]] ConicProgram<T> build() const {
    ConicProgram<T> prog;
    prog.c = RVec<T>::Zero(num_vars_);
    for (const auto& [i, a] : objective_) prog.c(i) += a;
    prog.A = RMat<T>::Zero(num_rows(), num_vars_);
    for (const auto& [r, i, a] : entries_) prog.A(r, i) += a;
    prog.b = RVec<T>::Map(rhs_.data(), num_rows());
    prog.cones = cones_;
    prog.offsets = offsets_;
    prog.validate();
    return prog;
  }

 private:
  Eigen::Index num_vars_ = 0;
  std::vector<std::shared_ptr<const Cone<T>>> cones_;
  std::vector<Eigen::Index> offsets_;
  std::vector<T> rhs_;
  std::vector<std::tuple<Eigen::Index, Eigen::Index, T>> entries_;
  std::vector<std::pair<Eigen::Index, T>> objective_;
};

}  // namespace qkdcone
