// SPDX-License-Identifier: MIT
#pragma once

// Small conic programs with closed-form optima, shared by the solver tests and the
// acceptance runner.

#include "qkdcone/ipm.hpp"
#include "qkdcone/std_cones.hpp"

#include <random>

namespace qkdtest {

using namespace qkdcone;

struct AnalyticProblem {
  std::string name;
  ConicProgram<double> program;
  double optimum = 0;
  RVec<double> solution;  // full primal vector where unique, else empty
  std::vector<Eigen::Index> checked;  // indices of solution entries that are unique
};

inline std::shared_ptr<const Cone<double>> nonneg(Eigen::Index d) { return std::make_shared<NonnegCone<double>>(d); }

inline std::vector<AnalyticProblem> analytic_problems() {
  std::vector<AnalyticProblem> out;
  auto push = [&](std::string name, ProgramBuilder<double>& b, double opt, std::vector<std::pair<Eigen::Index, double>> sol) {
    AnalyticProblem p;
    p.name = std::move(name);
    p.program = b.build();
    p.optimum = opt;
    p.solution = RVec<double>::Zero(p.program.num_vars());
    for (const auto& [i, v] : sol) {
      p.solution(i) = v;
      p.checked.push_back(i);
    }
    out.push_back(std::move(p));
  };

  {  // min x s.t. x >= 1
    ProgramBuilder<double> b;
    const auto v = b.add_cone(nonneg(2));
    const auto r = b.add_row(1.0);
    b.add_coef(r, v[0], 1.0);
    b.add_coef(r, v[1], -1.0);
    b.add_objective(v[0], 1.0);
    push("lp_lower_bound", b, 1.0, {{v[0], 1.0}, {v[1], 0.0}});
  }
  {  // cheapest vertex of the simplex
    ProgramBuilder<double> b;
    const auto v = b.add_cone(nonneg(3));
    const auto r = b.add_row(1.0);
    const double cost[3] = {3, 1, 2};
    for (int i = 0; i < 3; ++i) {
      b.add_coef(r, v[i], 1.0);
      b.add_objective(v[i], cost[i]);
    }
    push("lp_simplex_vertex", b, 1.0, {{v[0], 0.0}, {v[1], 1.0}, {v[2], 0.0}});
  }
  {  // min x1 + 2 x2, x1 + x2 = 2, x1 - x2 <= 1
    ProgramBuilder<double> b;
    const auto v = b.add_cone(nonneg(3));
    const auto r1 = b.add_row(2.0), r2 = b.add_row(1.0);
    b.add_coef(r1, v[0], 1.0);
    b.add_coef(r1, v[1], 1.0);
    b.add_coef(r2, v[0], 1.0);
    b.add_coef(r2, v[1], -1.0);
    b.add_coef(r2, v[2], 1.0);
    b.add_objective(v[0], 1.0);
    b.add_objective(v[1], 2.0);
    push("lp_two_constraints", b, 2.5, {{v[0], 1.5}, {v[1], 0.5}, {v[2], 0.0}});
  }
  {  // KL minimized at the uniform reference
    ProgramBuilder<double> b;
    const int d = 4;
    const auto k = b.add_cone(std::make_shared<KLCone<double>>(d));
    const auto sum = b.add_row(1.0);
    std::vector<std::pair<Eigen::Index, double>> sol{{k[0], 0.0}};
    for (int i = 0; i < d; ++i) {
      b.add_coef(sum, k[1 + i], 1.0);
      const auto r = b.add_row(1.0 / d);
      b.add_coef(r, k[1 + d + i], 1.0);
      sol.emplace_back(k[1 + i], 1.0 / d);
    }
    b.add_objective(k[0], 1.0);
    push("kl_max_entropy", b, 0.0, sol);
  }
  {  // KL projection with one pinned coordinate
    ProgramBuilder<double> b;
    const int d = 3;
    const double p[3] = {0.2, 0.3, 0.5};
    const auto k = b.add_cone(std::make_shared<KLCone<double>>(d));
    const auto sum = b.add_row(1.0);
    for (int i = 0; i < d; ++i) {
      b.add_coef(sum, k[1 + i], 1.0);
      const auto r = b.add_row(p[i]);
      b.add_coef(r, k[1 + d + i], 1.0);
    }
    const auto pin = b.add_row(0.5);
    b.add_coef(pin, k[1], 1.0);
    b.add_objective(k[0], 1.0);
    const double q2 = 0.5 * 0.3 / 0.8, q3 = 0.5 * 0.5 / 0.8;
    push("kl_pinned_projection", b, 0.5 * std::log(0.5 / 0.2) + 0.5 * std::log(0.5 / 0.8),
         {{k[1], 0.5}, {k[2], q2}, {k[3], q3}});
  }
  {  // max u with u <= ln w, w <= e
    ProgramBuilder<double> b;
    const auto l = b.add_cone(std::make_shared<LogCone<double>>());
    const auto s = b.add_cone(nonneg(1));
    const auto rv = b.add_row(1.0), rw = b.add_row(std::exp(1.0));
    b.add_coef(rv, l[1], 1.0);
    b.add_coef(rw, l[2], 1.0);
    b.add_coef(rw, s[0], 1.0);
    b.add_objective(l[0], -1.0);
    push("log_bounded_argument", b, -1.0, {{l[0], 1.0}, {l[2], std::exp(1.0)}});
  }
  {  // min w with 1 <= ln w
    ProgramBuilder<double> b;
    const auto l = b.add_cone(std::make_shared<LogCone<double>>());
    const auto ru = b.add_row(1.0), rv = b.add_row(1.0);
    b.add_coef(ru, l[0], 1.0);
    b.add_coef(rv, l[1], 1.0);
    b.add_objective(l[2], 1.0);
    push("log_exponential_bound", b, std::exp(1.0), {{l[2], std::exp(1.0)}});
  }
  {  // min <C, X> over density matrices -> smallest eigenvalue
    std::mt19937_64 rng(4242);
    std::normal_distribution<double> nd;
    CMat<double> c(3, 3);
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) c(i, j) = {nd(rng), nd(rng)};
    c = hermitize<double>(c);
    ProgramBuilder<double> b;
    const auto x = b.add_cone(std::make_shared<PsdCone<double>>(3));
    const RVec<double> cv = svec<double>(c), iv = svec<double>(CMat<double>::Identity(3, 3));
    const auto tr = b.add_row(1.0);
    for (Eigen::Index i = 0; i < 9; ++i) {
      b.add_coef(tr, x[i], iv(i));
      b.add_objective(x[i], cv(i));
    }
    const auto sp = eigh<double>(c);
    const RVec<double> sol = svec<double>(CMat<double>(sp.unitary.col(0) * sp.unitary.col(0).adjoint()));
    std::vector<std::pair<Eigen::Index, double>> s;
    for (Eigen::Index i = 0; i < 9; ++i) s.emplace_back(x[i], sol(i));
    push("psd_min_eigenvalue", b, sp.eigenvalues(0), s);
  }
  {  // min 2 Re X_01 with unit diagonal -> X = [[1,-1],[-1,1]]
    ProgramBuilder<double> b;
    const auto x = b.add_cone(std::make_shared<PsdCone<double>>(2));
    const auto coords = svec_coordinates(2);
    for (std::size_t i = 0; i < coords.size(); ++i) {
      if (coords[i].kind == SvecCoordinate::Kind::Diagonal) {
        const auto r = b.add_row(1.0);
        b.add_coef(r, x[Eigen::Index(i)], 1.0);
      } else if (coords[i].kind == SvecCoordinate::Kind::Real) {
        b.add_objective(x[Eigen::Index(i)], std::sqrt(2.0));
      }
    }
    CMat<double> xs(2, 2);
    xs << 1, -1, -1, 1;
    const RVec<double> sol = svec<double>(xs);
    std::vector<std::pair<Eigen::Index, double>> s;
    for (Eigen::Index i = 0; i < 4; ++i) s.emplace_back(x[i], sol(i));
    push("psd_unit_diagonal", b, -2.0, s);
  }
  {  // min c'x with |x - a|_1 <= delta: the whole budget goes to the largest |c_j|
    ProgramBuilder<double> b;
    const double a[4] = {2.0, 3.0, 2.5, 4.0}, c[4] = {0.5, -1.5, 1.0, 0.25};
    const double delta = 0.75;
    const auto x = b.add_cone(nonneg(4));
    std::vector<AffineExpr<double>> expr(4);
    for (int i = 0; i < 4; ++i) {
      expr[i].add(x[i], 1.0).constant = -a[i];
      b.add_objective(x[i], c[i]);
    }
    l1_reformulate<double>(b, delta, expr);
    double opt = 0;
    for (int i = 0; i < 4; ++i) opt += c[i] * a[i];
    opt -= delta * 1.5;
    push("l1_budget_lp", b, opt, {{x[0], 2.0}, {x[1], 3.75}, {x[2], 2.5}, {x[3], 4.0}});
  }
  return out;
}

}  // namespace qkdtest
