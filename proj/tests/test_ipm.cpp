// SPDX-License-Identifier: MIT
#include "solver_problems.hpp"

#include <gtest/gtest.h>

#include <iostream>

using namespace qkdtest;

TEST(Solver, AnalyticProblemSet) {
  for (const auto& p : analytic_problems()) {
    const auto res = solve(p.program);
    ASSERT_EQ(res.status, SolveStatus::Optimal) << p.name << ": " << res.diagnostics;
    EXPECT_LT(res.gap, 1e-8) << p.name;
    EXPECT_NEAR(res.primal_objective, p.optimum, 1e-6 * std::max(1.0, std::abs(p.optimum))) << p.name;
    double err = 0;
    for (const auto i : p.checked) err = std::max(err, std::abs(res.x(i) - p.solution(i)));
    EXPECT_LT(err, 1e-6) << p.name;
    // weak duality up to feasibility tolerance
    EXPECT_GE(res.primal_objective - res.dual_objective, -1e-7) << p.name;
  }
}

TEST(Solver, RowScalingAndConeOrderInvariance) {
  for (const auto& p : analytic_problems()) {
    auto scaled = p.program;
    for (Eigen::Index i = 0; i < scaled.A.rows(); ++i) {
      const double f = 1.0 + 3.0 * double(i % 4);
      scaled.A.row(i) *= f;
      scaled.b(i) *= f;
    }
    const auto a = solve(p.program), b = solve(scaled);
    ASSERT_TRUE(a.optimal() && b.optimal()) << p.name;
    for (const auto i : p.checked) EXPECT_NEAR(a.x(i), b.x(i), 1e-6) << p.name;
  }
  // reverse cone order of a two-cone problem
  const auto probs = analytic_problems();
  const auto& p = *std::find_if(probs.begin(), probs.end(), [](const auto& q) { return q.name == "log_bounded_argument"; });
  ConicProgram<double> rev;
  const Eigen::Index n0 = p.program.cones[0]->dim(), n1 = p.program.cones[1]->dim();
  rev.cones = {p.program.cones[1], p.program.cones[0]};
  rev.offsets = {0, n1};
  rev.c.resize(n0 + n1);
  rev.c << p.program.c.tail(n1), p.program.c.head(n0);
  rev.A.resize(p.program.A.rows(), n0 + n1);
  rev.A << p.program.A.rightCols(n1), p.program.A.leftCols(n0);
  rev.b = p.program.b;
  const auto r1 = solve(p.program), r2 = solve(rev);
  ASSERT_TRUE(r1.optimal() && r2.optimal());
  EXPECT_NEAR(r1.primal_objective, r2.primal_objective, 1e-6);
  EXPECT_NEAR(r1.x(0), r2.x(n1), 1e-6);
}

TEST(Solver, DetectsPrimalInfeasibility) {
  ProgramBuilder<double> b;
  const auto v = b.add_cone(nonneg(2));
  const auto r = b.add_row(-1.0);
  b.add_coef(r, v[0], 1.0);
  b.add_coef(r, v[1], 1.0);
  b.add_objective(v[0], 1.0);
  EXPECT_EQ(solve(b.build()).status, SolveStatus::PrimalInfeasible);
}

TEST(Solver, DetectsDualInfeasibility) {
  ProgramBuilder<double> b;
  const auto v = b.add_cone(nonneg(2));
  const auto r = b.add_row(0.0);
  b.add_coef(r, v[0], 1.0);
  b.add_coef(r, v[1], -1.0);
  b.add_objective(v[0], -1.0);
  EXPECT_EQ(solve(b.build()).status, SolveStatus::DualInfeasible);
}

TEST(Solver, InconsistentDependentRows) {
  ProgramBuilder<double> b;
  const auto v = b.add_cone(nonneg(2));
  const auto r1 = b.add_row(1.0), r2 = b.add_row(2.0);
  for (const auto r : {r1, r2}) {
    b.add_coef(r, v[0], 1.0);
    b.add_coef(r, v[1], 1.0);
  }
  EXPECT_EQ(solve(b.build()).status, SolveStatus::PrimalInfeasible);
}

TEST(Solver, RedundantRowsAreDropped) {
  ProgramBuilder<double> b;
  const auto v = b.add_cone(nonneg(2));
  const auto r1 = b.add_row(1.0), r2 = b.add_row(2.0);
  b.add_coef(r1, v[0], 1.0);
  b.add_coef(r1, v[1], 1.0);
  b.add_coef(r2, v[0], 2.0);
  b.add_coef(r2, v[1], 2.0);
  b.add_objective(v[0], 1.0);
  const auto res = solve(b.build());
  ASSERT_TRUE(res.optimal()) << res.diagnostics;
  EXPECT_NEAR(res.x(1), 1.0, 1e-7);
}

TEST(Solver, IterationLimitReported) {
  SolverOptions<double> opt;
  opt.max_iters = 2;
  EXPECT_EQ(solve(analytic_problems()[3].program, opt).status, SolveStatus::IterationLimit);
}

TEST(L1Reformulation, AbsoluteValueGrid) {
  // |x - 1| <= 0.5 with x >= 0: the smallest and largest feasible x are 0.5 and 1.5
  for (const double sign : {1.0, -1.0}) {
    ProgramBuilder<double> b;
    const auto x = b.add_cone(nonneg(1));
    std::vector<AffineExpr<double>> e(1);
    e[0].add(x[0], 1.0).constant = -1.0;
    l1_reformulate<double>(b, 0.5, e);
    b.add_objective(x[0], sign);
    const auto res = solve(b.build());
    ASSERT_TRUE(res.optimal());
    EXPECT_NEAR(res.x(0), sign > 0 ? 0.5 : 1.5, 1e-7);
  }
}
