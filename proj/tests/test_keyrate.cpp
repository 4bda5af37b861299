// SPDX-License-Identifier: MIT
#include "test_util.hpp"

#include "qkdcone/keyrate.hpp"
#include "qkdcone/oracles.hpp"

#include <gtest/gtest.h>

#include <numbers>

using namespace qkdtest;

namespace {

double h2(double p) { return -p * std::log2(p) - (1 - p) * std::log2(1 - p); }

std::size_t count_cones(const ConicProgram<double>& prog, const std::string& name) {
  std::size_t n = 0;
  for (const auto& k : prog.cones) n += k->name() == name;
  return n;
}

SolveResult<double> solve_variant(const ProtocolInstance<double>& inst, ConeVariant v, double alpha, double delta,
                                  std::optional<double> fixed = std::nullopt) {
  return solve(assemble_program<double>(inst, v, alpha, delta, fixed).program);
}

}  // namespace

TEST(Formulas, DeltaInversion) {
  // delta = 1 when eps = 2^|C| e^{-n/2}
  const double n = 200;
  EXPECT_NEAR(delta_from_bhc(n, 5, std::pow(2.0, 5) * std::exp(-n / 2)), 1.0, 1e-12);
  EXPECT_NEAR(delta_from_bhc(1e6, 13, 9e-11), 8.02e-3, 5e-6);
  for (const double m : {1e3, 1e6, 1e9}) {
    EXPECT_NEAR(delta_from_bhc(4 * m, 13, 9e-11), delta_from_bhc(m, 13, 9e-11) / 2, 1e-15);
    for (const double eps : {9e-11, 1e-3, 0.5}) {
      const double d = delta_from_bhc(m, 7, eps);
      const double back = std::pow(2.0, 7) * std::exp(-m * d * d / 2);
      EXPECT_LT(std::abs(back - eps) / eps, 1e-12);
    }
  }
  EXPECT_THROW(delta_from_bhc(0.5, 3, 0.1), std::invalid_argument);
  EXPECT_THROW(delta_from_bhc(10.0, 3, 1.0), std::invalid_argument);
}

TEST(Formulas, LeakValues) {
  EXPECT_EQ(leak_ec(1e6, 0.5, 0.0, 1.16, 1e-11), 37.0);
  EXPECT_EQ(leak_ec(1000.0, 1.0, 1.0, 1.0, 0.5), 1001.0);
  const auto inst = build_bb84<double>(0.97, 0.0, 0.5);
  const double n = 1e12;
  EXPECT_NEAR(leak_ec(n, inst.p_sift, inst.h_cond_bits, 1.16, 1e-11) / n, inst.p_sift * 1.16 * h2(0.015), 1e-9);
  EXPECT_THROW(leak_ec(1.0, 1.0, 1.0, 0.9, 0.1), std::invalid_argument);
}

TEST(Formulas, KeyLength) {
  const double expected = 5e5 - 101 * std::log2(1 / 9e-11) - 1e5 + 2;
  EXPECT_NEAR(key_length(1e6, 0.5, 1.01, 9e-11, 1e5), expected, 1e-6);
  EXPECT_LT(key_length(1e6, 0.0, 1.5, 9e-11, 37.0), 0.0);
  // penalty diverges as alpha approaches one
  EXPECT_LT(key_length(1e6, 0.5, 1 + 1e-9, 9e-11, 0.0), key_length(1e6, 0.5, 1 + 1e-3, 9e-11, 0.0));
  EXPECT_THROW(key_length(1e6, 0.5, 2.0, 9e-11, 0.0), std::invalid_argument);
  EXPECT_THROW(key_length(1e6, 0.5, 1.0, 9e-11, 0.0), std::invalid_argument);
}

TEST(Formulas, AlphaGrid) {
  const auto grid = log_spaced_alpha_grid<double>();
  ASSERT_EQ(grid.size(), 12u);
  EXPECT_NEAR(grid.front() - 1, 1e-7, 1e-15);  // 1 + 1e-7 is only representable to ~1e-16
  EXPECT_NEAR(grid.back() - 1, 1e-1, 1e-14);
  for (std::size_t i = 1; i < grid.size(); ++i) EXPECT_GT(grid[i], grid[i - 1]);
}

TEST(Assembly, Bb84FastShape) {
  const auto inst = build_bb84<double>(0.97, 3.0, 0.5);
  const auto ap = assemble_program<double>(inst, ConeVariant::Fast, 1.05, 1e-3);
  EXPECT_EQ(count_cones(ap.program, "renyi-fast"), 1u);
  EXPECT_EQ(inst.fast_cone.spec.q, 4);
  EXPECT_EQ(count_cones(ap.program, "psd"), 1u);
  EXPECT_EQ(ap.layout.q.size(), 13u);
  EXPECT_EQ(inst.dim_ab() * inst.dim_ab(), 36);
}

TEST(Assembly, RejectsBadArguments) {
  const auto inst = build_mub<double>(3, 2, 0.95, 0.5);
  EXPECT_THROW(assemble_program<double>(inst, ConeVariant::Fast, 1.0, 0.01), std::invalid_argument);
  EXPECT_THROW(assemble_program<double>(inst, ConeVariant::Fast, 2.5, 0.01), std::invalid_argument);
  EXPECT_THROW(assemble_program<double>(inst, ConeVariant::Fast, 1.1, -0.01), std::invalid_argument);
  // the relaxed coefficient p(bot) - delta must stay positive
  EXPECT_THROW(assemble_program<double>(inst, ConeVariant::True, 1.1, inst.p_bot), std::invalid_argument);
  EXPECT_NO_THROW(assemble_program<double>(inst, ConeVariant::True, 1.1, inst.p_bot, inst.p_bot));
  EXPECT_THROW(assemble_program<double>(inst, ConeVariant::Fast, 1.1, 0.01, 0.5), std::invalid_argument);
}

TEST(Pipeline, ZeroRadiusPinsStatistics) {
  const auto inst = build_mub<double>(3, 2, 0.95, 0.6);
  const auto ap = assemble_program<double>(inst, ConeVariant::Fast, 1.1, 0.0);
  const auto res = solve(ap.program);
  ASSERT_TRUE(res.optimal()) << res.diagnostics;
  for (Eigen::Index c = 0; c < inst.alphabet_size(); ++c) EXPECT_NEAR(res.x(ap.layout.q[c]), inst.reference[c], 1e-7);
}

TEST(Pipeline, HonestPointBoundsOptimum) {
  for (const double chi : {0.0, 6.0}) {
    const auto inst = build_bb84<double>(0.9, chi, 0.6);
    for (const double alpha : {1.01, 1.3}) {
      for (const double delta : {0.0, 1e-3}) {
        const auto res = solve_variant(inst, ConeVariant::Fast, alpha, delta);
        ASSERT_TRUE(res.optimal()) << res.diagnostics;
        const auto honest = honest_fast_objective<double>(inst, alpha);
        ASSERT_TRUE(honest.has_value());
        EXPECT_LE(res.primal_objective, *honest + 1e-7);
        EXPECT_NEAR(res.primal_objective, res.dual_objective, 1e-6);
      }
    }
  }
}

TEST(Pipeline, EntropyDecreasesWithRadius) {
  const auto inst = build_mub<double>(3, 3, 0.92, 0.5);
  double previous = std::numeric_limits<double>::infinity();
  for (const double delta : {0.0, 1e-4, 1e-3, 1e-2}) {
    const auto res = solve_variant(inst, ConeVariant::Fast, 1.05, delta);
    ASSERT_TRUE(res.optimal()) << res.diagnostics;
    EXPECT_LE(res.dual_objective, previous + 1e-7);
    previous = res.dual_objective;
  }
}

TEST(Pipeline, FastNeverExceedsTrue) {
  const auto inst = build_mub<double>(3, 2, 0.9, 0.5);
  for (const double alpha : {1.05, 1.5}) {
    const double delta = 1e-3;
    const auto fast = solve_variant(inst, ConeVariant::Fast, alpha, delta);
    const auto relaxed = solve_variant(inst, ConeVariant::True, alpha, delta);
    const auto pinned = solve_variant(inst, ConeVariant::True, alpha, delta, inst.p_bot);
    // pinning exactly at p_bot - delta spends the whole L1 budget and leaves no strictly feasible point
    const auto pinned_low = solve_variant(inst, ConeVariant::True, alpha, delta, inst.p_bot - 0.5 * delta);
    ASSERT_TRUE(fast.optimal() && relaxed.optimal() && pinned.optimal() && pinned_low.optimal())
        << to_string(fast.status) << " " << to_string(relaxed.status) << " " << to_string(pinned.status) << " "
        << to_string(pinned_low.status) << " " << pinned_low.diagnostics;
    // every pinned value dominates the minimum over q(bot), which dominates the fast bound
    EXPECT_LE(fast.dual_objective, pinned.dual_objective + 1e-6);
    EXPECT_LE(fast.dual_objective, pinned_low.dual_objective + 1e-6);
    // the relaxed bound fixes q(bot) at the low end of the acceptance interval
    EXPECT_LE(relaxed.dual_objective, pinned.dual_objective + 1e-6);
  }
}

TEST(Pipeline, TrueConeSplitsBb84Branches) {
  const auto inst = build_bb84<double>(0.97, 2.0, 0.5);
  const auto ap = assemble_program<double>(inst, ConeVariant::True, 1.1, 1e-3);
  EXPECT_EQ(count_cones(ap.program, "renyi-true"), inst.true_cones.size());
  const auto fast = solve(assemble_program<double>(inst, ConeVariant::Fast, 1.1, 1e-3).program);
  const auto tr = solve(ap.program);
  ASSERT_TRUE(fast.optimal() && tr.optimal()) << tr.diagnostics;
  EXPECT_LE(fast.dual_objective, tr.dual_objective + 1e-6);
}

TEST(Pipeline, UnitsConvertedOnce) {
  const auto inst = build_mub<double>(3, 2, 0.95, 0.5);
  SecurityParams<double> sec;
  sec.n = 1e8;
  const double alpha = 1.02;
  PipelineOptions<double> opts;
  opts.prune_with_honest_bound = false;
  const auto r = evaluate_key_rate<double>(inst, 0.5, sec, ConeVariant::Fast, alpha, 1.1, opts);
  ASSERT_TRUE(r.solved) << r.status;
  const double delta = delta_from_bhc(sec.n, inst.alphabet_size(), sec.eps_pe_bar);
  const auto direct = solve_variant(inst, ConeVariant::Fast, alpha, delta);
  EXPECT_NEAR(r.h_bits * std::numbers::ln2, direct.dual_objective, 1e-12);
  const double leak = leak_ec(sec.n, inst.p_sift, inst.h_cond_bits, 1.1, sec.eps_ec);
  EXPECT_NEAR(r.ell, key_length(sec.n, r.h_bits, alpha, sec.eps_pa, leak), 1e-6);
  EXPECT_EQ(r.rate, std::max(0.0, r.ell) / sec.n);
}

TEST(Pipeline, PruningNeverHidesKey) {
  // pruning only fires when the honest upper bound already yields no key
  const auto inst = build_bb84<double>(0.97, 10.0, 0.9);
  SecurityParams<double> sec;
  sec.n = 1e5;
  PipelineOptions<double> off;
  off.prune_with_honest_bound = false;
  for (const double alpha : {1.001, 1.05}) {
    const auto pruned = evaluate_key_rate<double>(inst, 0.9, sec, ConeVariant::Fast, alpha, 1.16);
    const auto full = evaluate_key_rate<double>(inst, 0.9, sec, ConeVariant::Fast, alpha, 1.16, off);
    EXPECT_EQ(pruned.rate, full.rate);
    if (pruned.status == "bound_no_key") {
      EXPECT_GE(pruned.h_bits, full.h_bits - 1e-9);
    }
  }
}

TEST(Pipeline, NestedSearchBracketsRelaxed) {
  const auto inst = build_mub<double>(3, 2, 0.9, 0.5);
  SecurityParams<double> sec;
  sec.n = 1e5;
  PipelineOptions<double> relaxed, nested;
  nested.nested_q_bot = true;
  const double alpha = 1.1;
  const auto a = evaluate_key_rate<double>(inst, 0.5, sec, ConeVariant::True, alpha, 1.0, relaxed);
  const auto b = evaluate_key_rate<double>(inst, 0.5, sec, ConeVariant::True, alpha, 1.0, nested);
  const auto f = evaluate_key_rate<double>(inst, 0.5, sec, ConeVariant::Fast, alpha, 1.0, relaxed);
  ASSERT_TRUE(a.solved && b.solved && f.solved);
  EXPECT_LE(a.h_bits, b.h_bits + 1e-6);
  EXPECT_LE(f.h_bits, b.h_bits + 1e-6);
}

TEST(Pipeline, DmcvSymmetryReductionIsLossless) {
  DmcvParams<double> prm;
  prm.cutoff = 4;
  prm.amplitude = 0.6;
  prm.distance_km = 15;
  auto reduced = build_dmcv<double>(prm);
  ASSERT_EQ(reduced.invariant_blocks.size(), 4u);
  // the honest state is invariant, hence block diagonal over the blocks
  CM pinched = CM::Zero(reduced.dim_ab(), reduced.dim_ab());
  for (const auto& v : reduced.invariant_blocks) pinched += v * v.adjoint() * reduced.honest_state * v * v.adjoint();
  EXPECT_LT((pinched - reduced.honest_state).norm(), 1e-12);
  auto full = reduced;
  full.invariant_blocks.clear();
  const auto small = assemble_program<double>(reduced, ConeVariant::Fast, 1.05, 0.01);
  const auto big = assemble_program<double>(full, ConeVariant::Fast, 1.05, 0.01);
  EXPECT_LT(small.program.num_vars(), big.program.num_vars());
  const auto rs = solve(small.program), rb = solve(big.program);
  ASSERT_EQ(rs.status, SolveStatus::Optimal);
  ASSERT_EQ(rb.status, SolveStatus::Optimal);
  EXPECT_NEAR(rs.dual_objective, rb.dual_objective, 1e-6);
}

TEST(Optimizer, DeterministicAcrossThreadCounts) {
  SecurityParams<double> sec;
  sec.n = 1e7;
  const auto builder = [](double pk) { return build_mub<double>(3, 2, 0.95, pk); };
  const std::vector<double> alphas = {1.01, 1.05, 1.1};
  const std::vector<double> pks = {0.5, 0.8};
  const auto serial = optimize_parameters<double>(builder, sec, ConeVariant::Fast, alphas, pks, 1.1, 1);
  const auto threaded = optimize_parameters<double>(builder, sec, ConeVariant::Fast, alphas, pks, 1.1, 3);
  ASSERT_EQ(serial.evaluations.size(), 6u);
  ASSERT_TRUE(serial.any_success);
  for (std::size_t i = 0; i < serial.evaluations.size(); ++i) {
    EXPECT_EQ(serial.evaluations[i].h_bits, threaded.evaluations[i].h_bits);
    EXPECT_EQ(serial.evaluations[i].pk_used, pks[i / alphas.size()]);
    EXPECT_EQ(serial.evaluations[i].alpha_used, alphas[i % alphas.size()]);
  }
  for (const auto& e : serial.evaluations) EXPECT_LE(e.rate, serial.best.rate);
  EXPECT_EQ(serial.best.rate, threaded.best.rate);
}

TEST(Optimizer, SinglePointGrid) {
  SecurityParams<double> sec;
  sec.n = 1e7;
  const auto inst = build_mub<double>(3, 2, 0.95, 0.7);
  const auto opt = optimize_parameters<double>([&](double) { return inst; }, sec, ConeVariant::Fast, {1.05}, {0.7}, 1.1);
  const auto direct = evaluate_key_rate<double>(inst, 0.7, sec, ConeVariant::Fast, 1.05, 1.1);
  EXPECT_EQ(opt.evaluations.size(), 1u);
  EXPECT_EQ(opt.best.h_bits, direct.h_bits);
  EXPECT_EQ(opt.best.rate, direct.rate);
}

TEST(Optimizer, InvalidGridPointsAreRecorded) {
  SecurityParams<double> sec;
  const auto builder = [](double pk) { return build_mub<double>(3, 2, 0.95, pk); };
  const auto opt = optimize_parameters<double>(builder, sec, ConeVariant::Fast, {1.05}, {1.5, 0.6}, 1.1);
  ASSERT_EQ(opt.evaluations.size(), 2u);
  EXPECT_FALSE(opt.evaluations[0].solved);
  EXPECT_EQ(opt.evaluations[0].status.rfind("invalid", 0), 0u);
  EXPECT_TRUE(opt.any_success);
  EXPECT_EQ(opt.best.pk_used, 0.6);
  EXPECT_THROW(optimize_parameters<double>(builder, sec, ConeVariant::Fast, {}, {0.5}, 1.1), std::invalid_argument);
}

TEST(Baseline, MatchesConicSolveOnQubitMub) {
  for (const double v : {1.0, 0.9}) {
    const auto inst = build_mub<double>(2, 2, v, 0.5);
    const auto res = solve_variant(inst, ConeVariant::Fast, 1.1, 0.0);
    ASSERT_TRUE(res.optimal()) << res.diagnostics;
    const auto base = oracles::baseline_minimize<double>(inst, 1.1, 0.0);
    ASSERT_TRUE(base.converged);
    EXPECT_NEAR(base.value, res.primal_objective, 1e-5);
    // the baseline value is attained by a feasible state
    EXPECT_GE(base.value, res.dual_objective - 1e-8);
  }
}

TEST(Baseline, HonestStateDominates) {
  const auto inst = build_mub<double>(2, 2, 0.95, 0.6);
  const auto base = oracles::baseline_minimize<double>(inst, 1.2, 0.0);
  EXPECT_TRUE(base.converged);
  const auto honest = honest_fast_objective<double>(inst, 1.2);
  ASSERT_TRUE(honest.has_value());
  EXPECT_LE(base.value, *honest + 1e-9);
}
