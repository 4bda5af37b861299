// SPDX-License-Identifier: MIT
#include "test_util.hpp"

#include <gtest/gtest.h>

using namespace qkdtest;

TEST(KrausMap, IdentityAndIsometry) {
  std::mt19937_64 rng(11);
  const CM x = random_state(rng, 3);
  EXPECT_LT(rel_err(KrausMap<double>::identity(3).apply(x), x), 1e-15);
  const CM q = random_complex(rng, 5, 3).householderQr().householderQ() * CM::Identity(5, 3);
  const auto iso = KrausMap<double>::conjugation(q);
  EXPECT_NEAR(iso.apply(x).trace().real(), 1.0, 1e-12);
}

TEST(KrausMap, PinchingIsBlockDiagonal) {
  std::mt19937_64 rng(12);
  const CM rho = random_state(rng, 6);
  std::vector<CM> ops;
  for (int r = 0; r < 2; ++r) ops.push_back(kron<double>(ket_bra<double>(2, r, r), CM::Identity(3, 3)));
  const CM out = KrausMap<double>(ops).apply(rho);
  EXPECT_EQ(out.block(0, 3, 3, 3).norm(), 0.0);
  EXPECT_LT(rel_err(CM(out.block(0, 0, 3, 3)), CM(rho.block(0, 0, 3, 3))), 1e-15);
}

TEST(KrausMap, AdjointDuality) {
  std::mt19937_64 rng(13);
  const auto map = random_kraus(rng, 3, 4, 3);
  for (int t = 0; t < 10; ++t) {
    const CM x = random_hermitian(rng, 3), y = random_hermitian(rng, 4);
    EXPECT_NEAR(hs_inner<double>(map.apply(x), y), hs_inner<double>(x, map.adjoint_apply(y)), 1e-11);
  }
}

TEST(KrausMap, TracePreservingAdjointIsUnital) {
  std::mt19937_64 rng(14);
  const CM u = random_complex(rng, 6, 6).householderQr().householderQ();
  std::vector<CM> ops{u.topRows(3) * CM::Identity(6, 6).leftCols(3), u.bottomRows(3) * CM::Identity(6, 6).leftCols(3)};
  // two Kraus operators from the first three columns of a unitary: sum K^dagger K = 1
  const KrausMap<double> map(ops);
  EXPECT_LT(rel_err(map.adjoint_apply(CM::Identity(3, 3)), CM::Identity(3, 3)), 1e-11);
}

TEST(KrausMap, ChoiRoundTrip) {
  std::mt19937_64 rng(15);
  const auto map = random_kraus(rng, 2, 3, 2);
  const auto back = KrausMap<double>::from_choi(map.choi(), 2, 3);
  const CM x = random_hermitian(rng, 2);
  EXPECT_LT(rel_err(back.apply(x), map.apply(x)), 1e-12);
}

TEST(SupportIsometry, Cases) {
  std::mt19937_64 rng(16);
  const auto full = random_kraus(rng, 3, 3, 4);
  EXPECT_EQ(support_isometry<double>(full).cols(), 3);
  const auto proj = KrausMap<double>::conjugation(ket_bra<double>(3, 0, 0));
  const CM w = support_isometry<double>(proj);
  ASSERT_EQ(w.cols(), 1);
  EXPECT_NEAR(std::abs(w(0, 0)), 1.0, 1e-14);
  EXPECT_THROW(support_isometry<double>(KrausMap<double>({CM::Zero(2, 2)})), std::invalid_argument);
}

TEST(FacialReduction, Invariants) {
  std::mt19937_64 rng(17);
  // rank-deficient output: 2 Kraus operators from a 3-dim input into a 6-dim codomain
  const CM q = random_complex(rng, 6, 4).householderQr().householderQ() * CM::Identity(6, 4);
  std::vector<CM> ops;
  for (int i = 0; i < 2; ++i) ops.push_back(q * random_complex(rng, 4, 3) * 0.3);
  const KrausMap<double> map(ops);
  const auto red = facially_reduce<double>(map);
  EXPECT_EQ(red.reduced_dim, 4);
  EXPECT_LT((red.isometry_W.adjoint() * red.isometry_W - CM::Identity(4, 4)).norm(), 1e-12);
  for (int t = 0; t < 20; ++t) {
    const CM x = random_state(rng, 3);
    const CM full = map.apply(x);
    EXPECT_LT(rel_err(CM(red.isometry_W * red.reduced_map.apply(x) * red.isometry_W.adjoint()), full), 1e-10);
  }
  EXPECT_GT(min_eigenvalue<double>(red.reduced_map.apply(CM::Identity(3, 3))), 1e-9);
}

TEST(FacialReduction, PairIsometryAndMubCase) {
  std::mt19937_64 rng(18);
  // G an isometry conjugation, Z strictly positive
  const CM g = random_complex(rng, 6, 3).householderQr().householderQ() * CM::Identity(6, 3);
  const auto z = random_kraus(rng, 6, 6, 6);
  const auto pair = facially_reduce_pair<double>(KrausMap<double>::conjugation(g), z);
  EXPECT_EQ(pair.g.reduced_dim, 3);
  EXPECT_EQ(pair.z.reduced_dim, 6);
  EXPECT_LT((pair.S.adjoint() * pair.S - CM::Identity(3, 3)).norm(), 1e-12);
  // Ghat of an isometry is a unitary conjugation: unital and trace preserving
  EXPECT_LT(rel_err(pair.g.reduced_map.apply(CM::Identity(3, 3)), CM::Identity(3, 3)), 1e-12);
}

TEST(FacialReduction, ContainmentViolationRejected) {
  // G outputs |1><1| while Z only ever outputs |0><0|
  const auto g = KrausMap<double>::conjugation(ket_bra<double>(2, 1, 0));
  const auto z = KrausMap<double>::conjugation(ket_bra<double>(2, 0, 0));
  EXPECT_THROW(facially_reduce_pair<double>(g, z), std::invalid_argument);
}

TEST(FacialReduction, BlockSplitting) {
  std::vector<CM> ops;
  for (int r = 0; r < 3; ++r) ops.push_back(kron<double>(ket_bra<double>(3, r, r), CM::Identity(2, 2)));
  const auto red = facially_reduce<double>(KrausMap<double>(ops));
  EXPECT_EQ(red.block_count(), 3u);
  EXPECT_EQ(red.reduced_dim, 6);
}

TEST(PinchedReduction, RestrictsSigmaToKeySpan) {
  // G = sum_r |r>_R (x) |r><r|_A (x) 1_B maps 4 -> 8; Z pinches R
  const int d = 2;
  CM g = CM::Zero(d * d * d, d * d);
  for (int r = 0; r < d; ++r) g += kron<double>(basis_ket<double>(d, r), kron<double>(ket_bra<double>(d, r, r), CM::Identity(d, d)));
  std::vector<CM> zops;
  for (int r = 0; r < d; ++r) zops.push_back(kron<double>(ket_bra<double>(d, r, r), CM::Identity(d * d, d * d)));
  const auto red = pinched_reduce_pair<double>(KrausMap<double>::conjugation(g), KrausMap<double>(zops));
  EXPECT_EQ(red.pair.z.reduced_dim, 4);
  EXPECT_EQ(red.pair.z.block_count(), 2u);
  EXPECT_LT((red.pair.S.adjoint() * red.pair.S - CM::Identity(4, 4)).norm(), 1e-12);
}
