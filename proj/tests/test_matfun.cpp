// SPDX-License-Identifier: MIT
#include "test_util.hpp"

#include <gtest/gtest.h>

using namespace qkdtest;

namespace {

const auto kSquare = ScalarFunction<double>::power(2.0);
const auto kCube = ScalarFunction<double>::power(3.0);

}  // namespace

TEST(HermitianMatrix, SymmetrizesSmallDeviation) {
  CM m(2, 2);
  m << 1, std::complex<double>(2, 1e-14), std::complex<double>(2, 0), 3;
  const HermitianMatrix<double> h(m);
  EXPECT_EQ(h(0, 1), std::conj(h(1, 0)));
}

TEST(HermitianMatrix, RejectsNonHermitian) {
  CM m(2, 2);
  m << 1, 2, 3, 4;
  EXPECT_THROW(HermitianMatrix<double>{m}, std::invalid_argument);
}

TEST(Eigh, ReconstructsAndIsUnitary) {
  std::mt19937_64 rng(1);
  for (int t = 0; t < 10; ++t) {
    const CM x = random_hermitian(rng, 6);
    const auto sp = eigh<double>(x);
    EXPECT_LT((sp.reconstruct() - x).norm() / x.norm(), 1e-10);
    EXPECT_LT((sp.unitary.adjoint() * sp.unitary - CM::Identity(6, 6)).norm(), 1e-12);
    for (Eigen::Index i = 1; i < 6; ++i) EXPECT_LE(sp.eigenvalues(i - 1), sp.eigenvalues(i));
  }
}

TEST(SpectralApply, IdentityAndSquare) {
  std::mt19937_64 rng(2);
  const CM x = random_hermitian(rng, 4);
  EXPECT_LT(rel_err(spectral_apply<double>(ScalarFunction<double>::identity(), x), x), 1e-12);
  CM d = CM::Zero(2, 2);
  d(0, 0) = 1;
  d(1, 1) = 2;
  CM expect = CM::Zero(2, 2);
  expect(0, 0) = 1;
  expect(1, 1) = 4;
  EXPECT_LT(rel_err(spectral_apply<double>(kSquare, d), expect), 1e-14);
}

TEST(SpectralApply, SquareRootSquares) {
  std::mt19937_64 rng(3);
  const CM x = random_state(rng, 4);
  const CM y = spectral_apply<double>(ScalarFunction<double>::power(0.5), x);
  EXPECT_LT(rel_err(CM(y * y), x), 1e-10);
}

TEST(SpectralApply, DomainErrorNamesEigenvalue) {
  CM x = CM::Identity(2, 2);
  x(1, 1) = -0.5;
  try {
    (void)spectral_apply<double>(ScalarFunction<double>::power(0.7), x);
    FAIL() << "expected a domain error";
  } catch (const DomainError& e) {
    EXPECT_NE(std::string(e.what()).find("-0.5"), std::string::npos);
  }
}

TEST(SpectralApply, Composition) {
  std::mt19937_64 rng(4);
  const CM x = random_state(rng, 5);
  const auto f = ScalarFunction<double>::power(0.3);
  const auto g = ScalarFunction<double>::power(2.5);
  const auto fg = ScalarFunction<double>::power(0.75);
  EXPECT_LT(rel_err(spectral_apply<double>(f, spectral_apply<double>(g, x)), spectral_apply<double>(fg, x)), 1e-10);
}

TEST(DividedDifferences, Polynomials) {
  RV lam(3);
  lam << 0.3, 1.7, -2.0;
  const auto t1 = divided_differences<double>(kSquare, lam, 1);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) EXPECT_NEAR(t1(i, j), lam(i) + lam(j), 1e-12);
  const auto t2 = divided_differences<double>(kSquare, lam, 2);
  for (double v : t2.values) EXPECT_NEAR(v, 1.0, 1e-12);
  const auto t3 = divided_differences<double>(kCube, lam, 3);
  for (double v : t3.values) EXPECT_NEAR(v, 1.0, 1e-10);
}

TEST(DividedDifferences, CoincidentLimit) {
  RV lam(2);
  lam << 1.0, 1.0 + 1e-12;
  const auto t1 = divided_differences<double>(ScalarFunction<double>::power(0.7), lam, 1);
  EXPECT_NEAR(t1(0, 1), 0.7, 1e-10);
}

TEST(DividedDifferences, PermutationInvariant) {
  RV lam(4);
  lam << 0.2, 0.9, 1.3, 4.0;
  const auto f = ScalarFunction<double>::power(0.6);
  const auto t3 = divided_differences<double>(f, lam, 3);
  std::array<int, 4> idx{0, 1, 2, 3};
  const double ref = t3(0, 1, 2, 3);
  do {
    EXPECT_NEAR(t3(idx[0], idx[1], idx[2], idx[3]), ref, 1e-12);
  } while (std::next_permutation(idx.begin(), idx.end()));
  const auto t2 = divided_differences<double>(f, lam, 2);
  EXPECT_NEAR(t2(0, 2, 3), t2(3, 0, 2), 1e-14);
}

TEST(Frechet, CubeFirstDerivative) {
  std::mt19937_64 rng(5);
  const CM x = random_hermitian(rng, 3);
  const CM h = random_hermitian(rng, 3);
  const CM expect = x * x * h + x * h * x + h * x * x;
  EXPECT_LT(rel_err(frechet_derivative<double>(kCube, x, {h}), expect), 1e-11);
}

TEST(Frechet, SelfAdjointAllOrders) {
  std::mt19937_64 rng(6);
  const auto f = ScalarFunction<double>::power(0.55);
  for (int t = 0; t < 5; ++t) {
    const CM x = random_state(rng, 4);
    const CM a = random_hermitian(rng, 4), h = random_hermitian(rng, 4), k = random_hermitian(rng, 4);
    SpectralFunction<double> sf(x, f);
    EXPECT_NEAR(hs_inner<double>(a, sf.first(h)), hs_inner<double>(sf.first(a), h), 1e-10);
    EXPECT_NEAR(hs_inner<double>(a, sf.second(h, k)), hs_inner<double>(sf.second(h, a), k), 1e-9);
    EXPECT_NEAR(hs_inner<double>(a, sf.third(h, k)), hs_inner<double>(sf.third(h, a), k), 1e-9);
  }
}

TEST(Frechet, FiniteDifferences) {
  std::mt19937_64 rng(7);
  const auto f = ScalarFunction<double>::power(0.7);
  const double eps = 1e-5;
  for (int t = 0; t < 5; ++t) {
    const CM x = random_state(rng, 4, 0.2);
    const CM h = random_hermitian(rng, 4) * 0.1, k = random_hermitian(rng, 4) * 0.1;
    SpectralFunction<double> sf(x, f);
    const CM fd1 = (spectral_apply<double>(f, CM(x + eps * h)) - spectral_apply<double>(f, CM(x - eps * h))) / (2 * eps);
    EXPECT_LT(rel_err(fd1, sf.first(h)), 1e-6);
    const CM fd2 = (SpectralFunction<double>(CM(x + eps * k), f).first(h) - SpectralFunction<double>(CM(x - eps * k), f).first(h)) /
                   (2 * eps);
    EXPECT_LT((fd2 - sf.second(h, k)).norm() / std::max(1e-3, sf.second(h, k).norm()), 1e-5);
    const CM fd3 = (SpectralFunction<double>(CM(x + eps * k), f).second(h, h) -
                    SpectralFunction<double>(CM(x - eps * k), f).second(h, h)) /
                   (2 * eps);
    EXPECT_LT((fd3 - sf.third(h, k)).norm() / std::max(1e-3, sf.third(h, k).norm()), 1e-5);
  }
}

TEST(Frechet, DegenerateSpectrumMatchesPerturbed) {
  // exactly repeated eigenvalues take the derivative-limit branch
  const auto f = ScalarFunction<double>::power(0.6);
  CM x = CM::Identity(3, 3) * 2.0;
  std::mt19937_64 rng(8);
  const CM h = random_hermitian(rng, 3);
  const CM expect = h * (0.6 * std::pow(2.0, -0.4));
  EXPECT_LT(rel_err(frechet_derivative<double>(f, x, {h}), expect), 1e-12);
  const CM second = frechet_derivative<double>(f, x, {h, h});
  EXPECT_LT(rel_err(second, CM(h * h * (0.6 * -0.4 * std::pow(2.0, -1.4)))), 1e-12);
}

TEST(RealVectorization, PreservesInnerProduct) {
  std::mt19937_64 rng(9);
  for (int t = 0; t < 10; ++t) {
    const CM a = random_hermitian(rng, 5), b = random_hermitian(rng, 5);
    EXPECT_NEAR(svec<double>(a).dot(svec<double>(b)), hs_inner<double>(a, b), 1e-12);
    EXPECT_LT(rel_err(smat<double>(svec<double>(a)), a), 1e-15);
  }
}

TEST(ExtendedPrecision, LongDoubleSpectralFunction) {
  using LD = long double;
  CMat<LD> x = CMat<LD>::Identity(3, 3);
  x(0, 1) = 0.25L;
  x(1, 0) = 0.25L;
  x(2, 2) = 3.0L;
  const auto f = ScalarFunction<LD>::power(0.5L);
  const CMat<LD> y = spectral_apply<LD>(f, x);
  const LD err = max_abs<LD>(CMat<LD>(y * y - x));
  EXPECT_LT(static_cast<double>(err), 1e-17);
}
