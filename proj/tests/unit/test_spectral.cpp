#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "lipdd/error.hpp"
#include "lipdd/linalg.hpp"
#include "lipdd/rng.hpp"
#include "lipdd/spectral.hpp"
#include "oracles.hpp"

using namespace lipdd;

TEST(Linalg, ProductsMatchNaiveLoops) {
  const Matrix a = oracle::random_matrix(7, 5, 1);
  const Matrix b = oracle::random_matrix(5, 9, 2);
  const Matrix c = oracle::random_matrix(9, 5, 3);
  const Matrix ab = matmul(a, b), expect = oracle::naive_matmul(a, b);
  for (std::size_t i = 0; i < ab.size(); ++i) EXPECT_NEAR(ab.data()[i], expect.data()[i], 1e-12);
  const Matrix act = matmul_nt(a, c), expect_nt = oracle::naive_matmul(a, oracle::naive_transpose(c));
  for (std::size_t i = 0; i < act.size(); ++i) EXPECT_NEAR(act.data()[i], expect_nt.data()[i], 1e-12);
  const Matrix atc = matmul_tn(c, oracle::random_matrix(9, 4, 4));
  const Matrix expect_tn = oracle::naive_matmul(oracle::naive_transpose(c), oracle::random_matrix(9, 4, 4));
  for (std::size_t i = 0; i < atc.size(); ++i) EXPECT_NEAR(atc.data()[i], expect_tn.data()[i], 1e-12);
}

TEST(Linalg, MatvecAndNorms) {
  const Matrix m(2, 3, {1, 2, 3, 4, 5, 6});
  EXPECT_EQ(matvec(m, Vector{1, 0, -1}), (Vector{-2, -2}));
  EXPECT_EQ(matvec_transposed(m, Vector{1, 1}), (Vector{5, 7, 9}));
  EXPECT_DOUBLE_EQ(norm2(Vector{3, 4}), 5.0);
  EXPECT_DOUBLE_EQ(frobenius_norm(m), std::sqrt(91.0));
  EXPECT_FALSE(all_finite(Vector{1.0, std::numeric_limits<double>::quiet_NaN()}));
}

TEST(Linalg, SmallGramPicksTheSmallerSide) {
  const Matrix wide = oracle::random_matrix(3, 11, 5);
  EXPECT_EQ(small_gram(wide).rows(), 3u);
  EXPECT_EQ(small_gram(wide.transposed()).rows(), 3u);
}

TEST(Rng, SameSeedSameStream) {
  Rng a(42), b(42), c(43);
  for (int i = 0; i < 100; ++i) {
    const auto x = a.next_u64();
    EXPECT_EQ(x, b.next_u64());
    (void)c;
  }
  EXPECT_NE(Rng(42).next_u64(), Rng(43).next_u64());
  EXPECT_NE(derive_seed(7, 0), derive_seed(7, 1));
}

TEST(Rng, DistributionsStayInRange) {
  Rng r(1);
  double sum = 0, sumsq = 0;
  constexpr int kN = 200000;
  for (int i = 0; i < kN; ++i) {
    const double u = r.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    ASSERT_LT(r.below(7), 7u);
    const double z = r.normal();
    sum += z;
    sumsq += z * z;
  }
  EXPECT_NEAR(sum / kN, 0.0, 0.01);
  EXPECT_NEAR(sumsq / kN, 1.0, 0.02);
  const auto idx = r.sample_without_replacement(50, 50);
  std::vector<bool> seen(50, false);
  for (auto i : idx) {
    ASSERT_FALSE(seen[i]);
    seen[i] = true;
  }
}

TEST(Spectral, DiagonalAndRankOne) {
  EXPECT_NEAR(spectral_norm_dense(Matrix::diagonal(Vector{3, -7, 2})), 7.0, 1e-9);
  // u vᵀ has norm |u||v|.
  const Vector u{1, 2, 2}, v{3, 4};
  Matrix m(3, 2);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 2; ++j) m(i, j) = u[i] * v[j];
  EXPECT_NEAR(spectral_norm_dense(m), 15.0, 1e-9);
  EXPECT_NEAR(svd_oracle(m), 15.0, 1e-12);
}

TEST(Spectral, OracleMatchesClosedForm2x2) {
  for (std::uint64_t s = 0; s < 20; ++s) {
    const Matrix m = oracle::random_matrix(2, 2, 100 + s);
    const double expect = oracle::sigma_max_2x2(m(0, 0), m(0, 1), m(1, 0), m(1, 1));
    EXPECT_NEAR(svd_oracle(m), expect, 1e-12 * expect);
  }
}

TEST(Spectral, ZeroMatrixAndBadInput) {
  EXPECT_EQ(spectral_norm_dense(Matrix(4, 3)), 0.0);
  Matrix bad(2, 2, 1.0);
  bad(1, 1) = std::numeric_limits<double>::infinity();
  EXPECT_THROW(spectral_norm_dense(bad), Error);
  PowerIterSettings s;
  s.rel_tol = 0.0;
  EXPECT_THROW(spectral_norm_dense(Matrix::identity(2), s), Error);
}

TEST(Spectral, PowerIterationMatchesOracle) {
  for (std::uint64_t s = 0; s < 30; ++s) {
    const std::size_t r = 1 + s % 17, c = 1 + (s * 7) % 23;
    const Matrix m = oracle::random_matrix(r, c, 200 + s);
    const double ref = svd_oracle(m);
    PowerIterSettings ps;
    ps.max_iters = 20000;
    ps.rel_tol = 1e-13;
    const double est = spectral_norm_dense(m, ps);
    EXPECT_LE(est, ref * (1 + 1e-12));
    EXPECT_NEAR(est, ref, 1e-6 * ref) << r << "x" << c;
  }
}

TEST(Spectral, JacobiEigenvaluesOfKnownMatrix) {
  // [[2,1],[1,2]] has eigenvalues 3 and 1.
  const Vector ev = jacobi_eigenvalues(Matrix(2, 2, {2, 1, 1, 2}));
  ASSERT_EQ(ev.size(), 2u);
  EXPECT_NEAR(ev[0], 3.0, 1e-14);
  EXPECT_NEAR(ev[1], 1.0, 1e-14);
}

TEST(Spectral, OperatorFormAndAdjointCheck) {
  const Matrix m = oracle::random_matrix(6, 4, 9);
  LinearOperator op;
  op.in_dim = 4;
  op.out_dim = 6;
  op.apply = [&](std::span<const double> x, std::span<double> y) {
    const Vector r = matvec(m, x);
    std::copy(r.begin(), r.end(), y.begin());
  };
  op.apply_adjoint = [&](std::span<const double> x, std::span<double> y) {
    const Vector r = matvec_transposed(m, x);
    std::copy(r.begin(), r.end(), y.begin());
  };
  EXPECT_NEAR(spectral_norm_operator(op), svd_oracle(m), 1e-6 * svd_oracle(m));
  EXPECT_EQ(materialize(op), m);

  op.apply_adjoint = [&](std::span<const double> x, std::span<double> y) {
    const Vector r = matvec_transposed(m, x);
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = 2 * r[i];
  };
  try {
    spectral_norm_operator(op);
    FAIL() << "mismatched adjoint accepted";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("pair"), std::string::npos) << e.what();
  }
}

TEST(Spectral, TopEigenvaluePsd) {
  const Matrix a = oracle::random_matrix(5, 8, 77);
  const Matrix g = oracle::naive_matmul(a, oracle::naive_transpose(a));
  const double ref = svd_oracle(a);
  PowerIterSettings ps;
  ps.rel_tol = 1e-14;
  ps.max_iters = 50000;
  EXPECT_NEAR(top_eigenvalue_psd(g, ps), ref * ref, 1e-8 * ref * ref);
}
