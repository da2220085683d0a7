#include "mfa/linalg.hpp"

#include "oracles.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

#include <Eigen/Eigenvalues>

#include <cmath>
#include <limits>
#include <random>

using namespace mfa;

TEST(LogSumExp, TwoEqualZeros) {
    const Vector v = Vector::Zero(2);
    EXPECT_NEAR(linalg::logsumexp(v), std::log(2.0), 1e-15);
}

TEST(LogSumExp, LargeEqualTermsStayFinite) {
    const Vector v = Vector::Constant(2, 1000.0);
    const double r = linalg::logsumexp(v);
    ASSERT_TRUE(std::isfinite(r));
    EXPECT_NEAR(r, 1000.0 + std::log(2.0), 1e-12);
}

TEST(LogSumExp, MatchesLongDoubleSum) {
    Vector v(3);
    v << -1.0, 2.0, 0.5;
    EXPECT_NEAR(linalg::logsumexp(v), oracle::logsumexp({-1.0, 2.0, 0.5}), 1e-14);
}

TEST(LogSumExp, NegativeInfinityEntries) {
    const double ninf = -std::numeric_limits<double>::infinity();
    Vector v(3);
    v << ninf, 0.0, ninf;
    EXPECT_DOUBLE_EQ(linalg::logsumexp(v), 0.0);
    v.setConstant(ninf);
    EXPECT_EQ(linalg::logsumexp(v), ninf);
}

TEST(LogSumExp, EmptyThrows) { EXPECT_THROW(linalg::logsumexp(Vector()), Error); }

TEST(InverseAction, ZeroLoadings) {
    const Matrix loading = Matrix::Zero(2, 1);
    const Vector psi = Vector::Constant(2, 2.0);
    const auto r = linalg::lowrank_inverse_action(loading, psi, Vector::Ones(2));
    EXPECT_NEAR(r.value[0], 0.5, 1e-15);
    EXPECT_NEAR(r.value[1], 0.5, 1e-15);
    EXPECT_EQ(r.beta.norm(), 0.0);
}

TEST(InverseAction, DiagonalResult) {
    Matrix loading(2, 1);
    loading << 1.0, 0.0;
    const auto r = linalg::lowrank_inverse_action(loading, Vector::Ones(2), Vector::Ones(2));
    EXPECT_NEAR(r.value[0], 0.5, 1e-15);
    EXPECT_NEAR(r.value[1], 1.0, 1e-15);
}

TEST(InverseAction, MatchesDenseInverse) {
    std::mt19937_64 rng(7);
    const Matrix loading = support::random_matrix(rng, 8, 3);
    const Vector psi = support::random_uniform(rng, 8, 0.1, 2.0);
    const Vector v = support::random_matrix(rng, 8, 1);
    const Matrix sigma_inv = oracle::dense_covariance(loading, psi).inverse();
    const auto r = linalg::lowrank_inverse_action(loading, psi, v);
    EXPECT_LE((r.value - sigma_inv * v).cwiseAbs().maxCoeff(), 1e-10);
    EXPECT_LE((r.beta - loading.transpose() * sigma_inv).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(InverseAction, RejectsNonPositiveNoise) {
    Vector psi(2);
    psi << 1.0, 0.0;
    EXPECT_THROW(linalg::lowrank_inverse_action(Matrix::Zero(2, 1), psi, Vector::Ones(2)), NotPositiveDefiniteError);
    EXPECT_THROW(linalg::lowrank_inverse_action(Matrix::Zero(3, 1), Vector::Ones(2), Vector::Ones(2)), DimensionError);
}

TEST(LowRankLogDet, DiagonalCases) {
    EXPECT_NEAR(linalg::lowrank_logdet(Matrix::Zero(2, 1), Vector::Constant(2, 2.0)), 2.0 * std::log(2.0), 1e-15);
    Matrix loading(2, 1);
    loading << 1.0, 0.0;
    EXPECT_NEAR(linalg::lowrank_logdet(loading, Vector::Ones(2)), std::log(2.0), 1e-15);
}

TEST(LowRankLogDet, MatchesDenseLu) {
    std::mt19937_64 rng(11);
    const Matrix loading = support::random_matrix(rng, 8, 3);
    const Vector psi = support::random_uniform(rng, 8, 0.1, 2.0);
    EXPECT_NEAR(linalg::lowrank_logdet(loading, psi), oracle::lu_logdet(oracle::dense_covariance(loading, psi)), 1e-10);
}

TEST(LowRankCovariance, MahalanobisRowsMatchDense) {
    std::mt19937_64 rng(12);
    const Matrix loading = support::random_matrix(rng, 6, 2);
    const Vector psi = support::random_uniform(rng, 6, 0.3, 1.0);
    const DataMatrix x = support::random_data(rng, 5, 6);
    const Matrix inv = oracle::dense_covariance(loading, psi).inverse();
    const linalg::LowRankCovariance cov(loading, psi);
    const Vector q = cov.mahalanobis_rows(x);
    for (Index i = 0; i < 5; ++i) {
        const Vector row = x.row(i).transpose();
        EXPECT_NEAR(q[i], row.dot(inv * row), 1e-10);
        EXPECT_NEAR(cov.mahalanobis(row), row.dot(inv * row), 1e-10);
    }
}

TEST(SymEig, Identity) {
    const auto r = linalg::sym_eig_small(Matrix::Identity(3, 3));
    EXPECT_TRUE(r.eigenvalues.isApprox(Vector::Ones(3)));
    EXPECT_TRUE(r.eigenvectors.isApprox(Matrix::Identity(3, 3)));
}

TEST(SymEig, AlreadyDiagonal) {
    Matrix a = Matrix::Zero(2, 2);
    a(0, 0) = 1.0;
    a(1, 1) = 3.0;
    const auto r = linalg::sym_eig_small(a);
    EXPECT_DOUBLE_EQ(r.eigenvalues[0], 3.0);
    EXPECT_DOUBLE_EQ(r.eigenvalues[1], 1.0);
    EXPECT_DOUBLE_EQ(std::abs(r.eigenvectors(1, 0)), 1.0);
    EXPECT_DOUBLE_EQ(std::abs(r.eigenvectors(0, 1)), 1.0);
}

TEST(SymEig, TwoByTwoCharacteristicPolynomial) {
    Matrix a(2, 2);
    a << 2.0, 1.0, 1.0, 2.0;
    // roots of t^2 - 4t + 3: 3 and 1
    const auto r = linalg::sym_eig_small(a);
    EXPECT_NEAR(r.eigenvalues[0], 3.0, 1e-14);
    EXPECT_NEAR(r.eigenvalues[1], 1.0, 1e-14);
    const double h = 1.0 / std::sqrt(2.0);
    EXPECT_NEAR(r.eigenvectors(0, 0), h, 1e-14);
    EXPECT_NEAR(r.eigenvectors(1, 0), h, 1e-14);
    EXPECT_NEAR(r.eigenvectors(0, 1), h, 1e-14);
    EXPECT_NEAR(r.eigenvectors(1, 1), -h, 1e-14);
}

TEST(SymEig, RandomMatchesDenseSolver) {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 20; ++trial) {
        const Index n = 1 + trial % 6;
        const Matrix b = support::random_matrix(rng, n, n);
        const Matrix a = b + b.transpose();
        const auto r = linalg::sym_eig_small(a);
        Vector expected = Eigen::SelfAdjointEigenSolver<Matrix>(a).eigenvalues().reverse();
        EXPECT_LE((r.eigenvalues - expected).cwiseAbs().maxCoeff(), 1e-10);
        EXPECT_LE((r.eigenvectors.transpose() * r.eigenvectors - Matrix::Identity(n, n)).cwiseAbs().maxCoeff(), 1e-12);
        EXPECT_LE((a * r.eigenvectors - r.eigenvectors * r.eigenvalues.asDiagonal()).cwiseAbs().maxCoeff(), 1e-10);
    }
}

TEST(SymEig, RejectsAsymmetric) {
    Matrix a(2, 2);
    a << 1.0, 2.0, 0.0, 1.0;
    EXPECT_THROW(linalg::sym_eig_small(a), Error);
}

TEST(SolveSmall, IdentityAndDiagonal) {
    Matrix b(3, 2);
    b << 1, 2, 3, 4, 5, 6;
    EXPECT_EQ(linalg::solve_small(Matrix::Identity(3, 3), b), b);
    Matrix a = Matrix::Zero(2, 2);
    a(0, 0) = 2.0;
    a(1, 1) = 4.0;
    Vector rhs(2);
    rhs << 2.0, 4.0;
    const Matrix x = linalg::solve_small(a, rhs);
    EXPECT_DOUBLE_EQ(x(0, 0), 1.0);
    EXPECT_DOUBLE_EQ(x(1, 0), 1.0);
}

TEST(SolveSmall, RandomResidual) {
    std::mt19937_64 rng(5);
    const Matrix a = support::random_matrix(rng, 4, 4);
    const Matrix b = support::random_matrix(rng, 4, 3);
    const Matrix x = linalg::solve_small(a, b);
    EXPECT_LE((a * x - b).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(SolveSmall, SingularThrows) {
    Matrix a(2, 2);
    a << 1.0, 2.0, 2.0, 4.0;
    EXPECT_THROW(linalg::solve_small(a, Matrix::Identity(2, 2)), SingularMatrixError);
}

TEST(SpdLogDet, RejectsIndefinite) {
    Matrix a(2, 2);
    a << 1.0, 2.0, 2.0, 1.0;
    EXPECT_THROW(linalg::spd_logdet(a), NotPositiveDefiniteError);
}
