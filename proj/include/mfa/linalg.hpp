#pragma once

// Low-rank-plus-diagonal linear algebra.
//
// Every covariance in this library has the form Sigma = Lambda Lambda^T + diag(psi)
// with Lambda of size D x M and M small. Inverses and determinants go through the
// M x M matrix L = I + Lambda^T diag(psi)^-1 Lambda, so no D x D matrix is formed.

#include "mfa/types.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace mfa::linalg {

/// log(sum(exp(v))) without overflow. Entries may be -inf.
inline double logsumexp(std::span<const double> v) {
    if (v.empty()) throw Error("logsumexp: empty input");
    const double hi = *std::max_element(v.begin(), v.end());
    if (std::isinf(hi)) return hi;
    double sum = 0.0;
    for (double x : v) sum += std::exp(x - hi);
    return hi + std::log(sum);
}

inline double logsumexp(const Vector& v) { return logsumexp(std::span<const double>(v.data(), static_cast<std::size_t>(v.size()))); }

/// Solves a X = b by Gaussian elimination with partial pivoting.
inline Matrix solve_small(const Matrix& a, const Matrix& b) {
    if (a.rows() != a.cols()) throw DimensionError("solve_small: matrix is not square");
    if (b.rows() != a.rows()) throw DimensionError("solve_small: right-hand side has wrong row count");
    const Index n = a.rows();
    Matrix lu = a;
    Matrix x = b;
    for (Index k = 0; k < n; ++k) {
        Index pivot = k;
        for (Index i = k + 1; i < n; ++i)
            if (std::abs(lu(i, k)) > std::abs(lu(pivot, k))) pivot = i;
        if (!(std::abs(lu(pivot, k)) >= 1e-300)) throw SingularMatrixError("solve_small: singular matrix");
        if (pivot != k) {
            lu.row(k).swap(lu.row(pivot));
            x.row(k).swap(x.row(pivot));
        }
        for (Index i = k + 1; i < n; ++i) {
            const double f = lu(i, k) / lu(k, k);
            if (f == 0.0) continue;
            lu.row(i).tail(n - k) -= f * lu.row(k).tail(n - k);
            x.row(i) -= f * x.row(k);
        }
    }
    for (Index k = n - 1; k >= 0; --k) {
        if (k + 1 < n) x.row(k) -= lu.row(k).tail(n - k - 1) * x.bottomRows(n - k - 1);
        x.row(k) /= lu(k, k);
    }
    return x;
}

/// Inverse of a small square matrix via solve_small.
inline Matrix inverse_small(const Matrix& a) { return solve_small(a, Matrix::Identity(a.rows(), a.cols())); }

/// log det of a symmetric positive-definite matrix via Cholesky.
/// Throws NotPositiveDefiniteError when a pivot is not strictly positive.
inline double spd_logdet(const Matrix& a) {
    if (a.rows() != a.cols()) throw DimensionError("spd_logdet: matrix is not square");
    const Index n = a.rows();
    Matrix l = Matrix::Zero(n, n);
    double logdet = 0.0;
    for (Index j = 0; j < n; ++j) {
        double d = a(j, j) - l.row(j).head(j).squaredNorm();
        if (!(d > 0.0)) throw NotPositiveDefiniteError("matrix is not positive-definite");
        d = std::sqrt(d);
        l(j, j) = d;
        logdet += 2.0 * std::log(d);
        for (Index i = j + 1; i < n; ++i) l(i, j) = (a(i, j) - l.row(i).head(j).dot(l.row(j).head(j))) / d;
    }
    return logdet;
}

inline void require_positive(const Vector& psi, const char* what) {
    for (Index i = 0; i < psi.size(); ++i)
        if (!(psi[i] > 0.0)) throw NotPositiveDefiniteError(std::string(what) + ": diagonal entries must be strictly positive");
}

/// Precomputed factorization of Sigma = Lambda Lambda^T + diag(psi).
///
/// Holds Psi^-1, Psi^-1 Lambda, L^-1 with L = I + Lambda^T Psi^-1 Lambda, and
/// log det Sigma = log det L + sum log psi. Building costs O(D M^2 + M^3);
/// each application afterwards costs O(D M).
class LowRankCovariance {
public:
    LowRankCovariance(const Matrix& loading, const Vector& psi) : loading_(loading) {
        if (loading.rows() != psi.size()) throw DimensionError("LowRankCovariance: loading rows must equal noise length");
        require_positive(psi, "LowRankCovariance");
        const Index m = loading.cols();
        psi_inv_ = psi.cwiseInverse();
        scaled_ = psi_inv_.asDiagonal() * loading;
        const Matrix inner = Matrix::Identity(m, m) + loading.transpose() * scaled_;
        inner_inv_ = inverse_small(inner);
        log_det_ = spd_logdet(inner) + psi.array().log().sum();
    }

    Index dim() const { return psi_inv_.size(); }
    Index rank() const { return loading_.cols(); }
    double log_det() const { return log_det_; }
    const Vector& psi_inv() const { return psi_inv_; }
    const Matrix& inner_inverse() const { return inner_inv_; }

    /// beta = Lambda^T Sigma^-1 = L^-1 Lambda^T Psi^-1 (M x D).
    Matrix beta() const { return inner_inv_ * scaled_.transpose(); }

    /// Sigma^-1 v.
    Vector inverse_action(const Vector& v) const {
        const Vector u = scaled_.transpose() * v;
        return psi_inv_.cwiseProduct(v) - scaled_ * (inner_inv_ * u);
    }

    /// v^T Sigma^-1 v.
    double mahalanobis(const Eigen::Ref<const Vector>& v) const {
        const Vector u = scaled_.transpose() * v;
        return v.cwiseAbs2().dot(psi_inv_) - u.dot(inner_inv_ * u);
    }

    /// Row-wise v^T Sigma^-1 v for every row of centered data (N x D).
    Vector mahalanobis_rows(const DataMatrix& centered) const {
        const Matrix u = centered * scaled_;
        Vector out = centered.cwiseAbs2() * psi_inv_;
        if (rank() > 0) out -= (u * inner_inv_).cwiseProduct(u).rowwise().sum();
        return out;
    }

private:
    Matrix loading_;
    Vector psi_inv_;
    Matrix scaled_;
    Matrix inner_inv_;
    double log_det_ = 0.0;
};

struct InverseAction {
    Vector value; // Sigma^-1 v
    Matrix beta;  // Lambda^T Sigma^-1
};

/// Sigma^-1 v and beta = Lambda^T Sigma^-1 through the Woodbury identity.
inline InverseAction lowrank_inverse_action(const Matrix& loading, const Vector& psi, const Vector& v) {
    if (v.size() != psi.size()) throw DimensionError("lowrank_inverse_action: vector length mismatch");
    const LowRankCovariance cov(loading, psi);
    return {cov.inverse_action(v), cov.beta()};
}

/// log det(Lambda Lambda^T + diag(psi)) through the matrix determinant lemma.
inline double lowrank_logdet(const Matrix& loading, const Vector& psi) { return LowRankCovariance(loading, psi).log_det(); }

struct SymEigResult {
    Vector eigenvalues;  // descending
    Matrix eigenvectors; // column i pairs with eigenvalues[i]
};

/// Full eigendecomposition of a small symmetric matrix by cyclic Jacobi rotations.
///
/// Sweeps until the off-diagonal Frobenius norm drops below 1e-12 (scaled by the
/// matrix norm when that exceeds one). Eigenvalues come back in descending order;
/// each eigenvector's first non-negligible entry is made non-negative.
inline SymEigResult sym_eig_small(const Matrix& a) {
    if (a.rows() != a.cols()) throw DimensionError("sym_eig_small: matrix is not square");
    const Index n = a.rows();
    const double scale = n > 0 ? std::max(1.0, a.cwiseAbs().maxCoeff()) : 1.0;
    for (Index i = 0; i < n; ++i)
        for (Index j = i + 1; j < n; ++j)
            if (std::abs(a(i, j) - a(j, i)) > 1e-12 * scale) throw Error("sym_eig_small: matrix is not symmetric");

    Matrix s = 0.5 * (a + a.transpose());
    Matrix v = Matrix::Identity(n, n);
    const double tol = 1e-12 * std::max(1.0, s.norm());

    auto off_norm = [&] {
        double sum = 0.0;
        for (Index i = 0; i < n; ++i)
            for (Index j = 0; j < n; ++j)
                if (i != j) sum += s(i, j) * s(i, j);
        return std::sqrt(sum);
    };

    for (int sweep = 0; sweep < 100 && off_norm() >= tol; ++sweep) {
        for (Index p = 0; p < n - 1; ++p) {
            for (Index q = p + 1; q < n; ++q) {
                const double apq = s(p, q);
                if (apq == 0.0) continue;
                const double theta = (s(q, q) - s(p, p)) / (2.0 * apq);
                double t = 1.0 / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                if (theta < 0.0) t = -t;
                if (!std::isfinite(theta)) t = 0.0;
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double sn = t * c;
                for (Index k = 0; k < n; ++k) {
                    const double skp = s(k, p), skq = s(k, q);
                    s(k, p) = c * skp - sn * skq;
                    s(k, q) = sn * skp + c * skq;
                }
                for (Index k = 0; k < n; ++k) {
                    const double spk = s(p, k), sqk = s(q, k);
                    s(p, k) = c * spk - sn * sqk;
                    s(q, k) = sn * spk + c * sqk;
                }
                s(p, q) = 0.0;
                s(q, p) = 0.0;
                for (Index k = 0; k < n; ++k) {
                    const double vkp = v(k, p), vkq = v(k, q);
                    v(k, p) = c * vkp - sn * vkq;
                    v(k, q) = sn * vkp + c * vkq;
                }
            }
        }
    }

    std::vector<Index> order(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
    std::stable_sort(order.begin(), order.end(), [&](Index i, Index j) { return s(i, i) > s(j, j); });

    SymEigResult out{Vector(n), Matrix(n, n)};
    for (Index c = 0; c < n; ++c) {
        const Index src = order[static_cast<std::size_t>(c)];
        out.eigenvalues[c] = s(src, src);
        Vector col = v.col(src);
        for (Index r = 0; r < n; ++r) {
            if (std::abs(col[r]) > 1e-12) {
                if (col[r] < 0.0) col = -col;
                break;
            }
        }
        out.eigenvectors.col(c) = col;
    }
    return out;
}

/// Frobenius norm of the off-diagonal part.
inline double off_diagonal_norm(const Matrix& a) {
    Matrix off = a;
    off.diagonal().setZero();
    return off.norm();
}

} // namespace mfa::linalg
