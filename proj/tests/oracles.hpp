#pragma once

// Dense reference computations used as independent oracles. Nothing here calls
// into the library's own numerical routines: covariances are formed explicitly
// and inverted/factorized with Eigen's dense decompositions.

#include "mfa/model.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <vector>

namespace oracle {

using mfa::DataMatrix;
using mfa::Index;
using mfa::Matrix;
using mfa::Vector;

inline constexpr double kLog2Pi = 1.83787706640934548356065947281123527;

inline Matrix dense_covariance(const Matrix& loading, const Vector& psi) {
    Matrix s = loading * loading.transpose();
    s.diagonal() += psi;
    return s;
}

inline Matrix dense_precision(const mfa::PrecisionComponent& c) {
    Matrix p = -c.prec_loading * c.prec_loading.transpose();
    p.diagonal() += c.sqrt_prec.array().square().matrix();
    return p;
}

/// log|det A| through partial-pivot LU.
inline double lu_logdet(const Matrix& a) {
    const Eigen::PartialPivLU<Matrix> lu(a);
    return lu.matrixLU().diagonal().array().abs().log().sum();
}

inline double gaussian_logpdf(const Vector& x, const Vector& mean, const Matrix& cov) {
    const Vector diff = x - mean;
    const double quad = diff.dot(cov.inverse() * diff);
    return -0.5 * (static_cast<double>(x.size()) * kLog2Pi + lu_logdet(cov) + quad);
}

inline double gaussian_logpdf_precision(const Vector& x, const Vector& mean, const Matrix& prec) {
    const Vector diff = x - mean;
    return -0.5 * (static_cast<double>(x.size()) * kLog2Pi - lu_logdet(prec) + diff.dot(prec * diff));
}

/// Long-double log-sum-exp with an explicit max shift.
inline double logsumexp(const std::vector<double>& v) {
    long double hi = v.front();
    for (double a : v) hi = std::max<long double>(hi, a);
    long double acc = 0.0L;
    for (double a : v) acc += std::exp(static_cast<long double>(a) - hi);
    return static_cast<double>(hi + std::log(acc));
}

/// log pi_k + log N(x | mu_k, Sigma_k) for every row and component.
inline Matrix log_joint(const mfa::MfaModel& model, const DataMatrix& x) {
    Matrix out(x.rows(), model.num_components());
    for (Index k = 0; k < model.num_components(); ++k) {
        const auto& c = model.components[static_cast<std::size_t>(k)];
        const Matrix cov = dense_covariance(c.loading, c.noise);
        for (Index i = 0; i < x.rows(); ++i)
            out(i, k) = std::log(c.weight) + gaussian_logpdf(x.row(i).transpose(), c.mean, cov);
    }
    return out;
}

inline Matrix log_joint(const mfa::PrecisionModel& model, const DataMatrix& x) {
    Matrix out(x.rows(), model.num_components());
    for (Index k = 0; k < model.num_components(); ++k) {
        const auto& c = model.components[static_cast<std::size_t>(k)];
        const Matrix prec = dense_precision(c);
        for (Index i = 0; i < x.rows(); ++i)
            out(i, k) = std::log(c.weight) + gaussian_logpdf_precision(x.row(i).transpose(), c.mean, prec);
    }
    return out;
}

template <class Model>
double total_loglik(const Model& model, const DataMatrix& x) {
    const Matrix lj = log_joint(model, x);
    double total = 0.0;
    for (Index i = 0; i < lj.rows(); ++i) {
        std::vector<double> row(lj.cols());
        for (Index k = 0; k < lj.cols(); ++k) row[static_cast<std::size_t>(k)] = lj(i, k);
        total += logsumexp(row);
    }
    return total;
}

/// gamma_ik = pi_k p_k(x_i) / sum_j pi_j p_j(x_i), computed from raw densities.
inline Matrix responsibilities(const mfa::MfaModel& model, const DataMatrix& x) {
    const Matrix lj = log_joint(model, x);
    Matrix out(lj.rows(), lj.cols());
    for (Index i = 0; i < lj.rows(); ++i) {
        const Eigen::RowVectorXd p = lj.row(i).array().exp();
        out.row(i) = p / p.sum();
    }
    return out;
}

/// Counts inlier > outlier pairs, ties as one half.
inline double pairwise_auc(const std::vector<double>& in, const std::vector<double>& out) {
    double wins = 0.0;
    for (double a : in)
        for (double b : out) wins += a > b ? 1.0 : (a == b ? 0.5 : 0.0);
    return wins / (static_cast<double>(in.size()) * static_cast<double>(out.size()));
}

} // namespace oracle
