#pragma once

// Constrained mini-batch gradient ascent for the precision-form model.
//
// Parameters per component: mean mu, sqrt-precision e (E = e^2), loading Gamma,
// and a mixture logit (pi = softmax(logits)). After every step the constraint
// pass clips E to (floor, d_max], rotates Gamma so that M = I - Gamma^T E^-1 Gamma
// is diagonal, and rescales any column whose diagonal entry of M fell below m_min.

#include "mfa/fit_report.hpp"
#include "mfa/linalg.hpp"
#include "mfa/model.hpp"
#include "mfa/random.hpp"
#include "mfa/types.hpp"

#include <Eigen/QR>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <utility>
#include <vector>

namespace mfa {

struct GradientWeights {
    double mean = 1.0;
    double precision = 0.1;
    double loading = 0.1;
    double logit = 1.0;
};

struct SgdConfig {
    std::size_t epochs_phase1 = 15;
    std::size_t epochs_phase2 = 50;
    std::size_t batch_size = 100;
    double learning_rate = 0.01;
    GradientWeights grad_weights;
    double d_max = 20.0;
    double m_min = 1e-4;
    double m_init = 1e-4; // initial M = (1 - m_init) I
    double centroid_init_lo = -0.1;
    double centroid_init_hi = 0.1;
    std::uint64_t seed = 0;
};

struct ComponentGradient {
    Vector d_mean;         // D
    Vector d_sqrt_prec;    // D
    Matrix d_prec_loading; // D x M
    double d_logit = 0.0;
};

using GradientSet = std::vector<ComponentGradient>;

struct BatchGradient {
    GradientSet gradients;
    double loglik = 0.0;
};

/// Gradient of sum_n log sum_k pi_k p_k(x_n) with respect to every parameter.
///
/// For component k with responsibilities r_n, x~ = x - mu, u = Gamma^T x~:
///   d/dmu    = sum_n r_n (E x~ - Gamma u)
///   d/dE_d   = 1/2 sum_n r_n (g_d^T M^-1 g_d / E_d^2 + 1/E_d - x~_d^2),  g_d = row d of Gamma
///   d/de_d   = 2 e_d d/dE_d
///   d/dGamma = sum_n r_n x~ u^T - (sum_n r_n) E^-1 Gamma M^-1
///   d/dlogit = sum_n (r_n - pi_k)
inline BatchGradient batch_grad(const PrecisionModel& model, const DataMatrix& batch) {
    const Index kk = model.num_components(), d = model.dim(), m = model.latent_dim();
    if (batch.cols() != d) throw DimensionError("batch_grad: dimension mismatch");

    const Matrix lj = log_joint(model, batch); // throws IndefinitePrecisionError on indefinite M
    const Vector lse = row_logsumexp(lj);
    const Responsibilities resp = normalize_log_joint(lj, lse);

    BatchGradient out;
    out.loglik = lse.sum();
    out.gradients.resize(static_cast<std::size_t>(kk));
    for (Index k = 0; k < kk; ++k) {
        const auto& c = model.components[static_cast<std::size_t>(k)];
        auto& g = out.gradients[static_cast<std::size_t>(k)];
        const Vector r = resp.col(k);
        const double rsum = r.sum();
        const Vector precision = c.precision();
        const Vector prec_inv = precision.cwiseInverse();

        const DataMatrix centered = batch.rowwise() - c.mean.transpose(); // B x D
        const Matrix proj = centered * c.prec_loading;                    // B x M
        const Vector wx = centered.transpose() * r;                       // sum r x~

        g.d_mean = precision.cwiseProduct(wx);
        if (m > 0) g.d_mean -= c.prec_loading * (proj.transpose() * r);

        const auto eig = linalg::sym_eig_small(c.m_matrix());
        const Matrix m_inv = eig.eigenvectors * eig.eigenvalues.cwiseInverse().asDiagonal() * eig.eigenvectors.transpose();
        const Matrix scaled = prec_inv.asDiagonal() * c.prec_loading; // E^-1 Gamma
        Vector det_term = Vector::Zero(d);
        if (m > 0) det_term = (scaled * m_inv).cwiseProduct(scaled).rowwise().sum();

        const Vector d_prec = 0.5 * (rsum * (det_term + prec_inv) - centered.cwiseAbs2().transpose() * r);
        g.d_sqrt_prec = 2.0 * c.sqrt_prec.cwiseProduct(d_prec);

        g.d_prec_loading = Matrix::Zero(d, m);
        if (m > 0) g.d_prec_loading = centered.transpose() * (r.asDiagonal() * proj) - rsum * scaled * m_inv;

        g.d_logit = rsum - static_cast<double>(batch.rows()) * c.weight;
    }
    return out;
}

/// Projects a precision-form model back onto the feasible set.
///
/// Per component: (1) E entries clipped to [kPrecisionFloor, d_max]; (2) Gamma
/// rotated by the eigenvectors of M so that M becomes diagonal (skipped when it
/// already is); (3) every column whose diagonal entry of M is below m_min is
/// scaled so that entry equals m_min exactly.
inline PrecisionModel apply_constraints(PrecisionModel model, double m_min, double d_max) {
    const double max_sqrt = std::sqrt(d_max);
    const double min_sqrt = std::sqrt(kPrecisionFloor);
    for (auto& c : model.components) {
        for (Index i = 0; i < c.sqrt_prec.size(); ++i) c.sqrt_prec[i] = std::clamp(std::abs(c.sqrt_prec[i]), min_sqrt, max_sqrt);

        const Index m = c.prec_loading.cols();
        if (m == 0) continue;
        const Matrix mm = c.m_matrix();
        if (linalg::off_diagonal_norm(mm) >= 1e-12 * std::max(1.0, mm.norm())) {
            const auto eig = linalg::sym_eig_small(mm);
            c.prec_loading = c.prec_loading * eig.eigenvectors;
        }

        const Vector prec_inv = c.precision().cwiseInverse();
        for (Index j = 0; j < m; ++j) {
            const double q = c.prec_loading.col(j).cwiseAbs2().dot(prec_inv); // Gamma_j^T E^-1 Gamma_j
            if (1.0 - q < m_min) c.prec_loading.col(j) *= std::sqrt((1.0 - m_min) / q);
        }
    }
    model.constraints = {m_min, d_max};
    return model;
}

using StepObserver = std::function<void(const PrecisionModel&, std::size_t step)>;

namespace detail {

inline Vector softmax(const Vector& logits) {
    const double hi = logits.maxCoeff();
    Vector w = (logits.array() - hi).exp();
    return w / w.sum();
}

} // namespace detail

/// Random initial model: means uniform in the centroid range, E = d_max I,
/// Gamma with orthogonal columns scaled so that M = (1 - m_init) I, uniform weights.
inline PrecisionModel initialize_sgd(Index d, Index k, Index m, const SgdConfig& config) {
    CounterRng rng(config.seed);
    PrecisionModel model;
    model.constraints = {config.m_min, config.d_max};
    const double col_scale = std::sqrt(config.m_init * config.d_max); // Gamma_j^T E^-1 Gamma_j = m_init
    for (Index c = 0; c < k; ++c) {
        PrecisionComponent comp;
        comp.weight = 1.0 / static_cast<double>(k);
        comp.mean.resize(d);
        for (Index j = 0; j < d; ++j) comp.mean[j] = rng.uniform(config.centroid_init_lo, config.centroid_init_hi);
        comp.sqrt_prec = Vector::Constant(d, std::sqrt(config.d_max));
        Matrix g(d, m);
        for (Index j = 0; j < m; ++j)
            for (Index i = 0; i < d; ++i) g(i, j) = rng.normal();
        if (m > 0) {
            Eigen::HouseholderQR<Matrix> qr(g);
            g = qr.householderQ() * Matrix::Identity(d, m);
        }
        comp.prec_loading = col_scale * g;
        model.components.push_back(std::move(comp));
    }
    return model;
}

/// Two-phase constrained SGD from random initial conditions.
///
/// Phase one updates only the means; phase two updates every parameter with
/// config.grad_weights. Each step uses the batch-averaged gradient and is
/// followed by apply_constraints. The report holds the full-data log-likelihood
/// after every epoch; `converged` stays false since the schedule has no stopping rule.
inline std::pair<PrecisionModel, FitReport> fit_sgd(const DataMatrix& x, Index k, Index m, const SgdConfig& config,
                                                    const StepObserver& observer = {}) {
    if (k < 1) throw Error("fit_sgd: need at least one component");
    if (m < 0 || m >= x.cols()) throw Error("fit_sgd: latent dimension must be in [0, D)");
    if (config.batch_size < 1) throw Error("fit_sgd: batch size must be positive");
    if (!(config.m_min > 0.0 && config.m_min < 1.0)) throw Error("fit_sgd: m_min must be in (0, 1)");
    if (!(config.d_max > 0.0) || !(config.learning_rate > 0.0)) throw Error("fit_sgd: d_max and learning rate must be positive");
    if (x.rows() == 0) throw Error("fit_sgd: empty dataset");
    const auto start = std::chrono::steady_clock::now();

    const Index n = x.rows(), d = x.cols();
    PrecisionModel model = initialize_sgd(d, k, m, config);
    Vector logits = Vector::Zero(k);

    CounterRng shuffle_rng(config.seed ^ 0xD1B54A32D192ED03ULL);
    std::vector<Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), Index{0});

    FitReport report;
    std::size_t step = 0;
    const std::size_t epochs = config.epochs_phase1 + config.epochs_phase2;
    DataMatrix batch;
    for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
        const bool phase_one = epoch < config.epochs_phase1;
        for (std::size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[static_cast<std::size_t>(shuffle_rng.below(i))]);

        for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size) {
            const std::size_t end = std::min(order.size(), begin + config.batch_size);
            batch.resize(static_cast<Index>(end - begin), d);
            for (std::size_t i = begin; i < end; ++i) batch.row(static_cast<Index>(i - begin)) = x.row(order[i]);

            const auto grad = batch_grad(model, batch);
            const double step_size = config.learning_rate / static_cast<double>(batch.rows());
            const auto& w = config.grad_weights;
            for (Index c = 0; c < k; ++c) {
                auto& comp = model.components[static_cast<std::size_t>(c)];
                const auto& g = grad.gradients[static_cast<std::size_t>(c)];
                comp.mean += step_size * w.mean * g.d_mean;
                if (phase_one) continue;
                comp.sqrt_prec += step_size * w.precision * g.d_sqrt_prec;
                comp.prec_loading += step_size * w.loading * g.d_prec_loading;
                logits[c] += step_size * w.logit * g.d_logit;
            }
            if (!phase_one) {
                const Vector weights = detail::softmax(logits);
                for (Index c = 0; c < k; ++c) model.components[static_cast<std::size_t>(c)].weight = weights[c];
            }
            model = apply_constraints(std::move(model), config.m_min, config.d_max);
            ++step;
            if (observer) observer(model, step);
        }
        report.loglik_trace.push_back(total_loglik(model, x));
        ++report.iterations_run;
    }
    report.final_loglik = report.loglik_trace.empty() ? total_loglik(model, x) : report.loglik_trace.back();
    report.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return {std::move(model), std::move(report)};
}

} // namespace mfa
