#pragma once

// Batch EM for the covariance-form model.
//
// Initialization: k-means++ seeding and Lloyd iterations, then a closed-form PPCA
// fit inside each cluster. Each iteration runs an E-step (posterior latent
// moments and responsibilities) and an M-step that updates, in order, the means
// (with the previous loadings), the loadings (with the new means), the noise
// (with both), and the weights. Tied and isotropic noise are applied after the
// per-component update.

#include "mfa/fit_report.hpp"
#include "mfa/linalg.hpp"
#include "mfa/model.hpp"
#include "mfa/random.hpp"
#include "mfa/types.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <limits>
#include <optional>
#include <utility>
#include <vector>

namespace mfa {

struct EmConfig {
    std::size_t max_iters = 100;
    double rel_tol = 1e-6; // stop when (l_t - l_{t-1}) / |l_{t-1}| < rel_tol
    PsiMode psi_mode = PsiMode::free;
    std::size_t kmeans_iters = 50;
    std::uint64_t seed = 0;
};

struct KMeansResult {
    Matrix centers; // K x D
    std::vector<Index> assignments;
    double distortion = 0.0;
};

namespace detail {

inline double squared_distance(const DataMatrix& x, Index i, const Matrix& centers, Index k) {
    return (x.row(i) - centers.row(k)).squaredNorm();
}

inline double assign_nearest(const DataMatrix& x, const Matrix& centers, std::vector<Index>& assignment,
                             std::vector<double>& dist) {
    double total = 0.0;
    for (Index i = 0; i < x.rows(); ++i) {
        Index best = 0;
        double best_d = squared_distance(x, i, centers, 0);
        for (Index k = 1; k < centers.rows(); ++k) {
            const double d = squared_distance(x, i, centers, k);
            if (d < best_d) {
                best_d = d;
                best = k;
            }
        }
        assignment[static_cast<std::size_t>(i)] = best;
        dist[static_cast<std::size_t>(i)] = best_d;
        total += best_d;
    }
    return total;
}

} // namespace detail

/// k-means++ seeding followed by at most `iters` Lloyd iterations.
/// Empty clusters are reseeded to the point farthest from its center.
inline KMeansResult kmeans_init(const DataMatrix& x, Index k, std::size_t iters, std::uint64_t seed) {
    const Index n = x.rows();
    if (k < 1) throw Error("kmeans: need at least one cluster");
    if (n < k) throw Error("kmeans: " + std::to_string(n) + " points cannot form " + std::to_string(k) + " clusters");

    CounterRng rng(seed);
    Matrix centers(k, x.cols());
    std::vector<double> dist(static_cast<std::size_t>(n), std::numeric_limits<double>::infinity());
    centers.row(0) = x.row(static_cast<Index>(rng.below(static_cast<std::uint64_t>(n))));
    for (Index c = 1; c < k; ++c) {
        double total = 0.0;
        for (Index i = 0; i < n; ++i) {
            auto& di = dist[static_cast<std::size_t>(i)];
            di = std::min(di, detail::squared_distance(x, i, centers, c - 1));
            total += di;
        }
        Index pick = n - 1;
        if (total > 0.0) {
            const double target = rng.uniform() * total;
            double acc = 0.0;
            for (Index i = 0; i < n; ++i) {
                acc += dist[static_cast<std::size_t>(i)];
                if (acc > target && dist[static_cast<std::size_t>(i)] > 0.0) {
                    pick = i;
                    break;
                }
            }
        } else {
            pick = static_cast<Index>(rng.below(static_cast<std::uint64_t>(n)));
        }
        centers.row(c) = x.row(pick);
    }

    KMeansResult out;
    out.assignments.assign(static_cast<std::size_t>(n), 0);
    out.distortion = detail::assign_nearest(x, centers, out.assignments, dist);
    for (std::size_t it = 0; it < iters; ++it) {
        Matrix sums = Matrix::Zero(k, x.cols());
        std::vector<Index> counts(static_cast<std::size_t>(k), 0);
        for (Index i = 0; i < n; ++i) {
            const Index a = out.assignments[static_cast<std::size_t>(i)];
            sums.row(a) += x.row(i);
            ++counts[static_cast<std::size_t>(a)];
        }
        for (Index c = 0; c < k; ++c) {
            if (counts[static_cast<std::size_t>(c)] > 0) {
                centers.row(c) = sums.row(c) / static_cast<double>(counts[static_cast<std::size_t>(c)]);
                continue;
            }
            const auto far = std::max_element(dist.begin(), dist.end()) - dist.begin();
            centers.row(c) = x.row(far);
            dist[static_cast<std::size_t>(far)] = 0.0;
        }
        const auto previous = out.assignments;
        out.distortion = detail::assign_nearest(x, centers, out.assignments, dist);
        if (out.assignments == previous) break;
    }
    out.centers = std::move(centers);
    return out;
}

struct PpcaResult {
    Vector mean;
    Matrix loading; // D x M
    double iso_var = 0.0;
};

/// Maximum-likelihood probabilistic PCA in closed form.
///
/// sigma^2 is the mean of the D - M smallest eigenvalues of the (biased) sample
/// covariance, floored at kPsiFloor; Lambda = U_M (S_M - sigma^2 I)^1/2 with
/// negative entries of S_M - sigma^2 clamped to zero.
inline PpcaResult ppca_closed_form(const DataMatrix& x, Index m) {
    const Index n = x.rows(), d = x.cols();
    if (n < 2) throw Error("ppca: need at least two points, got " + std::to_string(n));
    if (m < 0 || m >= d) throw Error("ppca: latent dimension must be in [0, D)");

    PpcaResult out;
    out.mean = x.colwise().mean().transpose();
    const DataMatrix centered = x.rowwise() - out.mean.transpose();
    const Matrix cov = (centered.transpose() * centered) / static_cast<double>(n);

    Eigen::SelfAdjointEigenSolver<Matrix> solver(cov);
    if (solver.info() != Eigen::Success) throw Error("ppca: eigendecomposition failed");
    const Vector& evals = solver.eigenvalues(); // ascending
    const Matrix& evecs = solver.eigenvectors();

    out.iso_var = std::max(evals.head(d - m).mean(), kPsiFloor);
    out.loading.resize(d, m);
    for (Index j = 0; j < m; ++j) {
        const Index src = d - 1 - j;
        out.loading.col(j) = evecs.col(src) * std::sqrt(std::max(evals[src] - out.iso_var, 0.0));
    }
    return out;
}

struct ComponentStats {
    double resp_sum = 0.0;        // sum_i gamma_ik
    Matrix beta;                  // M x D, Lambda^T Sigma^-1
    Matrix latent_mean;           // M x N, <s>_i = beta (x_i - mu)
    Matrix latent_second;         // M x M, sum_i gamma_ik <s s^T>_i
    Matrix cross;                 // D x M, sum_i gamma_ik (x_i - mu) <s>_i^T
    Vector weighted_data;         // D, sum_i gamma_ik x_i
    Vector weighted_latent;       // M, sum_i gamma_ik <s>_i
    MfaComponent prior;           // parameters the statistics were computed under
};

struct EStepStats {
    std::vector<ComponentStats> components;
};

struct EStepResult {
    Responsibilities resp;
    EStepStats stats;
    double loglik = 0.0;
};

/// Responsibilities, posterior latent moments and the log-likelihood of `model`.
inline EStepResult e_step(const MfaModel& model, const DataMatrix& x) {
    if (x.cols() != model.dim()) throw DimensionError("e_step: dimension mismatch");
    const Index n = x.rows(), kk = model.num_components(), m = model.latent_dim();

    std::vector<CovarianceDensity> densities;
    densities.reserve(model.components.size());
    Matrix lj(n, kk);
    for (Index k = 0; k < kk; ++k) {
        const auto& c = model.components[static_cast<std::size_t>(k)];
        densities.emplace_back(c);
        lj.col(k) = densities.back().log_density_rows(x).array() + detail::log_weight(c.weight);
    }
    EStepResult out;
    const Vector lse = row_logsumexp(lj);
    out.loglik = lse.sum();
    out.resp = normalize_log_joint(lj, lse);

    out.stats.components.resize(static_cast<std::size_t>(kk));
    for (Index k = 0; k < kk; ++k) {
        const auto& c = model.components[static_cast<std::size_t>(k)];
        auto& st = out.stats.components[static_cast<std::size_t>(k)];
        const auto& cov = densities[static_cast<std::size_t>(k)].covariance();
        const Vector gamma = out.resp.col(k);
        const DataMatrix centered = x.rowwise() - c.mean.transpose();

        st.prior = c;
        st.resp_sum = gamma.sum();
        st.beta = cov.beta();
        st.latent_mean = st.beta * centered.transpose(); // M x N
        const Matrix weighted_latent_t = st.latent_mean * gamma.asDiagonal(); // M x N
        const Matrix posterior_cov = Matrix::Identity(m, m) - st.beta * c.loading;
        st.latent_second = st.resp_sum * posterior_cov + weighted_latent_t * st.latent_mean.transpose();
        st.latent_second = 0.5 * (st.latent_second + st.latent_second.transpose());
        st.cross = centered.transpose() * weighted_latent_t.transpose();
        st.weighted_data = x.transpose() * gamma;
        st.weighted_latent = weighted_latent_t.rowwise().sum();
    }
    return out;
}

struct MStepResult {
    MfaModel model;
    bool regularized = false;
};

/// Closed-form parameter updates from E-step statistics.
///
/// Noise variances are clamped at `psi_floor`; pass 0 to disable the clamp.
inline MStepResult m_step(const DataMatrix& x, const Responsibilities& resp, const EStepStats& stats, PsiMode mode,
                          double psi_floor = kPsiFloor) {
    const Index n = x.rows(), kk = resp.cols();
    if (resp.rows() != n || static_cast<Index>(stats.components.size()) != kk)
        throw DimensionError("m_step: statistics do not match data and responsibilities");

    MStepResult out;
    out.model.psi_mode = mode;
    out.model.components.resize(static_cast<std::size_t>(kk));
    std::vector<bool> live(static_cast<std::size_t>(kk), false);

    for (Index k = 0; k < kk; ++k) {
        const auto& st = stats.components[static_cast<std::size_t>(k)];
        auto& c = out.model.components[static_cast<std::size_t>(k)];
        const double r = st.resp_sum;
        c = st.prior;
        c.weight = r / static_cast<double>(n);
        // a component with no support keeps its parameters and gets zero weight
        if (!(r > 1e-300)) continue;
        live[static_cast<std::size_t>(k)] = true;

        const Index m = st.prior.loading.cols();
        c.mean = (st.weighted_data - st.prior.loading * st.weighted_latent) / r;

        // sum_i gamma (x_i - mu_new) <s>_i^T, from the statistics centered at mu_old
        const Matrix cross = st.cross + (st.prior.mean - c.mean) * st.weighted_latent.transpose();
        if (m > 0) {
            Matrix second = st.latent_second;
            try {
                (void)linalg::spd_logdet(second);
            } catch (const NotPositiveDefiniteError&) {
                second += 1e-10 * Matrix::Identity(m, m);
                out.regularized = true;
            }
            c.loading = linalg::solve_small(second, cross.transpose()).transpose();
        }

        const DataMatrix centered = x.rowwise() - c.mean.transpose();
        const Vector gamma = resp.col(k);
        Vector psi = centered.cwiseAbs2().transpose() * gamma;
        if (m > 0) psi -= c.loading.cwiseProduct(cross).rowwise().sum();
        psi /= r;
        if (psi_floor > 0.0) psi = psi.cwiseMax(psi_floor);
        c.noise = psi;
    }

    if (mode == PsiMode::tied) {
        Vector pooled = Vector::Zero(x.cols());
        double total = 0.0;
        for (Index k = 0; k < kk; ++k) {
            if (!live[static_cast<std::size_t>(k)]) continue;
            const double r = stats.components[static_cast<std::size_t>(k)].resp_sum;
            pooled += r * out.model.components[static_cast<std::size_t>(k)].noise;
            total += r;
        }
        pooled /= total;
        for (auto& c : out.model.components) c.noise = pooled;
    } else if (mode == PsiMode::isotropic) {
        for (auto& c : out.model.components) c.noise.setConstant(c.noise.mean());
    }
    return out;
}

namespace detail {

inline void apply_psi_mode(MfaModel& model, const std::vector<double>& sizes) {
    if (model.psi_mode == PsiMode::tied) {
        Vector pooled = Vector::Zero(model.dim());
        double total = 0.0;
        for (std::size_t k = 0; k < model.components.size(); ++k) {
            pooled += sizes[k] * model.components[k].noise;
            total += sizes[k];
        }
        pooled /= total;
        for (auto& c : model.components) c.noise = pooled;
    } else if (model.psi_mode == PsiMode::isotropic) {
        for (auto& c : model.components) c.noise.setConstant(c.noise.mean());
    }
}

inline DataMatrix gather_rows(const DataMatrix& x, const std::vector<Index>& rows) {
    DataMatrix out(static_cast<Index>(rows.size()), x.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Index>(i)) = x.row(rows[i]);
    return out;
}

} // namespace detail

/// Initial model: k-means clusters, one PPCA fit per cluster, weights from
/// cluster fractions. Clusters too small for PPCA reuse the global PPCA fit
/// around a slightly perturbed cluster center.
inline MfaModel initialize_em(const DataMatrix& x, Index k, Index m, const EmConfig& config) {
    const Index n = x.rows(), d = x.cols();
    const auto km = kmeans_init(x, k, config.kmeans_iters, config.seed);

    std::vector<std::vector<Index>> members(static_cast<std::size_t>(k));
    for (Index i = 0; i < n; ++i) members[static_cast<std::size_t>(km.assignments[static_cast<std::size_t>(i)])].push_back(i);

    std::optional<PpcaResult> global;
    auto global_fit = [&]() -> const PpcaResult& {
        if (!global) {
            if (n >= 2) {
                global = ppca_closed_form(x, m);
            } else {
                global = PpcaResult{x.row(0).transpose(), Matrix::Zero(d, m), 1.0};
            }
        }
        return *global;
    };

    CounterRng rng(config.seed ^ 0x5bd1e995ULL);
    MfaModel model;
    model.psi_mode = config.psi_mode;
    std::vector<double> sizes;
    for (Index c = 0; c < k; ++c) {
        const auto& rows = members[static_cast<std::size_t>(c)];
        MfaComponent comp;
        comp.weight = std::max(static_cast<double>(rows.size()), 1.0) / static_cast<double>(n);
        if (rows.size() >= 2) {
            auto fit = ppca_closed_form(detail::gather_rows(x, rows), m);
            comp.mean = std::move(fit.mean);
            comp.loading = std::move(fit.loading);
            comp.noise = Vector::Constant(d, fit.iso_var);
        } else {
            const auto& fit = global_fit();
            const double sd = std::sqrt(fit.iso_var);
            comp.mean = km.centers.row(c).transpose();
            for (Index j = 0; j < d; ++j) comp.mean[j] += 1e-3 * sd * rng.normal();
            comp.loading = fit.loading;
            comp.noise = Vector::Constant(d, fit.iso_var);
        }
        sizes.push_back(comp.weight);
        model.components.push_back(std::move(comp));
    }
    double total = 0.0;
    for (const auto& c : model.components) total += c.weight;
    for (auto& c : model.components) c.weight /= total;
    detail::apply_psi_mode(model, sizes);
    return model;
}

/// Fits a K-component, M-factor model by EM.
///
/// loglik_trace[t] is the log-likelihood of the model entering iteration t (recorded
/// before its M-step). On convergence the returned model is the one that produced
/// the last trace entry; otherwise it is the output of the final M-step and
/// report.final_loglik holds its log-likelihood.
inline std::pair<MfaModel, FitReport> fit_em(const DataMatrix& x, Index k, Index m, const EmConfig& config) {
    if (config.max_iters < 1) throw Error("fit_em: max_iters must be at least 1");
    if (!(config.rel_tol > 0.0)) throw Error("fit_em: rel_tol must be positive");
    if (m < 0 || m >= x.cols()) throw Error("fit_em: latent dimension must be in [0, D)");
    const auto start = std::chrono::steady_clock::now();

    FitReport report;
    MfaModel model = initialize_em(x, k, m, config);
    for (std::size_t it = 0; it < config.max_iters; ++it) {
        auto e = e_step(model, x);
        report.loglik_trace.push_back(e.loglik);
        ++report.iterations_run;
        if (report.loglik_trace.size() >= 2) {
            const double prev = report.loglik_trace[report.loglik_trace.size() - 2];
            if ((e.loglik - prev) / std::abs(prev) < config.rel_tol) {
                report.converged = true;
                report.final_loglik = e.loglik;
                break;
            }
        }
        auto ms = m_step(x, e.resp, e.stats, config.psi_mode);
        if (ms.regularized) ++report.regularized_steps;
        model = std::move(ms.model);
    }
    if (!report.converged) report.final_loglik = total_loglik(model, x);
    report.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return {std::move(model), std::move(report)};
}

} // namespace mfa
