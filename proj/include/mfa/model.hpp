#pragma once

// Mixture of factor analyzers in two parameterizations.
//
// Covariance form: component k is N(mu_k, Lambda_k Lambda_k^T + Psi_k).
// Precision form:  component k is N(mu_k, P_k^-1) with P_k = E_k - Gamma_k Gamma_k^T,
//                  E_k = diag(sqrt_prec)^2, and M_k = I - Gamma_k^T E_k^-1 Gamma_k.
//
// Component log-densities never include ln pi_k; mixture weights enter only in
// log_joint, which both parameterizations share.

#include "mfa/linalg.hpp"
#include "mfa/random.hpp"
#include "mfa/types.hpp"

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace mfa {

enum class PsiMode { free, tied, isotropic };

inline std::string_view to_string(PsiMode mode) {
    switch (mode) {
    case PsiMode::free: return "free";
    case PsiMode::tied: return "tied";
    case PsiMode::isotropic: return "isotropic";
    }
    return "free";
}

inline PsiMode parse_psi_mode(std::string_view s) {
    if (s == "free") return PsiMode::free;
    if (s == "tied") return PsiMode::tied;
    if (s == "isotropic") return PsiMode::isotropic;
    throw Error("unknown noise mode '" + std::string(s) + "' (expected free, tied or isotropic)");
}

struct MfaComponent {
    double weight = 1.0;
    Vector mean;    // D
    Matrix loading; // D x M
    Vector noise;   // D, variances
};

struct MfaModel {
    std::vector<MfaComponent> components;
    PsiMode psi_mode = PsiMode::free;

    Index num_components() const { return static_cast<Index>(components.size()); }
    Index dim() const { return components.empty() ? 0 : components.front().mean.size(); }
    Index latent_dim() const { return components.empty() ? 0 : components.front().loading.cols(); }
};

struct PrecisionComponent {
    double weight = 1.0;
    Vector mean;         // D
    Vector sqrt_prec;    // D, E = sqrt_prec^2
    Matrix prec_loading; // D x M

    Vector precision() const { return sqrt_prec.array().square().matrix(); }

    /// M = I - Gamma^T E^-1 Gamma.
    Matrix m_matrix() const {
        const Index m = prec_loading.cols();
        const Matrix scaled = precision().cwiseInverse().asDiagonal() * prec_loading;
        Matrix out = Matrix::Identity(m, m) - prec_loading.transpose() * scaled;
        // symmetric by construction; remove rounding asymmetry
        return 0.5 * (out + out.transpose());
    }
};

struct ConstraintParams {
    double m_min = 1e-4;
    double d_max = 20.0;
};

struct PrecisionModel {
    std::vector<PrecisionComponent> components;
    ConstraintParams constraints;

    Index num_components() const { return static_cast<Index>(components.size()); }
    Index dim() const { return components.empty() ? 0 : components.front().mean.size(); }
    Index latent_dim() const { return components.empty() ? 0 : components.front().prec_loading.cols(); }
};

/// Log-density evaluator for a covariance-form component, factorized once.
class CovarianceDensity {
public:
    explicit CovarianceDensity(const MfaComponent& comp) : mean_(comp.mean), cov_(comp.loading, comp.noise) {
        if (comp.mean.size() != comp.noise.size()) throw DimensionError("component mean and noise lengths differ");
    }

    double log_density(const Eigen::Ref<const Vector>& x) const {
        const Vector centered = x - mean_;
        return -0.5 * (static_cast<double>(mean_.size()) * kLog2Pi + cov_.log_det() + cov_.mahalanobis(centered));
    }

    Vector log_density_rows(const DataMatrix& x) const {
        const DataMatrix centered = x.rowwise() - mean_.transpose();
        const Vector maha = cov_.mahalanobis_rows(centered);
        const double c = static_cast<double>(mean_.size()) * kLog2Pi + cov_.log_det();
        return (-0.5 * (maha.array() + c)).matrix();
    }

    const linalg::LowRankCovariance& covariance() const { return cov_; }

private:
    Vector mean_;
    linalg::LowRankCovariance cov_;
};

/// Log-density evaluator for a precision-form component.
class PrecisionDensity {
public:
    explicit PrecisionDensity(const PrecisionComponent& comp)
        : mean_(comp.mean), precision_(comp.precision()), loading_(comp.prec_loading) {
        if (comp.mean.size() != comp.sqrt_prec.size() || comp.prec_loading.rows() != comp.mean.size())
            throw DimensionError("precision component dimensions disagree");
        linalg::require_positive(precision_, "precision component");
        const auto eig = linalg::sym_eig_small(comp.m_matrix());
        for (Index i = 0; i < eig.eigenvalues.size(); ++i)
            if (!(eig.eigenvalues[i] > 0.0))
                throw IndefinitePrecisionError("M = I - Gamma^T E^-1 Gamma has non-positive eigenvalue " + std::to_string(eig.eigenvalues[i]));
        log_det_prec_ = eig.eigenvalues.array().log().sum() + precision_.array().log().sum();
    }

    double log_density(const Eigen::Ref<const Vector>& x) const {
        const Vector centered = x - mean_;
        const Vector proj = loading_.transpose() * centered;
        const double quad = centered.cwiseAbs2().dot(precision_) - proj.squaredNorm();
        return -0.5 * (static_cast<double>(mean_.size()) * kLog2Pi - log_det_prec_ + quad);
    }

    Vector log_density_rows(const DataMatrix& x) const {
        const DataMatrix centered = x.rowwise() - mean_.transpose();
        Vector quad = centered.cwiseAbs2() * precision_;
        if (loading_.cols() > 0) quad -= (centered * loading_).rowwise().squaredNorm();
        const double c = static_cast<double>(mean_.size()) * kLog2Pi - log_det_prec_;
        return (-0.5 * (quad.array() + c)).matrix();
    }

    double log_det_precision() const { return log_det_prec_; }

private:
    Vector mean_;
    Vector precision_;
    Matrix loading_;
    double log_det_prec_ = 0.0;
};

/// ln N(x; mu, Lambda Lambda^T + Psi), excluding ln pi.
inline double component_loglik(const MfaComponent& comp, const Vector& x) {
    if (x.size() != comp.mean.size()) throw DimensionError("component_loglik: dimension mismatch");
    return CovarianceDensity(comp).log_density(x);
}

/// ln N(x; mu, (E - Gamma Gamma^T)^-1), excluding ln pi. No D x D matrix is formed.
inline double precision_loglik(const PrecisionComponent& comp, const Vector& x) {
    if (x.size() != comp.mean.size()) throw DimensionError("precision_loglik: dimension mismatch");
    return PrecisionDensity(comp).log_density(x);
}

namespace detail {

inline std::vector<CovarianceDensity> make_densities(const MfaModel& model) {
    std::vector<CovarianceDensity> out;
    out.reserve(model.components.size());
    for (const auto& c : model.components) out.emplace_back(c);
    return out;
}

inline std::vector<PrecisionDensity> make_densities(const PrecisionModel& model) {
    std::vector<PrecisionDensity> out;
    out.reserve(model.components.size());
    for (const auto& c : model.components) out.emplace_back(c);
    return out;
}

inline double log_weight(double w) { return w > 0.0 ? std::log(w) : -std::numeric_limits<double>::infinity(); }

} // namespace detail

/// N x K matrix of ln pi_k + ln p_k(x_i).
template <class Model>
Matrix log_joint(const Model& model, const DataMatrix& x) {
    if (model.components.empty()) throw InvalidModelError("model has no components");
    if (x.cols() != model.dim())
        throw DimensionError("data has " + std::to_string(x.cols()) + " columns, model expects " + std::to_string(model.dim()));
    const auto densities = detail::make_densities(model);
    Matrix out(x.rows(), model.num_components());
    for (Index k = 0; k < model.num_components(); ++k) {
        const double lw = detail::log_weight(model.components[static_cast<std::size_t>(k)].weight);
        out.col(k) = densities[static_cast<std::size_t>(k)].log_density_rows(x).array() + lw;
    }
    return out;
}

/// Per-row log-sum-exp of a log-joint matrix. Throws DegenerateDataError if a
/// row is -inf in every component.
inline Vector row_logsumexp(const Matrix& lj) {
    Vector out(lj.rows());
    Vector row(lj.cols());
    for (Index i = 0; i < lj.rows(); ++i) {
        row = lj.row(i).transpose();
        out[i] = linalg::logsumexp(row);
        if (out[i] == -std::numeric_limits<double>::infinity())
            throw DegenerateDataError("data row " + std::to_string(i) + " has zero density under every component");
        if (std::isnan(out[i])) throw DegenerateDataError("data row " + std::to_string(i) + " has undefined density");
    }
    return out;
}

/// gamma_ik = exp(ln pi_k + l_k(x_i) - logsumexp_k), computed in log space.
inline Responsibilities normalize_log_joint(const Matrix& lj, const Vector& lse) {
    Responsibilities r(lj.rows(), lj.cols());
    for (Index i = 0; i < lj.rows(); ++i) r.row(i) = (lj.row(i).array() - lse[i]).exp();
    return r;
}

template <class Model>
Responsibilities responsibilities(const Model& model, const DataMatrix& x) {
    const Matrix lj = log_joint(model, x);
    return normalize_log_joint(lj, row_logsumexp(lj));
}

/// Per-sample ln sum_k pi_k p_k(x_n).
template <class Model>
Vector score_rows(const Model& model, const DataMatrix& x) {
    return row_logsumexp(log_joint(model, x));
}

/// sum_n ln sum_k pi_k p_k(x_n); zero for an empty batch.
template <class Model>
double total_loglik(const Model& model, const DataMatrix& x) {
    if (x.rows() == 0) {
        if (x.cols() != model.dim() && x.cols() != 0) throw DimensionError("total_loglik: dimension mismatch");
        return 0.0;
    }
    return score_rows(model, x).sum();
}

struct GenerativeParams {
    Vector noise;   // D = E^-1
    Matrix loading; // Lambda = E^-1 Gamma V diag(m)^-1/2
};

/// Covariance-form parameters equivalent to a precision-form component.
///
/// With M = V diag(m) V^T, Sigma = E^-1 + E^-1 Gamma M^-1 Gamma^T E^-1, so
/// Lambda = E^-1 Gamma V diag(m)^-1/2 satisfies Lambda Lambda^T equal to the
/// low-rank term. The trailing rotation acting on the latent vector is dropped.
inline GenerativeParams precision_to_generative(const PrecisionComponent& comp) {
    const Vector precision = comp.precision();
    linalg::require_positive(precision, "precision_to_generative");
    const auto eig = linalg::sym_eig_small(comp.m_matrix());
    for (Index i = 0; i < eig.eigenvalues.size(); ++i)
        if (!(eig.eigenvalues[i] > 0.0)) throw IndefinitePrecisionError("precision_to_generative: M is not positive-definite");
    GenerativeParams out;
    const Vector prec_inv = precision.cwiseInverse();
    out.noise = prec_inv.cwiseMax(kPsiFloor);
    out.loading = prec_inv.asDiagonal() * comp.prec_loading * eig.eigenvectors *
                  eig.eigenvalues.cwiseSqrt().cwiseInverse().asDiagonal();
    return out;
}

inline MfaModel to_generative(const PrecisionModel& model) {
    MfaModel out;
    out.psi_mode = PsiMode::free;
    for (const auto& c : model.components) {
        auto g = precision_to_generative(c);
        out.components.push_back({c.weight, c.mean, std::move(g.loading), std::move(g.noise)});
    }
    return out;
}

/// Checks the structural invariants of a covariance-form model. Noise variances
/// must be positive and at least `noise_floor`.
inline void validate(const MfaModel& model, double weight_tol = 1e-9, double noise_floor = kPsiFloor) {
    if (model.components.empty()) throw InvalidModelError("model has no components");
    const Index d = model.dim(), m = model.latent_dim();
    double total = 0.0;
    for (std::size_t k = 0; k < model.components.size(); ++k) {
        const auto& c = model.components[k];
        const std::string tag = "component " + std::to_string(k);
        if (c.mean.size() != d || c.noise.size() != d || c.loading.rows() != d || c.loading.cols() != m)
            throw InvalidModelError(tag + ": inconsistent dimensions");
        if (!(c.weight >= 0.0 && c.weight <= 1.0)) throw InvalidModelError(tag + ": weight outside [0,1]");
        if (!c.mean.allFinite() || !c.loading.allFinite()) throw InvalidModelError(tag + ": non-finite parameters");
        for (Index i = 0; i < d; ++i)
            if (!(c.noise[i] > 0.0 && c.noise[i] >= noise_floor) || !std::isfinite(c.noise[i]))
                throw InvalidModelError(tag + ": noise variance below floor " + std::to_string(noise_floor));
        if (model.psi_mode == PsiMode::tied && c.noise != model.components.front().noise)
            throw InvalidModelError(tag + ": tied mode requires identical noise");
        if (model.psi_mode == PsiMode::isotropic && d > 0 && (c.noise.array() != c.noise[0]).any())
            throw InvalidModelError(tag + ": isotropic mode requires constant noise");
        total += c.weight;
    }
    if (std::abs(total - 1.0) > weight_tol) throw InvalidModelError("weights sum to " + std::to_string(total) + ", expected 1");
}

inline void validate(const PrecisionModel& model, double weight_tol = 1e-9) {
    if (model.components.empty()) throw InvalidModelError("model has no components");
    const Index d = model.dim(), m = model.latent_dim();
    double total = 0.0;
    for (std::size_t k = 0; k < model.components.size(); ++k) {
        const auto& c = model.components[k];
        const std::string tag = "component " + std::to_string(k);
        if (c.mean.size() != d || c.sqrt_prec.size() != d || c.prec_loading.rows() != d || c.prec_loading.cols() != m)
            throw InvalidModelError(tag + ": inconsistent dimensions");
        if (!(c.weight >= 0.0 && c.weight <= 1.0)) throw InvalidModelError(tag + ": weight outside [0,1]");
        if (!c.mean.allFinite() || !c.sqrt_prec.allFinite() || !c.prec_loading.allFinite())
            throw InvalidModelError(tag + ": non-finite parameters");
        if ((c.precision().array() <= 0.0).any()) throw InvalidModelError(tag + ": precision entries must be positive");
        try {
            PrecisionDensity check(c);
        } catch (const IndefinitePrecisionError& e) {
            throw InvalidModelError(tag + ": " + e.what());
        }
        total += c.weight;
    }
    if (std::abs(total - 1.0) > weight_tol) throw InvalidModelError("weights sum to " + std::to_string(total) + ", expected 1");
}

struct SampleSet {
    DataMatrix data;
    std::vector<int> labels;
};

/// Draws n samples: k ~ Multinomial(pi), z ~ N(0, I_M), eps ~ N(0, Psi_k),
/// x = mu_k + Lambda_k z + eps. When `component` is set every sample comes from
/// that component. Deterministic for a given seed.
inline SampleSet sample(const MfaModel& model, Index n, std::uint64_t seed, std::optional<Index> component = std::nullopt) {
    validate(model, 1e-9, 0.0);
    if (n < 0) throw Error("sample: negative sample count");
    if (component && (*component < 0 || *component >= model.num_components()))
        throw Error("sample: component index out of range");
    const Index d = model.dim(), m = model.latent_dim();
    CounterRng rng(seed);
    std::vector<Vector> noise_sd;
    for (const auto& c : model.components) noise_sd.push_back(c.noise.cwiseSqrt());

    SampleSet out{DataMatrix(n, d), std::vector<int>(static_cast<std::size_t>(n))};
    Vector z(m), eps(d);
    for (Index i = 0; i < n; ++i) {
        Index k = model.num_components() - 1;
        if (component) {
            k = *component;
        } else {
            const double u = rng.uniform();
            double acc = 0.0;
            for (Index j = 0; j < model.num_components(); ++j) {
                acc += model.components[static_cast<std::size_t>(j)].weight;
                if (u < acc) {
                    k = j;
                    break;
                }
            }
            // rounding in the cumulative sum: fall back to the last live component
            while (k > 0 && model.components[static_cast<std::size_t>(k)].weight <= 0.0) --k;
        }
        const auto& c = model.components[static_cast<std::size_t>(k)];
        for (Index j = 0; j < m; ++j) z[j] = rng.normal();
        for (Index j = 0; j < d; ++j) eps[j] = rng.normal();
        out.data.row(i) = (c.mean + c.loading * z + noise_sd[static_cast<std::size_t>(k)].cwiseProduct(eps)).transpose();
        out.labels[static_cast<std::size_t>(i)] = static_cast<int>(k);
    }
    return out;
}

inline SampleSet sample(const PrecisionModel& model, Index n, std::uint64_t seed, std::optional<Index> component = std::nullopt) {
    return sample(to_generative(model), n, seed, component);
}

} // namespace mfa
