#pragma once

// Outlier scoring and ROC-AUC.

#include "mfa/dataio.hpp"
#include "mfa/model.hpp"
#include "mfa/types.hpp"

#include <algorithm>
#include <numeric>
#include <variant>
#include <vector>

namespace mfa {

struct ScoreSet {
    std::vector<double> inlier_scores;
    std::vector<double> outlier_scores;
};

/// Per-sample log sum_k pi_k p_k(x_n). Lower means more outlying.
template <class Model>
std::vector<double> score_samples(const Model& model, const DataMatrix& data) {
    if (data.cols() != model.dim())
        throw DimensionError("score: data has " + std::to_string(data.cols()) + " columns, model expects " + std::to_string(model.dim()));
    if (data.rows() == 0) return {};
    const Vector s = score_rows(model, data);
    return {s.data(), s.data() + s.size()};
}

inline std::vector<double> score_samples(const AnyModel& model, const DataMatrix& data) {
    return std::visit([&](const auto& m) { return score_samples(m, data); }, model);
}

/// Probability that a random inlier scores above a random outlier, ties counted
/// one half. Computed from midranks of the pooled scores (Mann-Whitney U).
inline double roc_auc(const ScoreSet& scores) {
    const auto& in = scores.inlier_scores;
    const auto& out = scores.outlier_scores;
    if (in.empty() || out.empty()) throw Error("roc_auc: both score lists must be non-empty");

    const std::size_t n = in.size() + out.size();
    std::vector<std::pair<double, bool>> pooled;
    pooled.reserve(n);
    for (double s : in) pooled.emplace_back(s, true);
    for (double s : out) pooled.emplace_back(s, false);
    std::sort(pooled.begin(), pooled.end(), [](const auto& a, const auto& b) { return a.first < b.first; });

    // sum of (1-based) midranks of the inliers
    double rank_sum = 0.0;
    for (std::size_t i = 0; i < n;) {
        std::size_t j = i;
        std::size_t inliers = 0;
        while (j < n && pooled[j].first == pooled[i].first) {
            inliers += pooled[j].second ? 1 : 0;
            ++j;
        }
        const double midrank = 0.5 * static_cast<double>(i + 1 + j);
        rank_sum += midrank * static_cast<double>(inliers);
        i = j;
    }
    const double n_in = static_cast<double>(in.size());
    const double u = rank_sum - n_in * (n_in + 1.0) / 2.0;
    return u / (n_in * static_cast<double>(out.size()));
}

} // namespace mfa
