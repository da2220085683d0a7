#pragma once

#include <cstddef>
#include <vector>

namespace mfa {

struct FitReport {
    std::vector<double> loglik_trace; // one entry per EM iteration or SGD epoch
    std::size_t iterations_run = 0;
    bool converged = false;
    double wall_time = 0.0;            // seconds
    double final_loglik = 0.0;         // log-likelihood of the returned model
    std::size_t regularized_steps = 0; // EM only: M-steps that needed a ridge on sum gamma <ss^T>
};

} // namespace mfa
