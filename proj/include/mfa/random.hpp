#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace mfa {

/// Counter-based 64-bit generator.
///
/// Output i is splitmix64(key + i * golden_gamma), where key is the seed passed
/// through the same finalizer. The stream is fully determined by (seed, number
/// of draws so far), which keeps sampling and shuffling reproducible across
/// platforms and standard library versions. Normal variates use the Box-Muller
/// transform; the second variate of each pair is cached.
class CounterRng {
public:
    explicit CounterRng(std::uint64_t seed) : key_(mix(seed)) {}

    std::uint64_t next_u64() { return mix(key_ + (++counter_) * kGamma); }

    /// Uniform on [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    /// Uniform on [lo, hi).
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer on [0, n); n must be positive.
    std::uint64_t below(std::uint64_t n) {
        // rejection keeps the result unbiased
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t r = next_u64();
        while (r >= limit) r = next_u64();
        return r % n;
    }

    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        const double u1 = 1.0 - uniform(); // (0, 1]
        const double u2 = uniform();
        const double radius = std::sqrt(-2.0 * std::log(u1));
        const double angle = 2.0 * std::numbers::pi * u2;
        spare_ = radius * std::sin(angle);
        has_spare_ = true;
        return radius * std::cos(angle);
    }

    std::uint64_t draws() const { return counter_; }

private:
    static constexpr std::uint64_t kGamma = 0x9E3779B97F4A7C15ULL;

    static std::uint64_t mix(std::uint64_t z) {
        z += kGamma;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    std::uint64_t key_;
    std::uint64_t counter_ = 0;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

} // namespace mfa
