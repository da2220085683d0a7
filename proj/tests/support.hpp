#pragma once

// Random model builders and fixture helpers shared by the test binaries.

#include "mfa/model.hpp"

#include <Eigen/Eigenvalues>

#include <unistd.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

namespace support {

using mfa::Index;
using mfa::Matrix;
using mfa::Vector;

inline Matrix random_matrix(std::mt19937_64& rng, Index rows, Index cols, double sd = 1.0) {
    std::normal_distribution<double> n(0.0, sd);
    Matrix m(rows, cols);
    for (Index j = 0; j < cols; ++j)
        for (Index i = 0; i < rows; ++i) m(i, j) = n(rng);
    return m;
}

inline Vector random_uniform(std::mt19937_64& rng, Index n, double lo, double hi) {
    std::uniform_real_distribution<double> u(lo, hi);
    Vector v(n);
    for (Index i = 0; i < n; ++i) v[i] = u(rng);
    return v;
}

inline std::vector<double> random_weights(std::mt19937_64& rng, Index k) {
    std::uniform_real_distribution<double> u(0.2, 1.0);
    std::vector<double> w(static_cast<std::size_t>(k));
    double total = 0.0;
    for (auto& v : w) total += (v = u(rng));
    for (auto& v : w) v /= total;
    return w;
}

inline mfa::MfaModel random_mfa(std::mt19937_64& rng, Index k, Index d, Index m, double mean_spread = 2.0) {
    mfa::MfaModel model;
    const auto w = random_weights(rng, k);
    for (Index c = 0; c < k; ++c) {
        mfa::MfaComponent comp;
        comp.weight = w[static_cast<std::size_t>(c)];
        comp.mean = random_uniform(rng, d, -mean_spread, mean_spread);
        comp.loading = random_matrix(rng, d, m, 0.7);
        comp.noise = random_uniform(rng, d, 0.2, 1.5);
        model.components.push_back(comp);
    }
    return model;
}

/// A precision component with M = I - Gamma^T E^-1 Gamma positive definite:
/// Gamma is rescaled so the largest eigenvalue of Gamma^T E^-1 Gamma is `fill` < 1.
inline mfa::PrecisionComponent random_precision_component(std::mt19937_64& rng, Index d, Index m, double fill) {
    mfa::PrecisionComponent c;
    c.mean = random_uniform(rng, d, -1.0, 1.0);
    c.sqrt_prec = random_uniform(rng, d, 0.6, 2.5);
    c.prec_loading = random_matrix(rng, d, m);
    if (m > 0) {
        const Vector e_inv = c.sqrt_prec.array().square().inverse().matrix();
        const Matrix q = c.prec_loading.transpose() * e_inv.asDiagonal() * c.prec_loading;
        const double top = Eigen::SelfAdjointEigenSolver<Matrix>(q).eigenvalues().maxCoeff();
        c.prec_loading *= std::sqrt(fill / top);
    }
    return c;
}

inline mfa::PrecisionModel random_precision(std::mt19937_64& rng, Index k, Index d, Index m) {
    mfa::PrecisionModel model;
    const auto w = random_weights(rng, k);
    std::uniform_real_distribution<double> fill(0.1, 0.9);
    for (Index c = 0; c < k; ++c) {
        auto comp = random_precision_component(rng, d, m, fill(rng));
        comp.weight = w[static_cast<std::size_t>(c)];
        model.components.push_back(comp);
    }
    return model;
}

inline mfa::DataMatrix random_data(std::mt19937_64& rng, Index n, Index d, double sd = 1.5) {
    return random_matrix(rng, n, d, sd);
}

/// The fixed three-component ground truth (D = 10, M = 2) used by trainer tests.
inline mfa::MfaModel acceptance_truth() {
    std::mt19937_64 rng(20240611);
    mfa::MfaModel model;
    const double weights[] = {0.5, 0.3, 0.2};
    for (int c = 0; c < 3; ++c) {
        mfa::MfaComponent comp;
        comp.weight = weights[c];
        comp.mean = random_uniform(rng, 10, -1.5, 1.5);
        comp.loading = random_matrix(rng, 10, 2, 0.4);
        comp.noise = random_uniform(rng, 10, 0.1, 0.5);
        model.components.push_back(comp);
    }
    return model;
}

class TempDir {
public:
    TempDir() {
        static int counter = 0;
        path_ = std::filesystem::temp_directory_path() /
                ("mfa_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    std::string file(const std::string& name) const { return (path_ / name).string(); }

private:
    std::filesystem::path path_;
};

inline void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    out << text;
}

inline void write_bytes(const std::string& path, const std::vector<unsigned char>& bytes) {
    std::ofstream out(path, std::ios::binary);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

inline std::vector<unsigned char> read_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Big-endian IDX header followed by payload.
inline std::vector<unsigned char> idx_file(std::uint32_t magic, const std::vector<std::uint32_t>& dims,
                                           const std::vector<unsigned char>& payload) {
    std::vector<unsigned char> out;
    auto put = [&](std::uint32_t v) {
        for (int s = 24; s >= 0; s -= 8) out.push_back(static_cast<unsigned char>((v >> s) & 0xFF));
    };
    put(magic);
    for (auto d : dims) put(d);
    out.insert(out.end(), payload.begin(), payload.end());
    return out;
}

} // namespace support
