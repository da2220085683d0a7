#pragma once

// Command-line front end: fit-em, fit-sgd, sample, score, auc, export.

#include "mfa/dataio.hpp"
#include "mfa/em.hpp"
#include "mfa/model.hpp"
#include "mfa/scoring.hpp"
#include "mfa/sgd.hpp"

#include "CLI11.hpp"

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <limits>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace mfa::cli {

/// "0-8", "0,1,2", "0-3,7" -> set of class labels.
inline std::set<int> parse_class_list(const std::string& text) {
    std::set<int> out;
    for (auto part : detail::split(text, ',')) {
        part = detail::trim(part);
        if (part.empty()) continue;
        const auto dash = part.find('-', 1);
        auto to_int = [&](std::string_view s) {
            const auto v = detail::parse_double(s);
            if (!v || *v != static_cast<int>(*v)) throw Error("bad class list '" + text + "'");
            return static_cast<int>(*v);
        };
        if (dash == std::string_view::npos) {
            out.insert(to_int(part));
        } else {
            const int lo = to_int(part.substr(0, dash)), hi = to_int(part.substr(dash + 1));
            if (hi < lo) throw Error("bad class range '" + std::string(part) + "'");
            for (int c = lo; c <= hi; ++c) out.insert(c);
        }
    }
    if (out.empty()) throw Error("empty class list");
    return out;
}

/// "28x28" -> (28, 28).
inline std::pair<Index, Index> parse_shape(const std::string& text) {
    const auto x = text.find_first_of("xX");
    if (x == std::string::npos) throw Error("image shape must look like RxC, got '" + text + "'");
    const auto r = detail::parse_double(std::string_view(text).substr(0, x));
    const auto c = detail::parse_double(std::string_view(text).substr(x + 1));
    if (!r || !c || *r < 1 || *c < 1) throw Error("bad image shape '" + text + "'");
    return {static_cast<Index>(*r), static_cast<Index>(*c)};
}

inline std::pair<double, double> parse_range(const std::string& text) {
    const auto parts = detail::split(text, ',');
    if (parts.size() != 2) throw Error("value range must look like lo,hi");
    const auto lo = detail::parse_double(parts[0]), hi = detail::parse_double(parts[1]);
    if (!lo || !hi) throw Error("bad value range '" + text + "'");
    return {*lo, *hi};
}

inline bool looks_like_csv(const std::string& path) {
    const auto ext = std::filesystem::path(path).extension().string();
    return ext == ".csv" || ext == ".txt";
}

/// CSV (header detected from a non-numeric first line) or IDX, optionally
/// filtered to a set of classes.
inline Dataset load_data(const std::string& path, const std::string& labels, const std::string& classes) {
    Dataset ds;
    if (looks_like_csv(path)) {
        std::ifstream in(path);
        if (!in) throw IoError("cannot open '" + path + "'");
        std::string first;
        while (std::getline(in, first) && detail::trim(first).empty()) {
        }
        bool header = false;
        for (auto cell : detail::split(detail::trim(first), ','))
            if (!detail::parse_double(cell)) header = true;
        ds = load_csv(path, header);
        if (!labels.empty()) throw Error("--labels applies to IDX data; CSV labels come from a 'label' column");
    } else {
        ds = load_idx(path, labels.empty() ? std::nullopt : std::optional<std::string>(labels));
    }
    if (!classes.empty()) ds = filter_classes(ds, parse_class_list(classes));
    return ds;
}

inline std::vector<double> read_scores(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open '" + path + "'");
    std::vector<double> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (detail::trim(line).empty()) continue;
        const auto v = detail::parse_double(line);
        if (!v) throw ParseError(path + ": line " + std::to_string(line_no) + ": not a number");
        out.push_back(*v);
    }
    return out;
}

inline void print_fit_summary(std::ostream& out, const FitReport& report) {
    out << std::setprecision(10) << "final log-likelihood: " << report.final_loglik << '\n'
        << "iterations: " << report.iterations_run << '\n'
        << "converged: " << (report.converged ? "yes" : "no") << '\n'
        << std::setprecision(3) << "wall time: " << report.wall_time << " s\n";
}

inline void write_trace(const std::string& path, const FitReport& report) {
    if (path.empty()) return;
    std::ofstream out(path);
    if (!out) throw IoError("cannot write '" + path + "'");
    out << std::setprecision(17);
    for (double v : report.loglik_trace) out << v << '\n';
}

struct Options {
    std::uint64_t seed = 0;
    std::string out;
    std::string data, labels, classes, trace;
    Index k = 1, m = 0;
    std::string psi = "free";
    std::size_t max_iters = 100, kmeans_iters = 50;
    double tol = 1e-6;
    SgdConfig sgd;
    std::string model;
    Index n = 0;
    Index component = -1;
    std::string image_shape, range;
    std::string inlier_data, outlier_data, inlier_classes, outlier_classes, scores_a, scores_b;
    std::string what = "means";
};

inline int run_fit_em(const Options& o, std::ostream& out) {
    if (o.out.empty()) throw Error("fit-em needs --out");
    const auto ds = load_data(o.data, o.labels, o.classes);
    EmConfig config;
    config.max_iters = o.max_iters;
    config.rel_tol = o.tol;
    config.psi_mode = parse_psi_mode(o.psi);
    config.kmeans_iters = o.kmeans_iters;
    config.seed = o.seed;
    const auto [model, report] = fit_em(ds.data, o.k, o.m, config);
    save_model(model, o.out);
    write_trace(o.trace, report);
    print_fit_summary(out, report);
    return 0;
}

inline int run_fit_sgd(const Options& o, std::ostream& out) {
    if (o.out.empty()) throw Error("fit-sgd needs --out");
    const auto ds = load_data(o.data, o.labels, o.classes);
    SgdConfig config = o.sgd;
    config.seed = o.seed;
    const auto [model, report] = fit_sgd(ds.data, o.k, o.m, config);
    save_model(model, o.out);
    write_trace(o.trace, report);
    print_fit_summary(out, report);
    return 0;
}

inline int run_sample(const Options& o, std::ostream& out) {
    if (o.out.empty()) throw Error("sample needs --out");
    const auto any = load_model(o.model);
    const std::optional<Index> comp = o.component >= 0 ? std::optional<Index>(o.component) : std::nullopt;
    const auto s = std::visit([&](const auto& m) { return sample(m, o.n, o.seed, comp); }, any);
    if (!o.image_shape.empty()) {
        const auto range = o.range.empty() ? std::pair<double, double>{0.0, 1.0} : parse_range(o.range);
        write_image_grid(s.data, parse_shape(o.image_shape), o.out, range);
    } else {
        save_csv(o.out, s.data, &s.labels);
    }
    out << "wrote " << s.data.rows() << " samples to " << o.out << '\n';
    return 0;
}

inline int run_score(const Options& o, std::ostream& out) {
    const auto any = load_model(o.model);
    const auto ds = load_data(o.data, o.labels, o.classes);
    const auto scores = score_samples(any, ds.data);
    std::ofstream file;
    if (!o.out.empty()) {
        file.open(o.out);
        if (!file) throw IoError("cannot write '" + o.out + "'");
    }
    std::ostream& dst = o.out.empty() ? out : file;
    dst << std::setprecision(17);
    for (double s : scores) dst << s << '\n';
    return 0;
}

inline int run_auc(const Options& o, std::ostream& out) {
    ScoreSet set;
    if (!o.scores_a.empty() || !o.scores_b.empty()) {
        if (o.scores_a.empty() || o.scores_b.empty()) throw Error("auc needs both --scores-a and --scores-b");
        set.inlier_scores = read_scores(o.scores_a);
        set.outlier_scores = read_scores(o.scores_b);
    } else {
        if (o.model.empty()) throw Error("auc needs --model, or --scores-a and --scores-b");
        const auto any = load_model(o.model);
        if (!o.inlier_data.empty() || !o.outlier_data.empty()) {
            if (o.inlier_data.empty() || o.outlier_data.empty()) throw Error("auc needs both --inlier-data and --outlier-data");
            set.inlier_scores = score_samples(any, load_data(o.inlier_data, "", o.inlier_classes).data);
            set.outlier_scores = score_samples(any, load_data(o.outlier_data, "", o.outlier_classes).data);
        } else {
            if (o.data.empty() || o.inlier_classes.empty() || o.outlier_classes.empty())
                throw Error("auc needs --inlier-data/--outlier-data or --data with --inlier-classes and --outlier-classes");
            const auto ds = load_data(o.data, o.labels, "");
            set.inlier_scores = score_samples(any, filter_classes(ds, parse_class_list(o.inlier_classes)).data);
            set.outlier_scores = score_samples(any, filter_classes(ds, parse_class_list(o.outlier_classes)).data);
        }
    }
    out << roc_auc(set) << '\n';
    return 0;
}

inline int run_export(const Options& o, std::ostream& out) {
    if (o.out.empty()) throw Error("export needs --out");
    if (o.image_shape.empty()) throw Error("export needs --image-shape");
    const auto shape = parse_shape(o.image_shape);
    const auto any = load_model(o.model);
    const Index k = std::visit([](const auto& m) { return m.num_components(); }, any);
    const Index d = std::visit([](const auto& m) { return m.dim(); }, any);
    const Index lat = std::visit([](const auto& m) { return m.latent_dim(); }, any);
    const auto* cov = std::get_if<MfaModel>(&any);
    const auto* prec = std::get_if<PrecisionModel>(&any);

    auto range_or = [&](std::pair<double, double> fallback) { return o.range.empty() ? fallback : parse_range(o.range); };
    DataMatrix tiles(k, d);
    if (o.what == "means") {
        for (Index c = 0; c < k; ++c)
            tiles.row(c) = cov ? cov->components[static_cast<std::size_t>(c)].mean.transpose()
                               : prec->components[static_cast<std::size_t>(c)].mean.transpose();
        write_image_grid(tiles, shape, o.out, range_or({0.0, 1.0}));
        out << "wrote " << o.out << '\n';
    } else if (o.what == "noise") {
        // covariance models: noise variances; precision models: diagonal precisions
        for (Index c = 0; c < k; ++c)
            tiles.row(c) = (cov ? cov->components[static_cast<std::size_t>(c)].noise
                                : prec->components[static_cast<std::size_t>(c)].precision()).transpose();
        const double lo = tiles.minCoeff(), hi = tiles.maxCoeff();
        write_image_grid(tiles, shape, o.out, range_or({lo, hi > lo ? hi : lo + 1.0}));
        out << "wrote " << o.out << '\n';
    } else if (o.what == "loadings") {
        if (lat == 0) throw Error("model has no loading columns");
        const auto path = std::filesystem::path(o.out);
        for (Index j = 0; j < lat; ++j) {
            for (Index c = 0; c < k; ++c)
                tiles.row(c) = cov ? cov->components[static_cast<std::size_t>(c)].loading.col(j).transpose()
                                   : prec->components[static_cast<std::size_t>(c)].prec_loading.col(j).transpose();
            auto file = path.parent_path() / (path.stem().string() + "_" + std::to_string(j) + path.extension().string());
            write_image_grid(tiles, shape, file.string(), range_or({-1.0, 1.0}));
            out << "wrote " << file.string() << '\n';
        }
    } else {
        throw Error("--what must be means, loadings or noise");
    }
    return 0;
}

/// Parses argv and runs one subcommand. Returns 0 on success, 2 on usage errors
/// (bad flags, missing files) and 1 on any other failure.
inline int main_dispatch(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    CLI::App app{"Mixture of factor analyzers: EM and constrained SGD training, sampling, scoring"};
    app.require_subcommand(1);
    Options o;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--seed", o.seed, "random seed");
        sub->add_option("--out", o.out, "output path");
    };
    auto add_data = [&](CLI::App* sub, bool required) {
        auto* opt = sub->add_option("--data", o.data, "CSV (.csv/.txt) or uncompressed IDX image file");
        if (required) opt->required();
        sub->add_option("--labels", o.labels, "IDX label file");
        sub->add_option("--classes", o.classes, "keep only these labels, e.g. 0,1,2 or 0-8");
    };

    auto* fit_em_cmd = app.add_subcommand("fit-em", "fit by batch EM (covariance form)");
    add_common(fit_em_cmd);
    add_data(fit_em_cmd, true);
    fit_em_cmd->add_option("--k", o.k, "number of components")->required();
    fit_em_cmd->add_option("--m", o.m, "latent dimension")->required();
    fit_em_cmd->add_option("--psi", o.psi, "noise mode")->check(CLI::IsMember({"free", "tied", "isotropic"}));
    fit_em_cmd->add_option("--max-iters", o.max_iters, "maximum EM iterations");
    fit_em_cmd->add_option("--tol", o.tol, "relative log-likelihood tolerance");
    fit_em_cmd->add_option("--kmeans-iters", o.kmeans_iters, "Lloyd iterations for initialization");
    fit_em_cmd->add_option("--trace", o.trace, "write the log-likelihood trace here");

    auto* fit_sgd_cmd = app.add_subcommand("fit-sgd", "fit by constrained SGD (precision form)");
    add_common(fit_sgd_cmd);
    add_data(fit_sgd_cmd, true);
    fit_sgd_cmd->add_option("--k", o.k, "number of components")->required();
    fit_sgd_cmd->add_option("--m", o.m, "latent dimension")->required();
    fit_sgd_cmd->add_option("--epochs1", o.sgd.epochs_phase1, "phase-one epochs (means only)");
    fit_sgd_cmd->add_option("--epochs2", o.sgd.epochs_phase2, "phase-two epochs (all parameters)");
    fit_sgd_cmd->add_option("--batch", o.sgd.batch_size, "mini-batch size");
    fit_sgd_cmd->add_option("--lr", o.sgd.learning_rate, "learning rate");
    fit_sgd_cmd->add_option("--dmax", o.sgd.d_max, "upper clip for diagonal precisions");
    fit_sgd_cmd->add_option("--mmin", o.sgd.m_min, "eigenvalue floor for M");
    fit_sgd_cmd->add_option("--minit", o.sgd.m_init, "initial M = (1 - minit) I");
    fit_sgd_cmd->add_option("--trace", o.trace, "write the per-epoch log-likelihood here");

    auto* sample_cmd = app.add_subcommand("sample", "draw samples from a model (CSV, or PGM grid with --image-shape)");
    add_common(sample_cmd);
    sample_cmd->add_option("--model", o.model, "model file")->required();
    sample_cmd->add_option("--n", o.n, "number of samples")->required();
    sample_cmd->add_option("--component", o.component, "sample only from this component");
    sample_cmd->add_option("--image-shape", o.image_shape, "RxC; write a PGM grid instead of CSV");
    sample_cmd->add_option("--range", o.range, "pixel value range lo,hi (default 0,1)");

    auto* score_cmd = app.add_subcommand("score", "per-sample log-likelihoods, one per line");
    add_common(score_cmd);
    add_data(score_cmd, true);
    score_cmd->add_option("--model", o.model, "model file")->required();

    auto* auc_cmd = app.add_subcommand("auc", "ROC-AUC of inlier vs outlier log-likelihoods");
    add_common(auc_cmd);
    add_data(auc_cmd, false);
    auc_cmd->add_option("--model", o.model, "model file");
    auc_cmd->add_option("--inlier-data", o.inlier_data, "inlier dataset");
    auc_cmd->add_option("--outlier-data", o.outlier_data, "outlier dataset");
    auc_cmd->add_option("--inlier-classes", o.inlier_classes, "inlier labels within --data (or filter for --inlier-data)");
    auc_cmd->add_option("--outlier-classes", o.outlier_classes, "outlier labels within --data (or filter for --outlier-data)");
    auc_cmd->add_option("--scores-a", o.scores_a, "file of inlier scores");
    auc_cmd->add_option("--scores-b", o.scores_b, "file of outlier scores");

    auto* export_cmd = app.add_subcommand("export", "write means, loadings or noise as PGM tile grids");
    add_common(export_cmd);
    export_cmd->add_option("--model", o.model, "model file")->required();
    export_cmd->add_option("--what", o.what, "means, loadings or noise")->check(CLI::IsMember({"means", "loadings", "noise"}));
    export_cmd->add_option("--image-shape", o.image_shape, "RxC")->required();
    export_cmd->add_option("--range", o.range, "pixel value range lo,hi");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return 0;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << '\n' << "run with --help for usage\n";
        return 2;
    }

    try {
        if (fit_em_cmd->parsed()) return run_fit_em(o, out);
        if (fit_sgd_cmd->parsed()) return run_fit_sgd(o, out);
        if (sample_cmd->parsed()) return run_sample(o, out);
        if (score_cmd->parsed()) return run_score(o, out);
        if (auc_cmd->parsed()) return run_auc(o, out);
        if (export_cmd->parsed()) return run_export(o, out);
    } catch (const IoError& e) {
        err << "error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return 1;
    }
    return 2;
}

inline int main_dispatch(const std::vector<std::string>& args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    std::vector<const char*> argv;
    argv.reserve(args.size() + 1);
    argv.push_back("mfa");
    for (const auto& a : args) argv.push_back(a.c_str());
    return main_dispatch(static_cast<int>(argv.size()), argv.data(), out, err);
}

} // namespace mfa::cli
