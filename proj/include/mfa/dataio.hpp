#pragma once

// Dataset ingestion (IDX, CSV), synthetic data, model files and PGM export.

#include "mfa/model.hpp"
#include "mfa/types.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iterator>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <utility>
#include <variant>
#include <vector>

namespace mfa {

struct Dataset {
    DataMatrix data;
    std::optional<std::vector<int>> labels;
    std::optional<std::pair<Index, Index>> source_shape; // rows, cols for image data
};

namespace detail {

inline std::vector<unsigned char> read_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path + "'");
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::uint32_t read_be32(const std::vector<unsigned char>& bytes, std::size_t offset) {
    return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
           (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

inline std::string hex32(std::uint32_t v) {
    std::ostringstream os;
    os << "0x" << std::hex;
    os.width(8);
    os.fill('0');
    os << v;
    return os.str();
}

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

inline std::optional<double> parse_double(std::string_view s) {
    s = trim(s);
    if (!s.empty() && s.front() == '+') s.remove_prefix(1);
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size() || s.empty()) return std::nullopt;
    return v;
}

inline std::vector<std::string_view> split(std::string_view line, char sep) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const auto pos = line.find(sep, start);
        out.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return out;
}

} // namespace detail

/// Parses an IDX image file (magic 0x00000803, unsigned bytes, N x rows x cols)
/// and an optional IDX label file (magic 0x00000801). Pixels are divided by 255.
/// Gzip-compressed files must be decompressed first.
inline Dataset load_idx(const std::string& image_path, const std::optional<std::string>& label_path = std::nullopt) {
    const auto bytes = detail::read_bytes(image_path);
    if (bytes.size() < 16) throw ParseError(image_path + ": truncated IDX header");
    const std::uint32_t magic = detail::read_be32(bytes, 0);
    if (magic != 0x00000803) throw ParseError(image_path + ": unexpected magic " + detail::hex32(magic) + " (expected 0x00000803)");
    const std::uint64_t n = detail::read_be32(bytes, 4);
    const std::uint64_t rows = detail::read_be32(bytes, 8);
    const std::uint64_t cols = detail::read_be32(bytes, 12);
    const std::uint64_t expected = n * rows * cols;
    if (bytes.size() - 16 != expected)
        throw ParseError(image_path + ": header declares " + std::to_string(expected) + " pixel bytes, file holds " +
                         std::to_string(bytes.size() - 16));

    Dataset out;
    const auto d = static_cast<Index>(rows * cols);
    out.data.resize(static_cast<Index>(n), d);
    for (std::uint64_t i = 0; i < n; ++i)
        for (Index j = 0; j < d; ++j) out.data(static_cast<Index>(i), j) = bytes[16 + i * static_cast<std::uint64_t>(d) + static_cast<std::uint64_t>(j)] / 255.0;
    out.source_shape = std::pair<Index, Index>{static_cast<Index>(rows), static_cast<Index>(cols)};

    if (label_path) {
        const auto lb = detail::read_bytes(*label_path);
        if (lb.size() < 8) throw ParseError(*label_path + ": truncated IDX header");
        const std::uint32_t lmagic = detail::read_be32(lb, 0);
        if (lmagic != 0x00000801) throw ParseError(*label_path + ": unexpected magic " + detail::hex32(lmagic) + " (expected 0x00000801)");
        const std::uint64_t ln = detail::read_be32(lb, 4);
        if (lb.size() - 8 != ln)
            throw ParseError(*label_path + ": header declares " + std::to_string(ln) + " labels, file holds " + std::to_string(lb.size() - 8));
        if (ln != n) throw ParseError("image/label count mismatch: " + std::to_string(n) + " images, " + std::to_string(ln) + " labels");
        std::vector<int> labels(static_cast<std::size_t>(ln));
        for (std::uint64_t i = 0; i < ln; ++i) labels[static_cast<std::size_t>(i)] = lb[8 + i];
        out.labels = std::move(labels);
    }
    return out;
}

/// Comma-separated numeric rows. With a header, a final column named "label" is
/// read as integer labels instead of a feature.
inline Dataset load_csv(const std::string& path, bool has_header) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open '" + path + "'");

    std::vector<std::vector<double>> rows;
    std::vector<int> labels;
    bool label_column = false;
    std::optional<std::size_t> width;
    std::string line;
    std::size_t line_no = 0;
    bool header_pending = has_header;
    while (std::getline(in, line)) {
        ++line_no;
        const auto view = detail::trim(line);
        if (view.empty()) continue;
        const auto cells = detail::split(view, ',');
        if (header_pending) {
            header_pending = false;
            label_column = detail::trim(cells.back()) == "label";
            width = cells.size();
            continue;
        }
        if (width && cells.size() != *width)
            throw ParseError(path + ": line " + std::to_string(line_no) + ": expected " + std::to_string(*width) + " fields, found " +
                             std::to_string(cells.size()));
        width = cells.size();
        std::vector<double> values;
        values.reserve(cells.size());
        for (std::size_t c = 0; c < cells.size(); ++c) {
            const auto v = detail::parse_double(cells[c]);
            if (!v) throw ParseError(path + ": line " + std::to_string(line_no) + ": non-numeric value '" + std::string(detail::trim(cells[c])) + "'");
            values.push_back(*v);
        }
        if (label_column) {
            const double lv = values.back();
            if (lv != std::floor(lv)) throw ParseError(path + ": line " + std::to_string(line_no) + ": label is not an integer");
            labels.push_back(static_cast<int>(lv));
            values.pop_back();
        }
        rows.push_back(std::move(values));
    }

    Dataset out;
    const std::size_t d = width ? *width - (label_column ? 1 : 0) : 0;
    out.data.resize(static_cast<Index>(rows.size()), static_cast<Index>(d));
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t j = 0; j < d; ++j) out.data(static_cast<Index>(i), static_cast<Index>(j)) = rows[i][j];
    if (label_column) out.labels = std::move(labels);
    return out;
}

/// Writes rows as CSV, with a header and an optional trailing label column.
inline void save_csv(const std::string& path, const DataMatrix& data, const std::vector<int>* labels = nullptr) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write '" + path + "'");
    std::array<char, 32> buf{};
    for (Index j = 0; j < data.cols(); ++j) out << (j ? "," : "") << 'x' << j;
    if (labels) out << (data.cols() ? "," : "") << "label";
    out << '\n';
    for (Index i = 0; i < data.rows(); ++i) {
        for (Index j = 0; j < data.cols(); ++j) {
            const auto res = std::to_chars(buf.data(), buf.data() + buf.size(), data(i, j));
            out << (j ? "," : "") << std::string_view(buf.data(), static_cast<std::size_t>(res.ptr - buf.data()));
        }
        if (labels) out << (data.cols() ? "," : "") << (*labels)[static_cast<std::size_t>(i)];
        out << '\n';
    }
    if (!out) throw IoError("failed writing '" + path + "'");
}

/// Keeps only rows whose label is in `classes`.
inline Dataset filter_classes(const Dataset& ds, const std::set<int>& classes) {
    if (!ds.labels) throw Error("class filtering requires labels");
    std::vector<Index> keep;
    for (std::size_t i = 0; i < ds.labels->size(); ++i)
        if (classes.count((*ds.labels)[i])) keep.push_back(static_cast<Index>(i));
    Dataset out;
    out.source_shape = ds.source_shape;
    out.data.resize(static_cast<Index>(keep.size()), ds.data.cols());
    std::vector<int> labels;
    for (std::size_t i = 0; i < keep.size(); ++i) {
        out.data.row(static_cast<Index>(i)) = ds.data.row(keep[i]);
        labels.push_back((*ds.labels)[static_cast<std::size_t>(keep[i])]);
    }
    out.labels = std::move(labels);
    return out;
}

/// Draws n labelled samples from a ground-truth model.
inline Dataset synth_generate(const MfaModel& truth, Index n, std::uint64_t seed) {
    auto s = sample(truth, n, seed);
    Dataset out;
    out.data = std::move(s.data);
    out.labels = std::move(s.labels);
    return out;
}

// ---------------------------------------------------------------------------
// Model files
//
// Line-oriented text, one key per line followed by its values. Floats use the
// shortest representation that reads back to the same double.
//
//   mfa-model 1
//   parameterization covariance|precision
//   components K
//   dim D
//   latent M
//   psi_mode free|tied|isotropic          (covariance)
//   m_min <v> / d_max <v>                 (precision)
//   component <k>
//   weight <v>
//   mean <D values>
//   noise <D values> / sqrt_prec <D values>
//   loading <D*M values, row-major> / prec_loading <...>
// ---------------------------------------------------------------------------

inline constexpr int kModelFormatVersion = 1;

using AnyModel = std::variant<MfaModel, PrecisionModel>;

namespace detail {

inline void write_values(std::ostream& out, std::string_view key, const double* data, Index count) {
    std::array<char, 32> buf{};
    out << key;
    for (Index i = 0; i < count; ++i) {
        const auto res = std::to_chars(buf.data(), buf.data() + buf.size(), data[i]);
        out << ' ' << std::string_view(buf.data(), static_cast<std::size_t>(res.ptr - buf.data()));
    }
    out << '\n';
}

inline void write_values(std::ostream& out, std::string_view key, double v) { write_values(out, key, &v, 1); }

inline void write_row_major(std::ostream& out, std::string_view key, const Matrix& m) {
    const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm = m;
    write_values(out, key, rm.data(), rm.size());
}

inline std::ofstream open_for_write(const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write '" + path + "'");
    return out;
}

class ModelReader {
public:
    explicit ModelReader(const std::string& path) : path_(path), in_(path) {
        if (!in_) throw IoError("cannot open '" + path + "'");
    }

    /// Next non-empty line split on whitespace; the first token must equal `key`.
    std::vector<std::string> expect(std::string_view key) {
        std::string line;
        while (std::getline(in_, line)) {
            ++line_no_;
            std::istringstream ss(line);
            std::vector<std::string> tokens{std::istream_iterator<std::string>(ss), std::istream_iterator<std::string>()};
            if (tokens.empty()) continue;
            if (tokens.front() != key) fail("expected '" + std::string(key) + "', found '" + tokens.front() + "'");
            tokens.erase(tokens.begin());
            return tokens;
        }
        fail("unexpected end of file, expected '" + std::string(key) + "'");
    }

    std::string word(std::string_view key) {
        auto t = expect(key);
        if (t.size() != 1) fail("'" + std::string(key) + "' takes exactly one value");
        return t.front();
    }

    long integer(std::string_view key) {
        const auto w = word(key);
        long v = 0;
        const auto [ptr, ec] = std::from_chars(w.data(), w.data() + w.size(), v);
        if (ec != std::errc() || ptr != w.data() + w.size() || v < 0) fail("bad integer '" + w + "'");
        return v;
    }

    Vector values(std::string_view key, Index count) {
        const auto t = expect(key);
        if (static_cast<Index>(t.size()) != count)
            fail("'" + std::string(key) + "' needs " + std::to_string(count) + " values, found " + std::to_string(t.size()));
        Vector out(count);
        for (Index i = 0; i < count; ++i) {
            const auto v = parse_double(t[static_cast<std::size_t>(i)]);
            if (!v) fail("bad number '" + t[static_cast<std::size_t>(i)] + "'");
            out[i] = *v;
        }
        return out;
    }

    double scalar(std::string_view key) { return values(key, 1)[0]; }

    Matrix row_major(std::string_view key, Index rows, Index cols) {
        const Vector v = values(key, rows * cols);
        Matrix out(rows, cols);
        for (Index i = 0; i < rows; ++i)
            for (Index j = 0; j < cols; ++j) out(i, j) = v[i * cols + j];
        return out;
    }

    [[noreturn]] void fail(const std::string& msg) const {
        throw ParseError(path_ + ": line " + std::to_string(line_no_) + ": " + msg);
    }

private:
    std::string path_;
    std::ifstream in_;
    std::size_t line_no_ = 0;
};

inline void write_header(std::ostream& out, std::string_view kind, Index k, Index d, Index m) {
    out << "mfa-model " << kModelFormatVersion << '\n'
        << "parameterization " << kind << '\n'
        << "components " << k << '\n'
        << "dim " << d << '\n'
        << "latent " << m << '\n';
}

} // namespace detail

inline void save_model(const MfaModel& model, const std::string& path) {
    auto out = detail::open_for_write(path);
    detail::write_header(out, "covariance", model.num_components(), model.dim(), model.latent_dim());
    out << "psi_mode " << to_string(model.psi_mode) << '\n';
    for (std::size_t k = 0; k < model.components.size(); ++k) {
        const auto& c = model.components[k];
        out << "component " << k << '\n';
        detail::write_values(out, "weight", c.weight);
        detail::write_values(out, "mean", c.mean.data(), c.mean.size());
        detail::write_values(out, "noise", c.noise.data(), c.noise.size());
        detail::write_row_major(out, "loading", c.loading);
    }
    if (!out) throw IoError("failed writing '" + path + "'");
}

inline void save_model(const PrecisionModel& model, const std::string& path) {
    auto out = detail::open_for_write(path);
    detail::write_header(out, "precision", model.num_components(), model.dim(), model.latent_dim());
    detail::write_values(out, "m_min", model.constraints.m_min);
    detail::write_values(out, "d_max", model.constraints.d_max);
    for (std::size_t k = 0; k < model.components.size(); ++k) {
        const auto& c = model.components[k];
        out << "component " << k << '\n';
        detail::write_values(out, "weight", c.weight);
        detail::write_values(out, "mean", c.mean.data(), c.mean.size());
        detail::write_values(out, "sqrt_prec", c.sqrt_prec.data(), c.sqrt_prec.size());
        detail::write_row_major(out, "prec_loading", c.prec_loading);
    }
    if (!out) throw IoError("failed writing '" + path + "'");
}

inline void save_model(const AnyModel& model, const std::string& path) {
    std::visit([&](const auto& m) { save_model(m, path); }, model);
}

/// Reads a model file of either parameterization and validates its invariants.
inline AnyModel load_model(const std::string& path) {
    detail::ModelReader r(path);
    const long version = r.integer("mfa-model");
    if (version != kModelFormatVersion)
        throw ParseError(path + ": unsupported model format version " + std::to_string(version));
    const std::string kind = r.word("parameterization");
    if (kind != "covariance" && kind != "precision") r.fail("unknown parameterization '" + kind + "'");
    const Index k = r.integer("components"), d = r.integer("dim"), m = r.integer("latent");
    if (k < 1) r.fail("model needs at least one component");

    auto check_index = [&](std::size_t expected) {
        if (r.integer("component") != static_cast<long>(expected)) r.fail("components out of order");
    };

    try {
        if (kind == "covariance") {
            MfaModel model;
            model.psi_mode = parse_psi_mode(r.word("psi_mode"));
            for (Index c = 0; c < k; ++c) {
                check_index(static_cast<std::size_t>(c));
                MfaComponent comp;
                comp.weight = r.scalar("weight");
                comp.mean = r.values("mean", d);
                comp.noise = r.values("noise", d);
                comp.loading = r.row_major("loading", d, m);
                model.components.push_back(std::move(comp));
            }
            validate(model);
            return model;
        }
        PrecisionModel model;
        model.constraints.m_min = r.scalar("m_min");
        model.constraints.d_max = r.scalar("d_max");
        for (Index c = 0; c < k; ++c) {
            check_index(static_cast<std::size_t>(c));
            PrecisionComponent comp;
            comp.weight = r.scalar("weight");
            comp.mean = r.values("mean", d);
            comp.sqrt_prec = r.values("sqrt_prec", d);
            comp.prec_loading = r.row_major("prec_loading", d, m);
            model.components.push_back(std::move(comp));
        }
        validate(model);
        return model;
    } catch (const InvalidModelError& e) {
        throw InvalidModelError(path + ": invariant violation: " + e.what());
    }
}

// ---------------------------------------------------------------------------
// Image export
// ---------------------------------------------------------------------------

struct GridLayout {
    Index tile_rows = 0; // tiles per column
    Index tile_cols = 0; // tiles per row
};

/// Near-square arrangement: ceil(sqrt(n)) tiles per row.
inline GridLayout grid_layout(Index n) {
    if (n <= 0) return {0, 0};
    auto cols = static_cast<Index>(std::ceil(std::sqrt(static_cast<double>(n))));
    while (cols * cols < n) ++cols;
    while ((cols - 1) * (cols - 1) >= n) --cols;
    return {(n + cols - 1) / cols, cols};
}

/// Writes each row of `rows`, reshaped row-major to shape (r, c), as one tile of a
/// binary PGM (P5, maxval 255). Values map linearly from [lo, hi] to [0, 255] and
/// are clipped; unused tiles stay black.
inline void write_image_grid(const DataMatrix& rows, std::pair<Index, Index> shape, const std::string& path,
                             std::pair<double, double> value_range) {
    const auto [r, c] = shape;
    if (r <= 0 || c <= 0 || rows.cols() != r * c)
        throw DimensionError("image shape " + std::to_string(r) + "x" + std::to_string(c) + " does not match vector length " +
                             std::to_string(rows.cols()));
    const auto [lo, hi] = value_range;
    if (!(hi > lo)) throw Error("image value range must satisfy lo < hi");

    const auto layout = grid_layout(rows.rows());
    const Index width = std::max<Index>(layout.tile_cols, 1) * c;
    const Index height = std::max<Index>(layout.tile_rows, 1) * r;
    std::vector<unsigned char> pixels(static_cast<std::size_t>(width * height), 0);
    for (Index t = 0; t < rows.rows(); ++t) {
        const Index ty = t / layout.tile_cols, tx = t % layout.tile_cols;
        for (Index y = 0; y < r; ++y) {
            for (Index x = 0; x < c; ++x) {
                const double v = (rows(t, y * c + x) - lo) / (hi - lo);
                const double scaled = std::isnan(v) ? 0.0 : std::clamp(v, 0.0, 1.0) * 255.0;
                pixels[static_cast<std::size_t>((ty * r + y) * width + tx * c + x)] = static_cast<unsigned char>(std::lround(scaled));
            }
        }
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write '" + path + "'");
    out << "P5\n" << width << ' ' << height << "\n255\n";
    out.write(reinterpret_cast<const char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
    if (!out) throw IoError("failed writing '" + path + "'");
}

} // namespace mfa
