#pragma once

#include "trmf/data_model.hpp"
#include "trmf/errors.hpp"
#include "trmf/evaluation.hpp"
#include "trmf/forecasting.hpp"
#include "trmf/hierarchy.hpp"
#include "trmf/solver.hpp"

#include <json.hpp>

#include <Eigen/Eigenvalues>

#include <charconv>
#include <filesystem>
#include <fstream>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

namespace trmf::io {

using json = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// Text helpers

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

inline std::vector<std::string_view> split(std::string_view line, char sep = ',') {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    for (;;) {
        const auto pos = line.find(sep, start);
        out.push_back(trim(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return out;
}

inline std::optional<double> parse_double(std::string_view s) {
    double v = 0.0;
    if (!s.empty() && s.front() == '+') s.remove_prefix(1);
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size() || s.empty()) return std::nullopt;
    return v;
}

inline std::optional<std::int64_t> parse_int(std::string_view s) {
    std::int64_t v = 0;
    if (!s.empty() && s.front() == '+') s.remove_prefix(1);
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size() || s.empty()) return std::nullopt;
    return v;
}

/// Shortest decimal that parses back to the same double.
inline std::string format_double(double v) {
    char buf[64];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, ptr);
}

inline std::vector<std::string> read_lines(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) lines.push_back(line);
    if (in.bad()) throw IoError("read failure on '" + path.string() + "'");
    return lines;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
    out << text;
    if (!out) throw IoError("write failure on '" + path.string() + "'");
}

inline void ensure_directory(const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec || !std::filesystem::is_directory(dir)) {
        throw IoError("cannot create output directory '" + dir.string() + "': " + ec.message());
    }
}

// ---------------------------------------------------------------------------
// Long CSV: series_id,period,value

inline std::vector<Record> parse_long_csv(const std::vector<std::string>& lines, const std::string& origin) {
    if (lines.empty()) throw ValidationError(origin + ": empty file");
    const auto header = split(lines.front());
    if (header.size() != 3 || header[0] != "series_id" || header[1] != "period" || header[2] != "value") {
        throw ValidationError(origin + ":1: expected header 'series_id,period,value'");
    }
    std::vector<Record> records;
    for (std::size_t k = 1; k < lines.size(); ++k) {
        const auto line_no = std::to_string(k + 1);
        if (trim(lines[k]).empty()) continue;
        const auto f = split(lines[k]);
        if (f.size() != 3 || f[0].empty()) throw ValidationError(origin + ":" + line_no + ": malformed row");
        const auto period = parse_int(f[1]);
        if (!period) throw ValidationError(origin + ":" + line_no + ": non-integer period '" + std::string(f[1]) + "'");
        const auto value = parse_double(f[2]);
        if (!value) throw ValidationError(origin + ":" + line_no + ": cannot parse value '" + std::string(f[2]) + "'");
        records.push_back({std::string(f[0]), *period, *value});
    }
    return records;
}

inline Observations load_long_csv(const std::filesystem::path& path) {
    const auto records = parse_long_csv(read_lines(path), path.string());
    try {
        return assemble_observations(records);
    } catch (const ValidationError& e) {
        throw ValidationError(path.string() + ": " + e.what());
    }
}

inline std::string long_csv_text(const std::vector<Record>& records) {
    std::string out = "series_id,period,value\n";
    for (const auto& r : records) {
        out += r.series_id;
        out += ',';
        out += std::to_string(r.period);
        out += ',';
        out += format_double(r.value);
        out += '\n';
    }
    return out;
}

inline void write_long_csv(const std::filesystem::path& path, const std::vector<Record>& records) {
    write_text(path, long_csv_text(records));
}

// ---------------------------------------------------------------------------
// Hierarchy CSV: src_id,dst_id[,weight]

inline HierarchyGraph parse_hierarchy_csv(const std::vector<std::string>& lines, const std::string& origin) {
    if (lines.empty()) throw ValidationError(origin + ": empty file");
    const auto header = split(lines.front());
    const bool weighted = header.size() == 3;
    if ((header.size() != 2 && header.size() != 3) || header[0] != "src_id" || header[1] != "dst_id" ||
        (weighted && header[2] != "weight")) {
        throw ValidationError(origin + ":1: expected header 'src_id,dst_id[,weight]'");
    }
    HierarchyGraph g;
    for (std::size_t k = 1; k < lines.size(); ++k) {
        const auto line_no = std::to_string(k + 1);
        if (trim(lines[k]).empty()) continue;
        const auto f = split(lines[k]);
        if (f.size() != header.size() || f[0].empty() || f[1].empty()) {
            throw ValidationError(origin + ":" + line_no + ": malformed row");
        }
        double w = 1.0;
        if (weighted) {
            const auto parsed = parse_double(f[2]);
            if (!parsed) throw ValidationError(origin + ":" + line_no + ": cannot parse weight '" + std::string(f[2]) + "'");
            w = *parsed;
        }
        g.add_edge(std::string(f[0]), std::string(f[1]), w);
    }
    return g;
}

/// Loads and structurally validates; pass a catalog to also resolve every node.
inline ValidatedHierarchy load_hierarchy_csv(const std::filesystem::path& path,
                                             const SeriesCatalog* catalog = nullptr) {
    const auto graph = parse_hierarchy_csv(read_lines(path), path.string());
    try {
        return catalog ? validate_hierarchy(graph, *catalog) : validate_hierarchy(graph);
    } catch (const ValidationError& e) {
        throw ValidationError(path.string() + ": " + e.what());
    }
}

inline std::string hierarchy_csv_text(const HierarchyGraph& g) {
    std::string out = "src_id,dst_id,weight\n";
    for (const auto& e : g.edges) out += e.src + ',' + e.dst + ',' + format_double(e.weight) + '\n';
    return out;
}

// ---------------------------------------------------------------------------
// Run configuration

struct RunConfig {
    Hyperparams hyper;
    int horizon = 1;
    int folds = 1;
    std::optional<int> season_length;
    std::vector<std::string> methods{"trmf", "ar:2"};
    std::string input;
    std::string hierarchy;
    std::string model;
    std::string output = "out";
    bool clamp_nonnegative = false;

    void validate() const {
        hyper.validate();
        if (horizon < 1) throw ValidationError("horizon must be >= 1");
        if (folds < 1) throw ValidationError("folds must be >= 1");
        if (season_length && *season_length < 1) throw ValidationError("season_length must be >= 1");
        const std::vector<std::string> paths{input, hierarchy, model, output};
        for (std::size_t a = 0; a < paths.size(); ++a) {
            for (std::size_t b = a + 1; b < paths.size(); ++b) {
                if (!paths[a].empty() && paths[a] == paths[b]) {
                    throw ValidationError("configured paths must be distinct: '" + paths[a] + "' repeats");
                }
            }
        }
    }
};

inline std::vector<std::string> split_list(std::string_view s) {
    std::vector<std::string> out;
    for (auto f : split(s)) {
        if (!f.empty()) out.emplace_back(f);
    }
    return out;
}

/// Flat `key = value` text; '#' starts a comment. Unknown keys are errors.
inline RunConfig parse_config(const std::vector<std::string>& lines, const std::string& origin, RunConfig cfg = {}) {
    for (std::size_t k = 0; k < lines.size(); ++k) {
        const std::string where = origin + ":" + std::to_string(k + 1);
        std::string_view line = lines[k];
        if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string_view::npos) throw ValidationError(where + ": expected 'key = value'");
        const std::string key(trim(line.substr(0, eq)));
        const std::string_view value = trim(line.substr(eq + 1));

        auto real = [&] {
            const auto v = parse_double(value);
            if (!v) throw ValidationError(where + ": '" + key + "' expects a number");
            return *v;
        };
        auto integer = [&] {
            const auto v = parse_int(value);
            if (!v) throw ValidationError(where + ": '" + key + "' expects an integer");
            return *v;
        };
        auto boolean = [&] {
            if (value == "true" || value == "1") return true;
            if (value == "false" || value == "0") return false;
            throw ValidationError(where + ": '" + key + "' expects true or false");
        };

        if (key == "d") cfg.hyper.d = static_cast<int>(integer());
        else if (key == "p") cfg.hyper.p = static_cast<int>(integer());
        else if (key == "lambda_f") cfg.hyper.lambda_f = real();
        else if (key == "lambda_x") cfg.hyper.lambda_x = real();
        else if (key == "lambda_theta") cfg.hyper.lambda_theta = real();
        else if (key == "eta_x") cfg.hyper.eta_x = real();
        else if (key == "eta_f") cfg.hyper.eta_f = real();
        else if (key == "max_sweeps") cfg.hyper.max_sweeps = static_cast<int>(integer());
        else if (key == "tol") cfg.hyper.tol = real();
        else if (key == "seed") {
            const auto v = integer();
            if (v < 0) throw ValidationError(where + ": seed must be non-negative");
            cfg.hyper.seed = static_cast<std::uint64_t>(v);
        }
        else if (key == "horizon") cfg.horizon = static_cast<int>(integer());
        else if (key == "folds") cfg.folds = static_cast<int>(integer());
        else if (key == "season_length") cfg.season_length = static_cast<int>(integer());
        else if (key == "methods") cfg.methods = split_list(value);
        else if (key == "input") cfg.input = std::string(value);
        else if (key == "hierarchy") cfg.hierarchy = std::string(value);
        else if (key == "model") cfg.model = std::string(value);
        else if (key == "output") cfg.output = std::string(value);
        else if (key == "clamp_nonnegative") cfg.clamp_nonnegative = boolean();
        else throw ValidationError(where + ": unknown config key '" + key + "'");
    }
    return cfg;
}

inline RunConfig load_config(const std::filesystem::path& path, RunConfig defaults = {}) {
    return parse_config(read_lines(path), path.string(), std::move(defaults));
}

inline json hyper_to_json(const Hyperparams& h) {
    return json{{"d", h.d},
                {"p", h.p},
                {"lambda_f", h.lambda_f},
                {"lambda_x", h.lambda_x},
                {"lambda_theta", h.lambda_theta},
                {"eta_x", h.eta_x},
                {"eta_f", h.eta_f},
                {"max_sweeps", h.max_sweeps},
                {"tol", h.tol},
                {"seed", h.seed}};
}

inline Hyperparams hyper_from_json(const json& j) {
    Hyperparams h;
    h.d = j.at("d").get<int>();
    h.p = j.at("p").get<int>();
    h.lambda_f = j.at("lambda_f").get<double>();
    h.lambda_x = j.at("lambda_x").get<double>();
    h.lambda_theta = j.at("lambda_theta").get<double>();
    h.eta_x = j.at("eta_x").get<double>();
    h.eta_f = j.at("eta_f").get<double>();
    h.max_sweeps = j.at("max_sweeps").get<int>();
    h.tol = j.at("tol").get<double>();
    h.seed = j.at("seed").get<std::uint64_t>();
    return h;
}

inline json config_to_json(const RunConfig& c) {
    json j{{"hyper", hyper_to_json(c.hyper)},
           {"horizon", c.horizon},
           {"folds", c.folds},
           {"season_length", c.season_length ? json(*c.season_length) : json(nullptr)},
           {"methods", c.methods},
           {"input", c.input},
           {"hierarchy", c.hierarchy},
           {"model", c.model},
           {"output", c.output},
           {"clamp_nonnegative", c.clamp_nonnegative}};
    return j;
}

// ---------------------------------------------------------------------------
// Model persistence

inline json matrix_to_json(const Matrix& m) {
    json rows = json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        json row = json::array();
        for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
        rows.push_back(std::move(row));
    }
    return rows;
}

inline Matrix matrix_from_json(const json& j, Eigen::Index rows, Eigen::Index cols) {
    if (!j.is_array() || static_cast<Eigen::Index>(j.size()) != rows) throw ValidationError("matrix row count mismatch");
    Matrix m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r) {
        const auto& row = j[static_cast<std::size_t>(r)];
        if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != cols) {
            throw ValidationError("matrix column count mismatch");
        }
        for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = row[static_cast<std::size_t>(c)].get<double>();
    }
    return m;
}

struct SavedModel {
    FactorModel model;
    SeriesCatalog catalog;
    std::int64_t first_period = 0;
};

inline json model_to_json(const SavedModel& s) {
    const auto& m = s.model;
    return json{{"format", "trmf-model-1"},
                {"series", s.catalog.ids()},
                {"first_period", s.first_period},
                {"periods", m.X.rows()},
                {"hyper", hyper_to_json(m.hyper)},
                {"X", matrix_to_json(m.X)},
                {"F", matrix_to_json(m.F)},
                {"theta", matrix_to_json(m.theta)},
                {"objective_trace", m.objective_trace}};
}

inline SavedModel load_model(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open model '" + path.string() + "'");
    try {
        const json j = json::parse(in);
        if (j.at("format") != "trmf-model-1") throw ValidationError("unrecognized model format");
        SavedModel s;
        s.catalog = SeriesCatalog(j.at("series").get<std::vector<std::string>>());
        s.first_period = j.at("first_period").get<std::int64_t>();
        s.model.hyper = hyper_from_json(j.at("hyper"));
        const auto T = j.at("periods").get<Eigen::Index>();
        const Eigen::Index d = s.model.hyper.d;
        const Eigen::Index n = static_cast<Eigen::Index>(s.catalog.size());
        s.model.X = matrix_from_json(j.at("X"), T, d);
        s.model.F = matrix_from_json(j.at("F"), d, n);
        s.model.theta = matrix_from_json(j.at("theta"), d, s.model.hyper.p);
        s.model.objective_trace = j.at("objective_trace").get<std::vector<double>>();
        return s;
    } catch (const json::exception& e) {
        throw ValidationError(path.string() + ": malformed model file: " + e.what());
    } catch (const ValidationError& e) {
        throw ValidationError(path.string() + ": " + e.what());
    }
}

inline json fit_report_to_json(const std::string& label, const FitReport& r, const std::vector<double>& trace) {
    // wallclock is deliberately omitted so repeated runs emit identical bytes
    return json{{"label", label},
                {"sweeps_run", r.sweeps_run},
                {"final_objective", r.final_objective},
                {"converged", r.converged},
                {"warnings", r.warnings},
                {"objective_trace", trace}};
}

// ---------------------------------------------------------------------------
// Synthetic data

struct SyntheticSpec {
    int T = 100;
    int n = 20;
    int d_true = 3;
    int p_true = 3;
    double noise_sigma = 0.01;
    double mask_density = 1.0;
    std::uint64_t seed = 0;
    std::vector<int> branching;  // per level below the root; empty means flat

    void validate() const {
        if (T < 2) throw ValidationError("synthetic T must be >= 2");
        if (d_true < 1) throw ValidationError("d_true must be >= 1");
        if (p_true < 1 || p_true >= T) throw ValidationError("p_true must satisfy 1 <= p_true < T");
        if (!(noise_sigma >= 0)) throw ValidationError("noise_sigma must be >= 0");
        if (!(mask_density > 0 && mask_density <= 1)) throw ValidationError("mask_density must lie in (0, 1]");
        if (branching.empty() && n < 1) throw ValidationError("synthetic n must be >= 1");
        for (int b : branching) {
            if (b < 1) throw ValidationError("branching factors must be >= 1");
        }
    }
};

struct SyntheticData {
    ObservationMatrix y;
    SeriesCatalog catalog;
    Matrix X;      // T x d_true
    Matrix F;      // d_true x n (aggregate columns are child-sums of leaf loadings)
    Matrix theta;  // d_true x p_true
    std::optional<HierarchyGraph> hierarchy;
    Matrix clean;  // X F before noise, all cells
};

/// Largest modulus among the roots of z^p - theta_1 z^{p-1} - ... - theta_p.
inline double ar_spectral_radius(const Vector& theta) {
    const Eigen::Index p = theta.size();
    Matrix companion = Matrix::Zero(p, p);
    companion.row(0) = theta.transpose();
    for (Eigen::Index k = 1; k < p; ++k) companion(k, k - 1) = 1.0;
    return Eigen::EigenSolver<Matrix>(companion, false).eigenvalues().cwiseAbs().maxCoeff();
}

inline SyntheticData generate_synthetic(const SyntheticSpec& spec) {
    spec.validate();
    constexpr double kStabilityBound = 0.95;
    constexpr int kBurnIn = 200;
    std::mt19937_64 rng(spec.seed);
    std::normal_distribution<double> normal(0.0, 1.0);

    // Hierarchy nodes in level-major order; leaves last.
    std::vector<std::string> ids;
    HierarchyGraph graph;
    std::vector<std::vector<int>> children;
    int leaves = spec.n;
    if (!spec.branching.empty()) {
        ids.push_back("total");
        children.emplace_back();
        std::vector<int> frontier{0};
        for (int b : spec.branching) {
            std::vector<int> next;
            for (int parent : frontier) {
                for (int c = 0; c < b; ++c) {
                    const int id = static_cast<int>(ids.size());
                    ids.push_back((parent == 0 ? std::string("s") : ids[static_cast<std::size_t>(parent)] + "_") +
                                  std::to_string(c));
                    children.emplace_back();
                    children[static_cast<std::size_t>(parent)].push_back(id);
                    graph.add_edge(ids[static_cast<std::size_t>(parent)], ids.back());
                    next.push_back(id);
                }
            }
            frontier = std::move(next);
        }
        leaves = static_cast<int>(frontier.size());
    } else {
        for (int i = 0; i < spec.n; ++i) ids.push_back("s" + std::to_string(i));
    }
    const int m = static_cast<int>(ids.size());
    const int first_leaf = m - leaves;

    SyntheticData out;
    out.theta.resize(spec.d_true, spec.p_true);
    for (int j = 0; j < spec.d_true; ++j) {
        Vector th(spec.p_true);
        for (int l = 0; l < spec.p_true; ++l) th(l) = 2.0 * detail::centered_uniform(rng);
        const double rho = ar_spectral_radius(th);
        if (rho > kStabilityBound) {
            const double s = kStabilityBound / rho;
            double scale = 1.0;
            for (int l = 0; l < spec.p_true; ++l) {
                scale *= s;
                th(l) *= scale;
            }
        }
        out.theta.row(j) = th.transpose();
    }

    out.X.resize(spec.T, spec.d_true);
    for (int j = 0; j < spec.d_true; ++j) {
        Vector path = Vector::Zero(kBurnIn + spec.T);
        for (Eigen::Index t = 0; t < path.size(); ++t) {
            double v = normal(rng);
            for (int l = 1; l <= spec.p_true && t - l >= 0; ++l) v += out.theta(j, l - 1) * path(t - l);
            path(t) = v;
        }
        out.X.col(j) = path.tail(spec.T);
    }

    Matrix leaf_f(spec.d_true, leaves);
    for (Eigen::Index k = 0; k < leaf_f.size(); ++k) leaf_f.data()[k] = normal(rng);
    Matrix leaf_noise(spec.T, leaves);
    for (Eigen::Index k = 0; k < leaf_noise.size(); ++k) leaf_noise.data()[k] = spec.noise_sigma * normal(rng);

    // Aggregate columns: sums over descendant leaves, processed bottom-up.
    out.F = Matrix::Zero(spec.d_true, m);
    Matrix noise = Matrix::Zero(spec.T, m);
    out.F.rightCols(leaves) = leaf_f;
    noise.rightCols(leaves) = leaf_noise;
    for (int v = first_leaf - 1; v >= 0; --v) {
        for (int c : children[static_cast<std::size_t>(v)]) {
            out.F.col(v) += out.F.col(c);
            noise.col(v) += noise.col(c);
        }
    }
    out.clean = out.X * out.F;
    Matrix values = out.clean + noise;

    MaskMatrix mask = MaskMatrix::Ones(spec.T, m);
    if (spec.mask_density < 1.0) {
        for (Eigen::Index k = 0; k < mask.size(); ++k) {
            mask.data()[k] = detail::centered_uniform(rng) + 0.5 < spec.mask_density ? 1 : 0;
        }
    }
    out.y = ObservationMatrix(std::move(values), std::move(mask), 0);
    out.catalog = SeriesCatalog(ids);
    if (!spec.branching.empty()) out.hierarchy = std::move(graph);
    return out;
}

// ---------------------------------------------------------------------------
// Method factories and grid search

/// TRMF fit on the training slice followed by dynamic forecasts.
inline MethodSpec make_trmf_method(std::string name, Hyperparams hyper, std::optional<LoadingGraph> graph = std::nullopt,
                                   ForecastOptions fopts = {}) {
    return {std::move(name), [hyper, graph = std::move(graph), fopts](const ObservationMatrix& train, int h) {
                auto res = fit(train, hyper, graph ? &*graph : nullptr);
                MethodForecast out;
                out.values = forecast_values(res.model, h, fopts);
                out.objective_trace = res.model.objective_trace;
                out.report = std::move(res.report);
                return out;
            }};
}

inline MethodSpec make_ar_method(std::string name, int order, ForecastOptions fopts = {}) {
    return {std::move(name), [order, fopts](const ObservationMatrix& train, int h) {
                MethodForecast out;
                out.values = forecast_ar_baseline(fit_ar_baseline(train, order), h);
                if (fopts.clamp_nonnegative) out.values = out.values.cwiseMax(0.0);
                return out;
            }};
}

/// Parses "trmf" or "ar" / "ar:<order>" into a method spec.
inline MethodSpec make_method(const std::string& token, const Hyperparams& hyper,
                              const std::optional<LoadingGraph>& graph, ForecastOptions fopts, int* order_out) {
    if (token == "trmf") {
        *order_out = hyper.p;
        return make_trmf_method(token, hyper, graph, fopts);
    }
    if (token == "ar" || token.rfind("ar:", 0) == 0) {
        int order = 2;
        if (token.size() > 3) {
            const auto v = parse_int(std::string_view(token).substr(3));
            if (!v || *v < 1) throw ValidationError("bad AR order in method '" + token + "'");
            order = static_cast<int>(*v);
        }
        *order_out = order;
        return make_ar_method(token, order, fopts);
    }
    throw ValidationError("unknown method '" + token + "' (expected trmf, ar, or ar:<order>)");
}

inline std::string grid_cell_name(int d, int p) { return "trmf_d" + std::to_string(d) + "_p" + std::to_string(p); }

struct GridReport {
    std::vector<int> d_values;
    std::vector<int> p_values;
    Matrix minmax_median;  // |p| x |d|, mean over forecast steps of per-step medians
    Matrix mean_smape;     // |p| x |d|, raw SMAPE mean over all scored cells
    Eigen::Index best_p_index = 0;
    Eigen::Index best_d_index = 0;
    BacktestResult backtest;
    std::vector<MedianScore> summary;
};

/**
 * One TRMF method per (d, p) cell, all scored together in a single rolling
 * backtest so the min-max scaling runs across the grid's models. The cell
 * score is the mean over forecast steps of the per-step min-max median;
 * ties for the argmin fall to the lower raw mean SMAPE.
 */
inline GridReport grid_search(const ObservationMatrix& y, const SeriesCatalog& catalog, const std::vector<int>& d_values,
                              const std::vector<int>& p_values, const Hyperparams& base, const BacktestConfig& bcfg,
                              const std::optional<LoadingGraph>& graph = std::nullopt) {
    if (d_values.empty() || p_values.empty()) throw ValidationError("grid needs at least one d and one p value");
    GridReport g;
    g.d_values = d_values;
    g.p_values = p_values;
    std::vector<MethodSpec> methods;
    int max_p = 0;
    for (int p : p_values) {
        if (p < 1 || p >= y.periods()) {
            throw ValidationError("grid AR order p=" + std::to_string(p) + " must satisfy 1 <= p < T");
        }
        max_p = std::max(max_p, p);
        for (int d : d_values) {
            Hyperparams h = base;
            h.d = d;
            h.p = p;
            h.validate();
            methods.push_back(make_trmf_method(grid_cell_name(d, p), h, graph));
        }
    }
    BacktestConfig cfg = bcfg;
    cfg.max_order = std::max(cfg.max_order, max_p);
    g.backtest = rolling_backtest(y, catalog, methods, cfg);
    g.summary = minmax_median(g.backtest.scores, GroupKey::Step);
    const auto means = mean_over_groups(g.summary, g.backtest.scores.methods());

    const auto P = static_cast<Eigen::Index>(p_values.size());
    const auto D = static_cast<Eigen::Index>(d_values.size());
    g.minmax_median.resize(P, D);
    g.mean_smape = Matrix::Zero(P, D);
    Matrix counts = Matrix::Zero(P, D);
    std::map<std::string, std::pair<Eigen::Index, Eigen::Index>> where;
    for (Eigen::Index a = 0; a < P; ++a) {
        for (Eigen::Index b = 0; b < D; ++b) {
            where[grid_cell_name(d_values[static_cast<std::size_t>(b)], p_values[static_cast<std::size_t>(a)])] = {a, b};
        }
    }
    for (const auto& [name, score] : means) {
        const auto [a, b] = where.at(name);
        g.minmax_median(a, b) = score;
    }
    for (const auto& r : g.backtest.scores.rows()) {
        const auto [a, b] = where.at(r.method);
        g.mean_smape(a, b) += r.smape_percent;
        counts(a, b) += 1.0;
    }
    g.mean_smape = g.mean_smape.cwiseQuotient(counts.cwiseMax(1.0));

    for (Eigen::Index a = 0; a < P; ++a) {
        for (Eigen::Index b = 0; b < D; ++b) {
            const double cur = g.minmax_median(a, b);
            const double best = g.minmax_median(g.best_p_index, g.best_d_index);
            if (cur < best || (cur == best && g.mean_smape(a, b) < g.mean_smape(g.best_p_index, g.best_d_index))) {
                g.best_p_index = a;
                g.best_d_index = b;
            }
        }
    }
    return g;
}

inline json grid_to_json(const GridReport& g) {
    return json{{"d_values", g.d_values},
                {"p_values", g.p_values},
                {"minmax_median", matrix_to_json(g.minmax_median)},
                {"mean_smape", matrix_to_json(g.mean_smape)},
                {"best", {{"d", g.d_values[static_cast<std::size_t>(g.best_d_index)]},
                          {"p", g.p_values[static_cast<std::size_t>(g.best_p_index)]},
                          {"score", g.minmax_median(g.best_p_index, g.best_d_index)}}}};
}

// ---------------------------------------------------------------------------
// Outputs

inline std::string scores_csv_text(const ScoreTable& scores) {
    std::string out = "series_id,period,step,method,smape\n";
    for (const auto& r : scores.rows()) {
        out += r.series_id + ',' + std::to_string(r.period) + ',' + std::to_string(r.step) + ',' + r.method + ',' +
               format_double(r.smape_percent) + '\n';
    }
    return out;
}

inline json summary_table_json(const std::vector<MedianScore>& summary, const std::string& group_name) {
    json rows = json::array();
    for (const auto& s : summary) {
        rows.push_back(json{{group_name, s.group}, {"method", s.method}, {"median", s.median}, {"cells", s.cells}});
    }
    return rows;
}

/// Writes forecasts.csv, scores.csv and summary.json into outdir.
inline void write_outputs(const std::vector<Record>& forecasts, const ScoreTable& scores, const json& summary,
                          const std::filesystem::path& outdir) {
    ensure_directory(outdir);
    write_long_csv(outdir / "forecasts.csv", forecasts);
    write_text(outdir / "scores.csv", scores_csv_text(scores));
    write_text(outdir / "summary.json", summary.dump(2) + "\n");
}

} // namespace trmf::io
