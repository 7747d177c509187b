#pragma once

#include "trmf/data_model.hpp"
#include "trmf/errors.hpp"
#include "trmf/evaluation.hpp"
#include "trmf/forecasting.hpp"
#include "trmf/hierarchy.hpp"
#include "trmf/io.hpp"
#include "trmf/solver.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace trmf::cli {

enum ExitCode : int { kOk = 0, kValidation = 1, kIo = 2 };

namespace detail {

using io::json;

struct HyperFlags {
    std::optional<int> d, p, max_sweeps;
    std::optional<double> lambda_f, lambda_x, lambda_theta, eta_x, eta_f, tol;

    void attach(CLI::App* sub) {
        sub->add_option("--d", d, "Number of latent factors");
        sub->add_option("--p", p, "AR order of the factor dynamics");
        sub->add_option("--lambda-f", lambda_f, "Loading penalty weight");
        sub->add_option("--lambda-x", lambda_x, "Factor penalty weight");
        sub->add_option("--lambda-theta", lambda_theta, "AR coefficient penalty weight");
        sub->add_option("--eta-x", eta_x, "AR-smoothness share of the factor penalty, in [0, 1]");
        sub->add_option("--eta-f", eta_f, "Graph share of the loading penalty, in [0, 1]");
        sub->add_option("--max-sweeps", max_sweeps, "Maximum coordinate-descent sweeps");
        sub->add_option("--tol", tol, "Relative objective decrease stopping threshold");
    }

    void apply(Hyperparams& h) const {
        if (d) h.d = *d;
        if (p) h.p = *p;
        if (max_sweeps) h.max_sweeps = *max_sweeps;
        if (lambda_f) h.lambda_f = *lambda_f;
        if (lambda_x) h.lambda_x = *lambda_x;
        if (lambda_theta) h.lambda_theta = *lambda_theta;
        if (eta_x) h.eta_x = *eta_x;
        if (eta_f) h.eta_f = *eta_f;
        if (tol) h.tol = *tol;
    }
};

struct Flags {
    // global
    std::optional<std::string> config_path;
    std::optional<std::uint64_t> seed;
    unsigned threads = 1;
    std::optional<std::string> out;

    HyperFlags hyper;
    std::optional<std::string> input, hierarchy, model;
    std::optional<int> horizon, folds, season_length, level;
    std::optional<std::string> methods;
    bool clamp = false;
    std::string reconcile = "none";
    std::string d_values = "2,4,8";
    std::string p_values = "1,3,6,12";
    std::string mode = "isi";
    std::optional<std::string> group;
    bool require_two_cycles = false;

    io::SyntheticSpec synth;
    std::string branching;
};

inline io::RunConfig merge_config(const Flags& f) {
    io::RunConfig cfg;
    if (f.config_path) cfg = io::load_config(*f.config_path, cfg);
    f.hyper.apply(cfg.hyper);
    if (f.seed) cfg.hyper.seed = *f.seed;
    if (f.out) cfg.output = *f.out;
    if (f.input) cfg.input = *f.input;
    if (f.hierarchy) cfg.hierarchy = *f.hierarchy;
    if (f.model) cfg.model = *f.model;
    if (f.horizon) cfg.horizon = *f.horizon;
    if (f.folds) cfg.folds = *f.folds;
    if (f.season_length) cfg.season_length = *f.season_length;
    if (f.methods) cfg.methods = io::split_list(*f.methods);
    if (f.clamp) cfg.clamp_nonnegative = true;
    cfg.validate();
    return cfg;
}

inline std::vector<int> parse_int_list(const std::string& s, const char* what) {
    std::vector<int> out;
    for (const auto& tok : io::split_list(s)) {
        const auto v = io::parse_int(tok);
        if (!v) throw ValidationError(std::string("cannot parse ") + what + " entry '" + tok + "'");
        out.push_back(static_cast<int>(*v));
    }
    if (out.empty()) throw ValidationError(std::string("empty ") + what + " list");
    return out;
}

inline std::optional<LoadingGraph> maybe_graph(const io::RunConfig& cfg, const SeriesCatalog& catalog) {
    if (cfg.hierarchy.empty()) return std::nullopt;
    return to_loading_graph(io::load_hierarchy_csv(cfg.hierarchy, &catalog), catalog);
}

inline json base_summary(const char* command, const io::RunConfig& cfg, unsigned threads) {
    json s{{"command", command}, {"config", io::config_to_json(cfg)}, {"threads", threads}};
    return s;
}

inline const char* kBaselineNote =
    "AR baseline: per-series AR(p) with intercept fitted by least squares; no moving-average terms";
inline const char* kScalingNote =
    "min-max scaling across methods within each (series, period) cell, then per-method median over cells";

// ---------------------------------------------------------------------------

inline int run_fit(const Flags& f, std::ostream& out) {
    const auto cfg = merge_config(f);
    const auto obs = io::load_long_csv(cfg.input);
    const auto graph = maybe_graph(cfg, obs.catalog);
    auto res = fit(obs.matrix, cfg.hyper, graph ? &*graph : nullptr, SolverOptions{f.threads});

    io::ensure_directory(cfg.output);
    const io::SavedModel saved{res.model, obs.catalog, obs.matrix.first_period()};
    io::write_text(std::filesystem::path(cfg.output) / "model.json", io::model_to_json(saved).dump(2) + "\n");

    auto summary = base_summary("fit", cfg, f.threads);
    summary["fit_reports"] = json::array({io::fit_report_to_json("trmf", res.report, res.model.objective_trace)});
    io::write_text(std::filesystem::path(cfg.output) / "summary.json", summary.dump(2) + "\n");

    out << "fit: " << res.report.sweeps_run << " sweeps, objective " << io::format_double(res.report.final_objective)
        << (res.report.converged ? " (converged)" : " (max sweeps reached)") << "\n";
    for (const auto& w : res.report.warnings) out << "warning: " << w << "\n";
    return kOk;
}

inline int run_forecast(const Flags& f, std::ostream& out) {
    const auto cfg = merge_config(f);
    if (cfg.model.empty()) throw ValidationError("forecast requires --model");
    const auto saved = io::load_model(cfg.model);
    const int h = cfg.horizon;
    const ForecastOptions fopts{cfg.clamp_nonnegative};
    const Matrix values = forecast_values(saved.model, h, fopts);
    const std::int64_t origin = saved.first_period + saved.model.periods();

    std::vector<std::string> row_ids = saved.catalog.ids();
    Matrix rows = values;
    auto model_row = [&](const std::string& id) -> Vector { return values.row(saved.catalog.column(id)).transpose(); };

    if (f.reconcile != "none") {
        if (cfg.hierarchy.empty()) throw ValidationError("reconciliation requires --hierarchy");
        const auto hier = io::load_hierarchy_csv(cfg.hierarchy, &saved.catalog);
        const auto& tree = require_tree(hier);
        ReconciledForecast rec;
        if (f.reconcile == "bottom-up") {
            const auto S = build_summing_matrix(hier);
            Matrix leaves(S.leaves(), h);
            for (Eigen::Index k = 0; k < S.leaves(); ++k) leaves.row(k) = model_row(S.leaf_order[static_cast<std::size_t>(k)]).transpose();
            rec.node_order = S.node_order;
            rec.values = aggregate_bottom_up(leaves, S);
        } else if (f.reconcile == "top-down" || f.reconcile == "middle-out") {
            if (cfg.input.empty()) throw ValidationError(f.reconcile + " reconciliation requires --input for proration");
            const auto obs = io::load_long_csv(cfg.input);
            const int level = f.reconcile == "top-down" ? 0 : f.level.value_or(1);
            std::map<std::string, Vector> anchors;
            if (level < 0 || level > tree.depth_max) throw ValidationError("reconciliation level out of range");
            for (int v : tree.by_level[static_cast<std::size_t>(level)]) anchors[hier.id(v)] = model_row(hier.id(v));
            rec = reconcile_middle_out(anchors, level, hier, obs.matrix, obs.catalog);
        } else {
            throw ValidationError("unknown reconciliation mode '" + f.reconcile + "'");
        }
        row_ids = rec.node_order;
        rows = rec.values;
    }

    std::vector<Record> records;
    for (std::size_t i = 0; i < row_ids.size(); ++i) {
        for (int k = 0; k < h; ++k) records.push_back({row_ids[i], origin + k, rows(static_cast<Eigen::Index>(i), k)});
    }
    auto summary = base_summary("forecast", cfg, f.threads);
    summary["reconcile"] = f.reconcile;
    summary["origin_period"] = origin;
    summary["model_objective_trace"] = saved.model.objective_trace;
    io::write_outputs(records, ScoreTable{}, summary, cfg.output);
    out << "forecast: " << row_ids.size() << " series x " << h << " steps -> " << cfg.output << "\n";
    return kOk;
}

inline json backtest_fit_reports(const BacktestResult& bt) {
    json reports = json::array();
    for (const auto& o : bt.outputs) {
        if (!o.forecast.report) continue;
        reports.push_back(io::fit_report_to_json(o.method + "/fold" + std::to_string(o.fold), *o.forecast.report,
                                                 o.forecast.objective_trace));
    }
    return reports;
}

inline std::vector<Record> backtest_forecasts(const BacktestResult& bt, const std::string& method,
                                              const ObservationMatrix& y, const SeriesCatalog& catalog) {
    std::vector<Record> records;
    for (Eigen::Index i = 0; i < y.series(); ++i) {
        for (const auto& o : bt.outputs) {
            if (o.method != method) continue;
            for (Eigen::Index k = 0; k < o.forecast.values.cols(); ++k) {
                records.push_back({catalog.id(i), y.first_period() + o.train_periods + k, o.forecast.values(i, k)});
            }
        }
    }
    return records;
}

inline int run_backtest(const Flags& f, std::ostream& out) {
    const auto cfg = merge_config(f);
    const auto obs = io::load_long_csv(cfg.input);
    const auto graph = maybe_graph(cfg, obs.catalog);
    if (cfg.methods.empty()) throw ValidationError("no methods configured");

    std::vector<MethodSpec> methods;
    int max_order = 0;
    for (const auto& token : cfg.methods) {
        int order = 0;
        methods.push_back(io::make_method(token, cfg.hyper, graph, ForecastOptions{cfg.clamp_nonnegative}, &order));
        max_order = std::max(max_order, order);
    }
    const auto bt = rolling_backtest(obs.matrix, obs.catalog, methods,
                                     BacktestConfig{cfg.horizon, cfg.folds, max_order, f.threads});

    auto summary = base_summary("backtest", cfg, f.threads);
    summary["notes"] = json::array({kBaselineNote, kScalingNote});
    summary["forecasts_method"] = methods.front().name;
    summary["minmax_median_by_step"] = io::summary_table_json(minmax_median(bt.scores, GroupKey::Step), "step");
    summary["minmax_median_by_period"] = io::summary_table_json(minmax_median(bt.scores, GroupKey::Period), "period");
    summary["fit_reports"] = backtest_fit_reports(bt);
    io::write_outputs(backtest_forecasts(bt, methods.front().name, obs.matrix, obs.catalog), bt.scores, summary,
                      cfg.output);
    out << "backtest: " << bt.scores.rows().size() << " scored cells -> " << cfg.output << "\n";
    return kOk;
}

inline int run_gridsearch(const Flags& f, std::ostream& out) {
    const auto cfg = merge_config(f);
    const auto obs = io::load_long_csv(cfg.input);
    const auto graph = maybe_graph(cfg, obs.catalog);
    const auto ds = parse_int_list(f.d_values, "--d-values");
    const auto ps = parse_int_list(f.p_values, "--p-values");
    const auto g = io::grid_search(obs.matrix, obs.catalog, ds, ps, cfg.hyper,
                                   BacktestConfig{cfg.horizon, cfg.folds, 0, f.threads}, graph);

    auto summary = base_summary("gridsearch", cfg, f.threads);
    summary["notes"] = json::array({kScalingNote});
    summary["grid"] = io::grid_to_json(g);
    summary["minmax_median_by_step"] = io::summary_table_json(g.summary, "step");
    summary["fit_reports"] = backtest_fit_reports(g.backtest);
    const auto best = io::grid_cell_name(ds[static_cast<std::size_t>(g.best_d_index)],
                                         ps[static_cast<std::size_t>(g.best_p_index)]);
    summary["forecasts_method"] = best;
    io::write_outputs(backtest_forecasts(g.backtest, best, obs.matrix, obs.catalog), g.backtest.scores, summary,
                      cfg.output);
    out << "gridsearch: best " << best << " -> " << cfg.output << "\n";
    return kOk;
}

inline int run_synth(const Flags& f, std::ostream& out) {
    io::RunConfig cfg;
    if (f.config_path) cfg = io::load_config(*f.config_path, cfg);
    if (f.out) cfg.output = *f.out;
    io::SyntheticSpec spec = f.synth;
    spec.seed = f.seed.value_or(cfg.hyper.seed);
    if (!f.branching.empty()) spec.branching = parse_int_list(f.branching, "--branching");
    const auto data = io::generate_synthetic(spec);

    const std::filesystem::path dir = cfg.output;
    io::ensure_directory(dir);
    io::write_long_csv(dir / "observations.csv", to_records(data.y, data.catalog));
    if (data.hierarchy) io::write_text(dir / "hierarchy.csv", io::hierarchy_csv_text(*data.hierarchy));
    const json truth{{"X", io::matrix_to_json(data.X)}, {"F", io::matrix_to_json(data.F)},
                     {"theta", io::matrix_to_json(data.theta)}, {"series", data.catalog.ids()}};
    io::write_text(dir / "truth.json", truth.dump(2) + "\n");
    const json summary{{"command", "synth"},
                       {"spec",
                        {{"T", spec.T},
                         {"n", spec.n},
                         {"d_true", spec.d_true},
                         {"p_true", spec.p_true},
                         {"noise_sigma", spec.noise_sigma},
                         {"mask_density", spec.mask_density},
                         {"seed", spec.seed},
                         {"branching", spec.branching}}}};
    io::write_text(dir / "summary.json", summary.dump(2) + "\n");
    out << "synth: " << data.y.periods() << " x " << data.y.series() << " -> " << dir.string() << "\n";
    return kOk;
}

inline int run_seasonal(const Flags& f, std::ostream& out) {
    const auto cfg = merge_config(f);
    if (!cfg.season_length) throw ValidationError("seasonal requires --season-length");
    const int L = *cfg.season_length;
    const auto obs = io::load_long_csv(cfg.input);
    std::vector<std::string> ids = f.group ? io::split_list(*f.group) : obs.catalog.ids();
    if (ids.empty()) throw ValidationError("empty seasonal group");

    std::vector<std::vector<double>> group;
    for (const auto& id : ids) {
        const auto col = obs.catalog.column(id);
        std::vector<double> s;
        for (Eigen::Index t = 0; t < obs.matrix.periods(); ++t) {
            if (!obs.matrix.observed(t, col)) {
                throw ValidationError("series '" + id + "' has a gap at period " +
                                      std::to_string(obs.matrix.first_period() + t) + "; seasonal indices need complete cycles");
            }
            s.push_back(obs.matrix.value(t, col));
        }
        group.push_back(std::move(s));
    }

    const SeasonalOptions sopts{f.require_two_cycles};
    std::vector<std::pair<std::string, SeasonalIndex>> results;
    if (f.mode == "isi") {
        for (std::size_t k = 0; k < ids.size(); ++k) results.emplace_back(ids[k], compute_isi(group[k], L, sopts));
    } else if (f.mode == "wgsi") {
        results.emplace_back("wgsi", compute_wgsi(group, L, sopts));
    } else if (f.mode == "dgsi") {
        results.emplace_back("dgsi", compute_dgsi(group, L, sopts));
    } else {
        throw ValidationError("unknown seasonal mode '" + f.mode + "' (expected isi, wgsi, dgsi)");
    }

    std::string csv = "key,position,index\n";
    json idx = json::array();
    for (const auto& [key, si] : results) {
        for (std::size_t s = 0; s < si.indices.size(); ++s) {
            csv += key + ',' + std::to_string(s + 1) + ',' + io::format_double(si.indices[s]) + '\n';
        }
        idx.push_back(json{{"key", key}, {"indices", si.indices}, {"warnings", si.warnings}});
        for (const auto& w : si.warnings) out << "warning: " << key << ": " << w << "\n";
    }
    io::ensure_directory(cfg.output);
    io::write_text(std::filesystem::path(cfg.output) / "seasonal.csv", csv);
    auto summary = base_summary("seasonal", cfg, f.threads);
    summary["mode"] = f.mode;
    summary["group"] = ids;
    summary["seasonal_indices"] = idx;
    io::write_text(std::filesystem::path(cfg.output) / "summary.json", summary.dump(2) + "\n");
    out << "seasonal: " << results.size() << " index set(s) -> " << cfg.output << "\n";
    return kOk;
}

} // namespace detail

/**
 * Entry point shared by the executable and the tests.
 * Exit codes: 0 success, 1 validation or usage error, 2 I/O error.
 */
inline int cli_dispatch(int argc, const char* const* argv, std::ostream& out = std::cout,
                        std::ostream& err = std::cerr) {
    using namespace detail;
    Flags f;
    CLI::App app{"Temporal-regularized matrix factorization forecasting toolkit", "trmf"};
    app.fallthrough();
    app.require_subcommand(1);
    app.add_option("--config", f.config_path, "Flat key = value run configuration");
    app.add_option("--seed", f.seed, "Seed for initialization and synthetic data");
    app.add_option("--threads", f.threads, "Worker threads (fixes the parallelism degree)")->check(CLI::PositiveNumber);
    app.add_option("--out", f.out, "Output directory");

    auto* fit_cmd = app.add_subcommand("fit", "Fit a TRMF model and write model.json");
    fit_cmd->add_option("--input", f.input, "Long CSV: series_id,period,value");
    fit_cmd->add_option("--hierarchy", f.hierarchy, "Edge CSV for graph regularization of the loadings");
    f.hyper.attach(fit_cmd);

    auto* fc_cmd = app.add_subcommand("forecast", "Forecast from a fitted model");
    fc_cmd->add_option("--model", f.model, "model.json written by fit");
    fc_cmd->add_option("--horizon", f.horizon, "Forecast horizon h");
    fc_cmd->add_flag("--clamp", f.clamp, "Clamp forecasts at zero");
    fc_cmd->add_option("--reconcile", f.reconcile, "none | bottom-up | top-down | middle-out")
        ->check(CLI::IsMember({"none", "bottom-up", "top-down", "middle-out"}));
    fc_cmd->add_option("--level", f.level, "Anchor level for middle-out");
    fc_cmd->add_option("--hierarchy", f.hierarchy, "Hierarchy edge CSV");
    fc_cmd->add_option("--input", f.input, "Training observations, used for proration");

    auto* bt_cmd = app.add_subcommand("backtest", "Rolling-origin SMAPE backtest");
    bt_cmd->add_option("--input", f.input, "Long CSV: series_id,period,value");
    bt_cmd->add_option("--hierarchy", f.hierarchy, "Edge CSV for graph regularization of the loadings");
    bt_cmd->add_option("--methods", f.methods, "Comma list of trmf, ar, ar:<order>");
    bt_cmd->add_option("--horizon", f.horizon, "Forecast horizon h");
    bt_cmd->add_option("--folds", f.folds, "Number of rolling folds k");
    bt_cmd->add_flag("--clamp", f.clamp, "Clamp forecasts at zero");
    f.hyper.attach(bt_cmd);

    auto* gs_cmd = app.add_subcommand("gridsearch", "Backtest a d x p grid of TRMF models");
    gs_cmd->add_option("--input", f.input, "Long CSV: series_id,period,value");
    gs_cmd->add_option("--hierarchy", f.hierarchy, "Edge CSV for graph regularization of the loadings");
    gs_cmd->add_option("--d-values", f.d_values, "Comma list of factor counts");
    gs_cmd->add_option("--p-values", f.p_values, "Comma list of AR orders");
    gs_cmd->add_option("--horizon", f.horizon, "Forecast horizon h");
    gs_cmd->add_option("--folds", f.folds, "Number of rolling folds k");
    f.hyper.attach(gs_cmd);

    auto* sy_cmd = app.add_subcommand("synth", "Generate low-rank AR synthetic data");
    sy_cmd->add_option("--T", f.synth.T, "Number of periods");
    sy_cmd->add_option("--n", f.synth.n, "Number of series (flat layout)");
    sy_cmd->add_option("--d-true", f.synth.d_true, "True factor count");
    sy_cmd->add_option("--p-true", f.synth.p_true, "True AR order");
    sy_cmd->add_option("--noise", f.synth.noise_sigma, "Gaussian noise standard deviation");
    sy_cmd->add_option("--density", f.synth.mask_density, "Observed-cell probability in (0, 1]");
    sy_cmd->add_option("--branching", f.branching, "Comma list of branching factors per level (tree layout)");

    auto* se_cmd = app.add_subcommand("seasonal", "Individual or group seasonal indices");
    se_cmd->add_option("--input", f.input, "Long CSV: series_id,period,value");
    se_cmd->add_option("--season-length", f.season_length, "Season cycle length L");
    se_cmd->add_option("--mode", f.mode, "isi | wgsi | dgsi");
    se_cmd->add_option("--group", f.group, "Comma list of series ids (default: all)");
    se_cmd->add_flag("--require-two-cycles", f.require_two_cycles, "Fail instead of warn below two cycles");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n\n" << app.help();
        return kValidation;
    }

    CLI::App* sub = app.get_subcommands().front();
    try {
        if (sub == fit_cmd || sub == bt_cmd || sub == gs_cmd || sub == se_cmd) {
            io::RunConfig probe;
            if (f.config_path) probe = io::load_config(*f.config_path, probe);
            if (!f.input && probe.input.empty()) {
                err << "error: " << sub->get_name() << " requires --input\n\n" << sub->help();
                return kValidation;
            }
        }
        if (sub == fit_cmd) return run_fit(f, out);
        if (sub == fc_cmd) return run_forecast(f, out);
        if (sub == bt_cmd) return run_backtest(f, out);
        if (sub == gs_cmd) return run_gridsearch(f, out);
        if (sub == sy_cmd) return run_synth(f, out);
        return run_seasonal(f, out);
    } catch (const IoError& e) {
        err << "io error: " << e.what() << "\n";
        return kIo;
    } catch (const ValidationError& e) {
        err << "error: " << e.what() << "\n";
        return kValidation;
    } catch (const io::json::exception& e) {
        err << "error: " << e.what() << "\n";
        return kValidation;
    }
}

} // namespace trmf::cli
