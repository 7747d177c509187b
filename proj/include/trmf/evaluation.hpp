#pragma once

#include "trmf/data_model.hpp"
#include "trmf/errors.hpp"
#include "trmf/parallel.hpp"
#include "trmf/solver.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <tuple>
#include <unordered_map>
#include <vector>

namespace trmf {

/**
 * Symmetric mean absolute percent error, in percent:
 * (100 / n) * sum_t |F_t - A_t| / (|A_t| + |F_t|). A term with
 * A_t = F_t = 0 contributes 0.
 */
inline double smape(std::span<const double> forecast, std::span<const double> actual) {
    if (forecast.size() != actual.size()) {
        throw ValidationError("smape length mismatch: " + std::to_string(forecast.size()) + " vs " +
                              std::to_string(actual.size()));
    }
    if (forecast.empty()) throw ValidationError("smape of empty vectors");
    double s = 0.0;
    for (std::size_t t = 0; t < forecast.size(); ++t) {
        const double denom = std::abs(actual[t]) + std::abs(forecast[t]);
        if (denom == 0.0) continue;
        s += std::abs(forecast[t] - actual[t]) / denom;
    }
    return 100.0 * s / static_cast<double>(forecast.size());
}

struct ScoreRow {
    std::string series_id;
    std::int64_t period = 0;  // absolute period label of the forecast target
    int step = 0;             // 1-based forecast step within its fold
    std::string method;
    double smape_percent = 0.0;
};

/// Raw SMAPE records, unique per (series, period, method).
class ScoreTable {
public:
    void add(ScoreRow row) {
        if (!(row.smape_percent >= 0.0 && row.smape_percent <= 100.0)) {
            throw ValidationError("smape outside [0, 100] for series '" + row.series_id + "'");
        }
        auto key = std::make_tuple(row.series_id, row.period, row.method);
        if (!keys_.emplace(key, rows_.size()).second) {
            throw ValidationError("duplicate score for (" + row.series_id + ", " + std::to_string(row.period) + ", " +
                                  row.method + ")");
        }
        if (std::find(methods_.begin(), methods_.end(), row.method) == methods_.end()) methods_.push_back(row.method);
        rows_.push_back(std::move(row));
    }

    const std::vector<ScoreRow>& rows() const { return rows_; }
    const std::vector<std::string>& methods() const { return methods_; }
    bool empty() const { return rows_.empty(); }

private:
    std::vector<ScoreRow> rows_;
    std::vector<std::string> methods_;
    std::map<std::tuple<std::string, std::int64_t, std::string>, std::size_t> keys_;
};

enum class GroupKey { Period, Step };

struct MedianScore {
    std::int64_t group = 0;  // period label or forecast step
    std::string method;
    double median = 0.0;
    int cells = 0;
};

namespace detail {

inline double median_of(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

} // namespace detail

/**
 * Min-max scales SMAPE across methods within each (series, period) cell,
 * then takes the per-method median over cells sharing a group key. A cell
 * where all methods tie (including single-method cells) scales to 0.
 * Output is ordered by group, then by the table's method order.
 */
inline std::vector<MedianScore> minmax_median(const ScoreTable& table, GroupKey key = GroupKey::Period) {
    if (table.empty()) throw ValidationError("empty score table");

    struct CellKey {
        std::string series;
        std::int64_t period;
        bool operator<(const CellKey& o) const { return std::tie(series, period) < std::tie(o.series, o.period); }
    };
    std::map<CellKey, std::vector<const ScoreRow*>> cells;
    for (const auto& r : table.rows()) cells[{r.series_id, r.period}].push_back(&r);

    std::map<std::int64_t, std::map<std::string, std::vector<double>>> scaled;
    for (const auto& [cell, rows] : cells) {
        double lo = rows.front()->smape_percent;
        double hi = lo;
        for (const auto* r : rows) {
            lo = std::min(lo, r->smape_percent);
            hi = std::max(hi, r->smape_percent);
        }
        for (const auto* r : rows) {
            const double v = hi > lo ? (r->smape_percent - lo) / (hi - lo) : 0.0;
            const std::int64_t g = key == GroupKey::Period ? r->period : r->step;
            scaled[g][r->method].push_back(v);
        }
    }

    std::vector<MedianScore> out;
    for (const auto& [g, by_method] : scaled) {
        for (const auto& m : table.methods()) {
            auto it = by_method.find(m);
            if (it == by_method.end()) continue;
            out.push_back({g, m, detail::median_of(it->second), static_cast<int>(it->second.size())});
        }
    }
    return out;
}

/// Mean of each method's per-group medians, in table method order.
inline std::vector<std::pair<std::string, double>> mean_over_groups(const std::vector<MedianScore>& summary,
                                                                    const std::vector<std::string>& methods) {
    std::vector<std::pair<std::string, double>> out;
    for (const auto& m : methods) {
        double s = 0.0;
        int c = 0;
        for (const auto& row : summary) {
            if (row.method == m) {
                s += row.median;
                ++c;
            }
        }
        out.emplace_back(m, c > 0 ? s / c : 0.0);
    }
    return out;
}

struct ARSeriesFit {
    Vector coefficients;     // lag 1 first
    double intercept = 0.0;
    bool modelable = false;
    bool ridged = false;
    double last_observed = 0.0;
    Vector recent;           // last p training periods, oldest first
};

/// Per-series AR(p) with intercept, estimated by least squares.
struct ARBaselineModel {
    int order = 0;
    std::vector<ARSeriesFit> series;
};

/**
 * OLS of each series on p lags plus intercept over every window where the
 * target and all lags are observed. Series without a contiguous observed run
 * of p + 2 periods are flagged unmodelable; rank-deficient designs get a
 * 1e-8 ridge and are flagged.
 */
inline ARBaselineModel fit_ar_baseline(const ObservationMatrix& y, int p) {
    if (p < 1) throw ValidationError("AR baseline order must be >= 1");
    const Eigen::Index T = y.periods();
    ARBaselineModel model;
    model.order = p;
    model.series.resize(static_cast<std::size_t>(y.series()));

    for (Eigen::Index i = 0; i < y.series(); ++i) {
        auto& fit = model.series[static_cast<std::size_t>(i)];
        fit.coefficients = Vector::Zero(p);

        std::optional<double> carry;
        for (Eigen::Index t = 0; t < T; ++t) {
            if (y.observed(t, i)) {
                carry = y.value(t, i);
                break;
            }
        }
        fit.recent.resize(p);
        Vector filled(T);
        for (Eigen::Index t = 0; t < T; ++t) {
            if (y.observed(t, i)) carry = y.value(t, i);
            filled(t) = carry.value_or(0.0);
        }
        fit.last_observed = filled(T - 1);
        for (Eigen::Index l = 0; l < p; ++l) {
            const Eigen::Index t = T - p + l;
            fit.recent(l) = t >= 0 ? filled(t) : filled(0);
        }

        Eigen::Index run = 0;
        Eigen::Index longest = 0;
        std::vector<Eigen::Index> targets;
        for (Eigen::Index t = 0; t < T; ++t) {
            run = y.observed(t, i) ? run + 1 : 0;
            longest = std::max(longest, run);
            if (run >= p + 1) targets.push_back(t);
        }
        if (longest < p + 2) continue;

        const auto rows = static_cast<Eigen::Index>(targets.size());
        Matrix design(rows, p + 1);
        Vector target(rows);
        for (Eigen::Index r = 0; r < rows; ++r) {
            const Eigen::Index t = targets[static_cast<std::size_t>(r)];
            target(r) = y.value(t, i);
            for (Eigen::Index l = 1; l <= p; ++l) design(r, l - 1) = y.value(t - l, i);
            design(r, p) = 1.0;
        }
        Eigen::ColPivHouseholderQR<Matrix> qr(design);
        Vector beta;
        if (qr.rank() < p + 1) {
            Matrix normal = design.transpose() * design;
            normal.diagonal().array() += 1e-8;
            beta = normal.ldlt().solve(design.transpose() * target);
            fit.ridged = true;
        } else {
            beta = qr.solve(target);
        }
        if (!beta.allFinite()) continue;
        fit.coefficients = beta.head(p);
        fit.intercept = beta(p);
        fit.modelable = true;
    }
    return model;
}

/// Dynamic recursion with intercept; unmodelable series repeat their last observed value.
inline Matrix forecast_ar_baseline(const ARBaselineModel& model, int h) {
    if (h < 1) throw ValidationError("forecast horizon must be >= 1");
    const int p = model.order;
    Matrix out(static_cast<Eigen::Index>(model.series.size()), h);
    for (std::size_t i = 0; i < model.series.size(); ++i) {
        const auto& fit = model.series[i];
        const auto row = static_cast<Eigen::Index>(i);
        if (!fit.modelable) {
            out.row(row).setConstant(fit.last_observed);
            continue;
        }
        Vector path(p + h);
        path.head(p) = fit.recent;
        for (Eigen::Index s = p; s < p + h; ++s) {
            double v = fit.intercept;
            for (Eigen::Index l = 1; l <= p; ++l) v += fit.coefficients(l - 1) * path(s - l);
            path(s) = v;
        }
        out.row(row) = path.tail(h).transpose();
    }
    return out;
}

/// Forecast plus optional fit diagnostics returned by a backtest method.
struct MethodForecast {
    Matrix values;  // n x h
    std::optional<FitReport> report;
    std::vector<double> objective_trace;
};

struct MethodSpec {
    std::string name;
    std::function<MethodForecast(const ObservationMatrix& train, int horizon)> forecaster;
};

struct BacktestConfig {
    int horizon = 1;
    int folds = 1;
    int max_order = 0;  // largest AR order among methods, for the history check
    unsigned threads = 1;
};

struct FoldOutput {
    int fold = 0;                 // 1-based
    Eigen::Index train_periods = 0;
    std::string method;
    MethodForecast forecast;
};

struct BacktestResult {
    ScoreTable scores;
    std::vector<FoldOutput> outputs;  // fold-major, then method order
};

/**
 * Rolling-origin evaluation. Fold f = 1..k trains every method on the first
 * T - h (k - f + 1) periods and scores each observed cell of the next h
 * periods with single-point SMAPE.
 */
inline BacktestResult rolling_backtest(const ObservationMatrix& y, const SeriesCatalog& catalog,
                                       const std::vector<MethodSpec>& methods, const BacktestConfig& cfg) {
    if (methods.empty()) throw ValidationError("no methods to backtest");
    if (cfg.horizon < 1) throw ValidationError("horizon must be >= 1");
    if (cfg.folds < 1) throw ValidationError("folds must be >= 1");
    const Eigen::Index T = y.periods();
    const Eigen::Index need = static_cast<Eigen::Index>(cfg.horizon) * cfg.folds + cfg.max_order + 1;
    if (T <= need) {
        throw ValidationError("insufficient history: T=" + std::to_string(T) + " but h*k + max(p) + 1 = " +
                              std::to_string(need));
    }
    if (catalog.size() != static_cast<std::size_t>(y.series())) {
        throw ValidationError("catalog size does not match observation columns");
    }

    const std::size_t tasks = static_cast<std::size_t>(cfg.folds) * methods.size();
    std::vector<FoldOutput> outputs(tasks);
    parallel_for(tasks, cfg.threads, [&](std::size_t task) {
        const int fold = static_cast<int>(task / methods.size()) + 1;
        const auto& method = methods[task % methods.size()];
        const Eigen::Index train_len = T - static_cast<Eigen::Index>(cfg.horizon) * (cfg.folds - fold + 1);
        auto fc = method.forecaster(y.head(train_len), cfg.horizon);
        if (fc.values.rows() != y.series() || fc.values.cols() != cfg.horizon) {
            throw ValidationError("method '" + method.name + "' returned a forecast of the wrong shape");
        }
        if (!fc.values.allFinite()) throw ValidationError("method '" + method.name + "' returned non-finite forecasts");
        outputs[task] = {fold, train_len, method.name, std::move(fc)};
    });

    BacktestResult result;
    for (Eigen::Index i = 0; i < y.series(); ++i) {
        for (int fold = 1; fold <= cfg.folds; ++fold) {
            for (int k = 0; k < cfg.horizon; ++k) {
                for (std::size_t mi = 0; mi < methods.size(); ++mi) {
                    const auto& out = outputs[static_cast<std::size_t>(fold - 1) * methods.size() + mi];
                    const Eigen::Index t = out.train_periods + k;
                    if (!y.observed(t, i)) continue;
                    const double f = out.forecast.values(i, k);
                    const double a = y.value(t, i);
                    result.scores.add({catalog.id(i), y.first_period() + t, k + 1, out.method,
                                       smape(std::span(&f, 1), std::span(&a, 1))});
                }
            }
        }
    }
    result.outputs = std::move(outputs);
    return result;
}

} // namespace trmf
