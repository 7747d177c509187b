#pragma once

#include "trmf/data_model.hpp"
#include "trmf/errors.hpp"

#include <cmath>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace trmf {

/**
 * 0/1 summing matrix mapping bottom-level series to every node of the
 * hierarchy. Rows follow node_order (level 0 first, then level 1, ...),
 * columns follow leaf_order.
 */
struct SummingMatrix {
    Matrix S;
    std::vector<std::string> node_order;
    std::vector<std::string> leaf_order;

    Eigen::Index nodes() const { return S.rows(); }
    Eigen::Index leaves() const { return S.cols(); }
};

inline const TreeStructure& require_tree(const ValidatedHierarchy& h) {
    if (!h.tree) throw ValidationError("non-tree hierarchy: aggregation requires a single rooted tree");
    return *h.tree;
}

inline SummingMatrix build_summing_matrix(const ValidatedHierarchy& h) {
    const auto& tree = require_tree(h);
    SummingMatrix out;
    std::vector<Eigen::Index> row_of(h.size());
    for (const auto& level : tree.by_level) {
        for (int v : level) {
            row_of[static_cast<std::size_t>(v)] = static_cast<Eigen::Index>(out.node_order.size());
            out.node_order.push_back(h.id(v));
        }
    }
    out.S = Matrix::Zero(static_cast<Eigen::Index>(h.size()), static_cast<Eigen::Index>(tree.leaves.size()));
    for (std::size_t c = 0; c < tree.leaves.size(); ++c) {
        const int leaf = tree.leaves[c];
        out.leaf_order.push_back(h.id(leaf));
        for (int v = leaf; v != -1; v = tree.parent[static_cast<std::size_t>(v)]) {
            out.S(row_of[static_cast<std::size_t>(v)], static_cast<Eigen::Index>(c)) = 1.0;
        }
    }
    return out;
}

/// S * leaf_forecasts; leaf_forecasts is m_K x h in leaf_order.
inline Matrix aggregate_bottom_up(const Matrix& leaf_forecasts, const SummingMatrix& s) {
    if (leaf_forecasts.rows() != s.leaves()) {
        throw ValidationError("leaf forecast rows (" + std::to_string(leaf_forecasts.rows()) +
                              ") do not match leaf count (" + std::to_string(s.leaves()) + ")");
    }
    return s.S * leaf_forecasts;
}

struct Proration {
    std::vector<std::string> children;
    Vector weights;
};

/// Child shares of the parent's demand from full observed-history sums.
inline Proration estimate_proration(const ObservationMatrix& y, const SeriesCatalog& catalog,
                                    const ValidatedHierarchy& h, const std::string& node) {
    const auto& tree = require_tree(h);
    const int v = h.node(node);
    const auto& kids = tree.children[static_cast<std::size_t>(v)];
    if (kids.empty()) throw ValidationError("node '" + node + "' has no children to prorate over");

    Proration out;
    out.weights.resize(static_cast<Eigen::Index>(kids.size()));
    double total = 0.0;
    for (std::size_t k = 0; k < kids.size(); ++k) {
        const auto& id = h.id(kids[k]);
        const auto col = catalog.column(id);
        double sum = 0.0;
        int seen = 0;
        for (Eigen::Index t = 0; t < y.periods(); ++t) {
            if (y.observed(t, col)) {
                sum += y.value(t, col);
                ++seen;
            }
        }
        if (seen == 0) throw ValidationError("child '" + id + "' has no observed history");
        out.children.push_back(id);
        out.weights(static_cast<Eigen::Index>(k)) = sum;
        total += sum;
    }
    if (total == 0.0 || !std::isfinite(total)) {
        throw ValidationError("no basis for proration under node '" + node + "': children histories sum to zero");
    }
    out.weights /= total;
    return out;
}

/// Row c = weights(c) * aggregate. Weights must sum to 1 within 1e-9.
inline Matrix disaggregate_top_down(const Vector& aggregate, const Vector& weights) {
    if (weights.size() < 1) throw ValidationError("empty proration weights");
    if (std::abs(weights.sum() - 1.0) > 1e-9) {
        throw ValidationError("proration weights sum to " + std::to_string(weights.sum()) + ", expected 1");
    }
    return weights * aggregate.transpose();
}

struct ReconciledForecast {
    std::vector<std::string> node_order;  // level-major, as in SummingMatrix
    Matrix values;                        // m x h
};

/**
 * Middle-out reconciliation from forecasts at `level`: ancestors are filled
 * by child sums, descendants by recursive proration estimated from y.
 * level = 0 is pure top-down; level = K on a balanced tree is pure bottom-up.
 */
inline ReconciledForecast reconcile_middle_out(const std::map<std::string, Vector>& level_forecasts, int level,
                                               const ValidatedHierarchy& h, const ObservationMatrix& y,
                                               const SeriesCatalog& catalog) {
    const auto& tree = require_tree(h);
    if (level < 0 || level > tree.depth_max) {
        throw ValidationError("reconciliation level " + std::to_string(level) + " outside [0, " +
                              std::to_string(tree.depth_max) + "]");
    }
    const auto& anchors = tree.by_level[static_cast<std::size_t>(level)];
    Eigen::Index horizon = -1;
    std::vector<std::optional<Vector>> value(h.size());
    for (int v : anchors) {
        auto it = level_forecasts.find(h.id(v));
        if (it == level_forecasts.end()) {
            throw ValidationError("missing forecast for level-" + std::to_string(level) + " node '" + h.id(v) + "'");
        }
        if (horizon == -1) horizon = it->second.size();
        if (it->second.size() != horizon || horizon < 1) throw ValidationError("inconsistent forecast horizons");
        value[static_cast<std::size_t>(v)] = it->second;
    }

    for (std::size_t l = static_cast<std::size_t>(level); l < tree.by_level.size(); ++l) {
        for (int v : tree.by_level[l]) {
            const auto& kids = tree.children[static_cast<std::size_t>(v)];
            if (kids.empty() || !value[static_cast<std::size_t>(v)]) continue;
            const auto pr = estimate_proration(y, catalog, h, h.id(v));
            const Matrix rows = disaggregate_top_down(*value[static_cast<std::size_t>(v)], pr.weights);
            for (std::size_t k = 0; k < kids.size(); ++k) {
                value[static_cast<std::size_t>(kids[k])] = rows.row(static_cast<Eigen::Index>(k)).transpose();
            }
        }
    }
    for (int l = level - 1; l >= 0; --l) {
        for (int v : tree.by_level[static_cast<std::size_t>(l)]) {
            const auto& kids = tree.children[static_cast<std::size_t>(v)];
            if (kids.empty()) {
                throw ValidationError("node '" + h.id(v) + "' has no descendants at level " + std::to_string(level));
            }
            Vector sum = Vector::Zero(horizon);
            for (int c : kids) sum += *value[static_cast<std::size_t>(c)];
            value[static_cast<std::size_t>(v)] = sum;
        }
    }

    ReconciledForecast out;
    out.values.resize(static_cast<Eigen::Index>(h.size()), horizon);
    Eigen::Index r = 0;
    for (const auto& lvl : tree.by_level) {
        for (int v : lvl) {
            out.node_order.push_back(h.id(v));
            out.values.row(r++) = value[static_cast<std::size_t>(v)]->transpose();
        }
    }
    return out;
}

/// Top-down from the root forecast.
inline ReconciledForecast reconcile_top_down(const Vector& root_forecast, const ValidatedHierarchy& h,
                                             const ObservationMatrix& y, const SeriesCatalog& catalog) {
    const auto& tree = require_tree(h);
    return reconcile_middle_out({{h.id(tree.root), root_forecast}}, 0, h, y, catalog);
}

struct SeasonalIndex {
    int length = 0;
    std::vector<double> indices;
    std::vector<std::string> warnings;
};

struct SeasonalOptions {
    /// Fewer than two complete cycles is an error instead of a warning.
    bool require_two_cycles = false;
};

/// Ratio of each season position's mean to the overall mean, over complete cycles.
inline SeasonalIndex compute_isi(std::span<const double> series, int season_length, const SeasonalOptions& opts = {}) {
    if (season_length < 1) throw ValidationError("season length must be >= 1");
    const auto L = static_cast<std::size_t>(season_length);
    if (series.empty() || series.size() % L != 0) {
        throw ValidationError("incomplete cycles: series length " + std::to_string(series.size()) +
                              " is not a positive multiple of season length " + std::to_string(L));
    }
    const std::size_t cycles = series.size() / L;
    SeasonalIndex out;
    out.length = season_length;
    if (cycles < 2) {
        const std::string msg = "only " + std::to_string(cycles) + " complete cycle; two are recommended";
        if (opts.require_two_cycles) throw ValidationError(msg);
        out.warnings.push_back(msg);
    }

    double total = 0.0;
    for (double v : series) total += v;
    const double mean = total / static_cast<double>(series.size());
    if (!(mean > 0.0) || !std::isfinite(mean)) throw ValidationError("series mean must be positive");

    out.indices.assign(L, 0.0);
    for (std::size_t k = 0; k < series.size(); ++k) out.indices[k % L] += series[k];
    for (std::size_t s = 0; s < L; ++s) {
        out.indices[s] = (out.indices[s] / static_cast<double>(cycles)) / mean;
        if (!(out.indices[s] > 0.0)) {
            throw ValidationError("non-positive seasonal index at position " + std::to_string(s));
        }
    }
    return out;
}

namespace detail {

inline void check_group(const std::vector<std::vector<double>>& group) {
    if (group.empty()) throw ValidationError("empty seasonal group");
    for (const auto& s : group) {
        if (s.size() != group.front().size()) throw ValidationError("group members differ in length");
    }
}

} // namespace detail

/// Index of the element-wise group sum.
inline SeasonalIndex compute_wgsi(const std::vector<std::vector<double>>& group, int season_length,
                                  const SeasonalOptions& opts = {}) {
    detail::check_group(group);
    std::vector<double> sum(group.front().size(), 0.0);
    for (const auto& s : group) {
        for (std::size_t t = 0; t < s.size(); ++t) sum[t] += s[t];
    }
    return compute_isi(sum, season_length, opts);
}

/// Unweighted mean of member indices.
inline SeasonalIndex compute_dgsi(const std::vector<std::vector<double>>& group, int season_length,
                                  const SeasonalOptions& opts = {}) {
    detail::check_group(group);
    SeasonalIndex out;
    out.length = season_length;
    out.indices.assign(static_cast<std::size_t>(std::max(season_length, 0)), 0.0);
    for (const auto& s : group) {
        auto member = compute_isi(s, season_length, opts);
        for (std::size_t k = 0; k < out.indices.size(); ++k) out.indices[k] += member.indices[k];
        for (auto& w : member.warnings) {
            if (out.warnings.empty()) out.warnings.push_back(std::move(w));
        }
    }
    for (auto& v : out.indices) v /= static_cast<double>(group.size());
    return out;
}

} // namespace trmf
