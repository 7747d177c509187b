#pragma once

#include "trmf/errors.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <queue>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

namespace trmf {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using MaskMatrix = Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic>;

/**
 * T x n grid of observations with an explicit observation mask.
 *
 * Row t holds period first_period() + t; column i holds series i of the
 * accompanying SeriesCatalog. Unobserved cells store 0 and are never read
 * by the solver.
 */
class ObservationMatrix {
public:
    ObservationMatrix() = default;

    ObservationMatrix(Matrix values, MaskMatrix mask, std::int64_t first_period = 0)
        : values_(std::move(values)), mask_(std::move(mask)), first_period_(first_period) {
        if (values_.rows() < 1 || values_.cols() < 1) {
            throw ValidationError("observation matrix must have T >= 1 and n >= 1");
        }
        if (mask_.rows() != values_.rows() || mask_.cols() != values_.cols()) {
            throw ValidationError("observation mask shape does not match values");
        }
        for (Eigen::Index i = 0; i < values_.cols(); ++i) {
            for (Eigen::Index t = 0; t < values_.rows(); ++t) {
                if (mask_(t, i) != 0) {
                    if (!std::isfinite(values_(t, i))) {
                        throw ValidationError("non-finite observed value at row " + std::to_string(t) +
                                              ", column " + std::to_string(i));
                    }
                } else {
                    values_(t, i) = 0.0;
                }
            }
        }
    }

    /// Fully observed matrix.
    static ObservationMatrix dense(Matrix values, std::int64_t first_period = 0) {
        MaskMatrix mask = MaskMatrix::Ones(values.rows(), values.cols());
        return ObservationMatrix(std::move(values), std::move(mask), first_period);
    }

    Eigen::Index periods() const { return values_.rows(); }
    Eigen::Index series() const { return values_.cols(); }
    std::int64_t first_period() const { return first_period_; }

    const Matrix& values() const { return values_; }
    const MaskMatrix& mask() const { return mask_; }

    bool observed(Eigen::Index t, Eigen::Index i) const { return mask_(t, i) != 0; }
    double value(Eigen::Index t, Eigen::Index i) const { return values_(t, i); }

    std::size_t observed_count() const {
        std::size_t c = 0;
        for (Eigen::Index i = 0; i < mask_.size(); ++i) c += mask_.data()[i] != 0;
        return c;
    }

    bool fully_observed() const { return observed_count() == static_cast<std::size_t>(mask_.size()); }

    /// Leading `length` periods, used for rolling-origin training splits.
    ObservationMatrix head(Eigen::Index length) const {
        if (length < 1 || length > periods()) {
            throw ValidationError("head length " + std::to_string(length) + " outside [1, " +
                                  std::to_string(periods()) + "]");
        }
        return ObservationMatrix(values_.topRows(length), mask_.topRows(length), first_period_);
    }

    bool operator==(const ObservationMatrix& other) const {
        return first_period_ == other.first_period_ && values_ == other.values_ && mask_ == other.mask_;
    }

private:
    Matrix values_;
    MaskMatrix mask_;
    std::int64_t first_period_ = 0;
};

/// Ordered, unique series identifiers with a bijective id <-> column mapping.
class SeriesCatalog {
public:
    SeriesCatalog() = default;

    explicit SeriesCatalog(std::vector<std::string> ids) : ids_(std::move(ids)) {
        for (std::size_t i = 0; i < ids_.size(); ++i) {
            if (!index_.emplace(ids_[i], static_cast<Eigen::Index>(i)).second) {
                throw ValidationError("duplicate series id '" + ids_[i] + "'");
            }
        }
    }

    std::size_t size() const { return ids_.size(); }
    const std::vector<std::string>& ids() const { return ids_; }
    const std::string& id(Eigen::Index column) const { return ids_.at(static_cast<std::size_t>(column)); }

    bool contains(const std::string& id) const { return index_.count(id) != 0; }

    std::optional<Eigen::Index> find(const std::string& id) const {
        auto it = index_.find(id);
        if (it == index_.end()) return std::nullopt;
        return it->second;
    }

    Eigen::Index column(const std::string& id) const {
        auto it = index_.find(id);
        if (it == index_.end()) throw ValidationError("unknown series id '" + id + "'");
        return it->second;
    }

    bool operator==(const SeriesCatalog& other) const { return ids_ == other.ids_; }

private:
    std::vector<std::string> ids_;
    std::unordered_map<std::string, Eigen::Index> index_;
};

/// One (series_id, period, value) observation in long format.
struct Record {
    std::string series_id;
    std::int64_t period = 0;
    double value = 0.0;

    bool operator==(const Record&) const = default;
};

struct Observations {
    ObservationMatrix matrix;
    SeriesCatalog catalog;
};

/**
 * Builds the observation grid from long-format records.
 *
 * Columns follow first appearance of each series id. The period axis spans
 * [min period, max period]; periods without a record are unobserved.
 */
inline Observations assemble_observations(const std::vector<Record>& records) {
    if (records.empty()) throw ValidationError("no observation records");

    std::vector<std::string> ids;
    std::unordered_map<std::string, Eigen::Index> column;
    std::int64_t lo = records.front().period;
    std::int64_t hi = records.front().period;
    for (const auto& r : records) {
        if (r.period < 0) {
            throw ValidationError("negative period " + std::to_string(r.period) + " for series '" +
                                  r.series_id + "'");
        }
        if (!std::isfinite(r.value)) {
            throw ValidationError("non-finite value for series '" + r.series_id + "' at period " +
                                  std::to_string(r.period));
        }
        if (column.emplace(r.series_id, static_cast<Eigen::Index>(ids.size())).second) {
            ids.push_back(r.series_id);
        }
        lo = std::min(lo, r.period);
        hi = std::max(hi, r.period);
    }

    const Eigen::Index T = static_cast<Eigen::Index>(hi - lo + 1);
    const Eigen::Index n = static_cast<Eigen::Index>(ids.size());
    Matrix values = Matrix::Zero(T, n);
    MaskMatrix mask = MaskMatrix::Zero(T, n);
    for (const auto& r : records) {
        const Eigen::Index t = static_cast<Eigen::Index>(r.period - lo);
        const Eigen::Index i = column.at(r.series_id);
        if (mask(t, i) != 0) {
            throw ValidationError("duplicate record for (" + r.series_id + ", " + std::to_string(r.period) +
                                  ")");
        }
        mask(t, i) = 1;
        values(t, i) = r.value;
    }
    return {ObservationMatrix(std::move(values), std::move(mask), lo), SeriesCatalog(std::move(ids))};
}

/// Observed cells as records, series-major then period order.
inline std::vector<Record> to_records(const ObservationMatrix& y, const SeriesCatalog& catalog) {
    if (catalog.size() != static_cast<std::size_t>(y.series())) {
        throw ValidationError("catalog size does not match observation columns");
    }
    std::vector<Record> out;
    out.reserve(y.observed_count());
    for (Eigen::Index i = 0; i < y.series(); ++i) {
        for (Eigen::Index t = 0; t < y.periods(); ++t) {
            if (y.observed(t, i)) out.push_back({catalog.id(i), y.first_period() + t, y.value(t, i)});
        }
    }
    return out;
}

struct HierarchyEdge {
    std::string src;
    std::string dst;
    double weight = 1.0;
};

/**
 * Directed weighted graph over series identifiers.
 *
 * Serves two roles: the neighbourhood structure for loading regularization
 * (any digraph) and, when the edges form a rooted tree, the aggregation
 * hierarchy. Optional explicit levels are checked against the tree depth.
 */
struct HierarchyGraph {
    std::vector<std::string> nodes;
    std::vector<HierarchyEdge> edges;
    std::optional<std::map<std::string, int>> levels;

    void add_edge(std::string src, std::string dst, double weight = 1.0) {
        edges.push_back({std::move(src), std::move(dst), weight});
    }
};

/// Tree view of a validated hierarchy. Node indices refer to ValidatedHierarchy::nodes.
struct TreeStructure {
    int root = -1;
    int depth_max = 0;                         // K
    std::vector<int> parent;                   // -1 for the root
    std::vector<std::vector<int>> children;    // edge order
    std::vector<int> depth;
    std::vector<std::vector<int>> by_level;    // level 0..K
    std::vector<int> leaves;                   // childless nodes, level-major

    bool is_leaf(int v) const { return children[static_cast<std::size_t>(v)].empty(); }
};

struct Neighbor {
    int node;
    double weight;
};

struct ValidatedHierarchy {
    std::vector<std::string> nodes;
    std::unordered_map<std::string, int> index;
    std::vector<std::vector<Neighbor>> out;    // out-neighbours in edge order
    std::optional<TreeStructure> tree;

    int node(const std::string& id) const {
        auto it = index.find(id);
        if (it == index.end()) throw ValidationError("unknown hierarchy node '" + id + "'");
        return it->second;
    }
    const std::string& id(int v) const { return nodes.at(static_cast<std::size_t>(v)); }
    std::size_t size() const { return nodes.size(); }
};

namespace detail {

inline std::optional<TreeStructure> derive_tree(const ValidatedHierarchy& h) {
    const int m = static_cast<int>(h.nodes.size());
    if (m == 0) return std::nullopt;
    TreeStructure tree;
    tree.parent.assign(static_cast<std::size_t>(m), -1);
    tree.children.assign(static_cast<std::size_t>(m), {});
    for (int v = 0; v < m; ++v) {
        for (const auto& nb : h.out[static_cast<std::size_t>(v)]) {
            if (tree.parent[static_cast<std::size_t>(nb.node)] != -1) return std::nullopt;
            tree.parent[static_cast<std::size_t>(nb.node)] = v;
            tree.children[static_cast<std::size_t>(v)].push_back(nb.node);
        }
    }
    for (int v = 0; v < m; ++v) {
        if (tree.parent[static_cast<std::size_t>(v)] == -1) {
            if (tree.root != -1) return std::nullopt;
            tree.root = v;
        }
    }
    if (tree.root == -1) return std::nullopt;

    tree.depth.assign(static_cast<std::size_t>(m), -1);
    std::queue<int> frontier;
    frontier.push(tree.root);
    tree.depth[static_cast<std::size_t>(tree.root)] = 0;
    int reached = 0;
    while (!frontier.empty()) {
        const int v = frontier.front();
        frontier.pop();
        ++reached;
        for (int c : tree.children[static_cast<std::size_t>(v)]) {
            if (tree.depth[static_cast<std::size_t>(c)] != -1) return std::nullopt;
            tree.depth[static_cast<std::size_t>(c)] = tree.depth[static_cast<std::size_t>(v)] + 1;
            frontier.push(c);
        }
    }
    if (reached != m) return std::nullopt;  // a cycle detached from the root

    tree.depth_max = *std::max_element(tree.depth.begin(), tree.depth.end());
    tree.by_level.assign(static_cast<std::size_t>(tree.depth_max + 1), {});
    for (int v = 0; v < m; ++v) tree.by_level[static_cast<std::size_t>(tree.depth[static_cast<std::size_t>(v)])].push_back(v);
    for (const auto& level : tree.by_level) {
        for (int v : level) {
            if (tree.children[static_cast<std::size_t>(v)].empty()) tree.leaves.push_back(v);
        }
    }
    return tree;
}

} // namespace detail

/**
 * Checks weights, self-loops, duplicates and (if given) the level assignment.
 * Derives the tree view whenever the edges form a single rooted tree.
 * Throws ValidationError on any violation.
 */
inline ValidatedHierarchy validate_hierarchy(const HierarchyGraph& graph) {
    ValidatedHierarchy out;
    auto intern = [&](const std::string& id) {
        auto [it, inserted] = out.index.emplace(id, static_cast<int>(out.nodes.size()));
        if (inserted) out.nodes.push_back(id);
        return it->second;
    };
    for (const auto& v : graph.nodes) intern(v);
    for (const auto& e : graph.edges) {
        intern(e.src);
        intern(e.dst);
    }
    out.out.assign(out.nodes.size(), {});

    std::unordered_set<std::string> seen;
    for (const auto& e : graph.edges) {
        if (e.src == e.dst) throw ValidationError("self-loop on node '" + e.src + "'");
        if (!(e.weight > 0.0) || !std::isfinite(e.weight)) {
            throw ValidationError("non-positive weight on edge " + e.src + " -> " + e.dst);
        }
        if (!seen.insert(e.src + '\x1f' + e.dst).second) {
            throw ValidationError("duplicate edge " + e.src + " -> " + e.dst);
        }
        out.out[static_cast<std::size_t>(out.index.at(e.src))].push_back({out.index.at(e.dst), e.weight});
    }

    out.tree = detail::derive_tree(out);

    if (graph.levels) {
        if (!out.tree) throw ValidationError("cyclic or non-tree level structure");
        const auto& tree = *out.tree;
        for (const auto& [id, level] : *graph.levels) {
            if (!out.index.count(id)) throw ValidationError("level assigned to unknown node '" + id + "'");
            if (level != tree.depth[static_cast<std::size_t>(out.index.at(id))]) {
                throw ValidationError("level of node '" + id + "' inconsistent with its tree depth");
            }
        }
        if (graph.levels->size() != out.nodes.size()) {
            throw ValidationError("levels must be assigned to every node");
        }
    }
    return out;
}

/// As above, additionally requiring every node to name a catalog series.
inline ValidatedHierarchy validate_hierarchy(const HierarchyGraph& graph, const SeriesCatalog& catalog) {
    auto out = validate_hierarchy(graph);
    for (const auto& id : out.nodes) {
        if (!catalog.contains(id)) throw ValidationError("unknown node '" + id + "' not present in series catalog");
    }
    return out;
}

/// Solver-facing adjacency: out-neighbours per column of the observation matrix.
struct LoadingGraph {
    std::vector<std::vector<Neighbor>> out;

    std::size_t size() const { return out.size(); }
};

inline LoadingGraph to_loading_graph(const ValidatedHierarchy& h, const SeriesCatalog& catalog) {
    LoadingGraph g;
    g.out.assign(catalog.size(), {});
    for (std::size_t v = 0; v < h.nodes.size(); ++v) {
        const auto src = catalog.column(h.nodes[v]);
        for (const auto& nb : h.out[v]) {
            g.out[static_cast<std::size_t>(src)].push_back(
                {static_cast<int>(catalog.column(h.nodes[static_cast<std::size_t>(nb.node)])), nb.weight});
        }
    }
    return g;
}

/**
 * Model hyperparameters. Penalty names follow the objective terms:
 * lambda_f (loadings), lambda_x (factors), lambda_theta (AR coefficients);
 * eta_x trades ridge against AR smoothness on the factors, eta_f trades
 * ridge against graph smoothness on the loadings.
 */
struct Hyperparams {
    int d = 10;
    int p = 3;
    double lambda_f = 1.0;
    double lambda_x = 1.0;
    double lambda_theta = 1.0;
    double eta_x = 0.5;
    double eta_f = 0.5;
    int max_sweeps = 500;
    double tol = 1e-6;
    std::uint64_t seed = 0;

    void validate() const {
        if (d < 1) throw ValidationError("d must be >= 1");
        if (p < 1) throw ValidationError("p must be >= 1");
        if (!(lambda_f >= 0) || !(lambda_x >= 0) || !(lambda_theta >= 0)) {
            throw ValidationError("regularization weights must be non-negative");
        }
        if (!(eta_x >= 0 && eta_x <= 1)) throw ValidationError("eta_x must lie in [0, 1]");
        if (!(eta_f >= 0 && eta_f <= 1)) throw ValidationError("eta_f must lie in [0, 1]");
        if (max_sweeps < 1) throw ValidationError("max_sweeps must be >= 1");
        if (!(tol > 0)) throw ValidationError("tol must be positive");
    }

    void validate(Eigen::Index periods) const {
        validate();
        if (p >= periods) {
            throw ValidationError("AR order p=" + std::to_string(p) + " must satisfy p < T=" + std::to_string(periods));
        }
    }
};

} // namespace trmf
