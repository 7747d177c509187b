#pragma once

#include "trmf/banded.hpp"
#include "trmf/data_model.hpp"
#include "trmf/errors.hpp"
#include "trmf/parallel.hpp"

#include <Eigen/Dense>

#include <chrono>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace trmf {

/// Fitted temporal-regularized factorization Y ~ X F with AR(p) factor dynamics.
struct FactorModel {
    Matrix X;        // T x d latent factor series
    Matrix F;        // d x n loadings
    Matrix theta;    // d x p, row j = AR coefficients of factor j (lag 1 first)
    Hyperparams hyper;
    std::vector<double> objective_trace;

    Eigen::Index periods() const { return X.rows(); }
    Eigen::Index factors() const { return X.cols(); }
    Eigen::Index series() const { return F.cols(); }
    Eigen::Index order() const { return theta.cols(); }
};

struct FitReport {
    int sweeps_run = 0;
    double final_objective = 0.0;
    bool converged = false;
    double wallclock = 0.0;  // seconds
    std::vector<std::string> warnings;
};

struct FitResult {
    FactorModel model;
    FitReport report;
};

struct SolverOptions {
    unsigned threads = 1;
    /// Cap on Gauss-Seidel cycles of the graph-coupled loading update.
    int max_loading_cycles = 10000;
};

/// The four additive pieces of the objective, for diagnostics.
struct ObjectiveTerms {
    double reconstruction = 0.0;
    double loadings = 0.0;
    double ar_coefficients = 0.0;
    double factors = 0.0;

    double total() const { return reconstruction + loadings + ar_coefficients + factors; }
};

namespace detail {

inline void check_dimensions(const ObservationMatrix& y, const FactorModel& m, const LoadingGraph* graph) {
    const auto T = y.periods();
    const auto n = y.series();
    const auto d = m.X.cols();
    if (d < 1) throw ValidationError("factor count must be >= 1");
    if (m.X.rows() != T) throw ValidationError("X has " + std::to_string(m.X.rows()) + " rows, expected T=" + std::to_string(T));
    if (m.F.rows() != d || m.F.cols() != n) {
        throw ValidationError("F must be " + std::to_string(d) + " x " + std::to_string(n));
    }
    if (m.theta.rows() != d || m.theta.cols() < 1) throw ValidationError("theta must have d rows and p >= 1 columns");
    if (m.theta.cols() >= T) {
        throw ValidationError("AR order p=" + std::to_string(m.theta.cols()) + " must satisfy p < T=" + std::to_string(T));
    }
    if (graph && graph->size() != static_cast<std::size_t>(n)) {
        throw ValidationError("loading graph size does not match series count");
    }
}

inline Matrix mask_as_double(const ObservationMatrix& y) { return y.mask().cast<double>(); }

/// Sum over t = p..T-1 of (x_t - sum_l theta_l x_{t-l})^2 for one factor.
inline double ar_residual_sq(const Eigen::Ref<const Vector>& x, const Eigen::Ref<const Vector>& theta) {
    const Eigen::Index T = x.size();
    const Eigen::Index p = theta.size();
    double s = 0.0;
    for (Eigen::Index t = p; t < T; ++t) {
        double r = x(t);
        for (Eigen::Index l = 1; l <= p; ++l) r -= theta(l - 1) * x(t - l);
        s += r * r;
    }
    return s;
}

/// Sum of squared deviations of each column from its weighted neighbour average.
inline double graph_deviation(const Matrix& F, const LoadingGraph& graph) {
    double s = 0.0;
    for (std::size_t i = 0; i < graph.size(); ++i) {
        const auto& nbrs = graph.out[i];
        if (nbrs.empty()) continue;
        Vector avg = Vector::Zero(F.rows());
        for (const auto& nb : nbrs) avg += nb.weight * F.col(nb.node);
        avg /= static_cast<double>(nbrs.size());
        s += (F.col(static_cast<Eigen::Index>(i)) - avg).squaredNorm();
    }
    return s;
}

inline double loadings_penalty(const Matrix& F, const Hyperparams& h, const LoadingGraph* graph) {
    const double dn = static_cast<double>(F.rows()) * static_cast<double>(F.cols());
    if (!graph) return 0.5 * h.lambda_f * F.squaredNorm() / dn;
    return 0.5 * h.lambda_f * ((1.0 - h.eta_f) * F.squaredNorm() / dn + h.eta_f * graph_deviation(F, *graph) / dn);
}

inline double masked_reconstruction(const ObservationMatrix& y, const Matrix& X, const Matrix& F) {
    const Matrix fitted = X * F;
    double s = 0.0;
    for (Eigen::Index i = 0; i < y.series(); ++i) {
        for (Eigen::Index t = 0; t < y.periods(); ++t) {
            if (y.observed(t, i)) {
                const double r = y.value(t, i) - fitted(t, i);
                s += r * r;
            }
        }
    }
    return s / (2.0 * static_cast<double>(y.periods()) * static_cast<double>(y.series()));
}

} // namespace detail

inline ObjectiveTerms objective_terms(const ObservationMatrix& y, const FactorModel& m,
                                      const LoadingGraph* graph = nullptr) {
    detail::check_dimensions(y, m, graph);
    const auto& h = m.hyper;
    const double T = static_cast<double>(m.X.rows());
    const double d = static_cast<double>(m.X.cols());
    const double p = static_cast<double>(m.theta.cols());

    ObjectiveTerms terms;
    terms.reconstruction = detail::masked_reconstruction(y, m.X, m.F);
    terms.loadings = detail::loadings_penalty(m.F, h, graph);
    terms.ar_coefficients = 0.5 * h.lambda_theta * m.theta.squaredNorm() / (d * p);

    double ar = 0.0;
    for (Eigen::Index j = 0; j < m.X.cols(); ++j) {
        ar += detail::ar_residual_sq(m.X.col(j), m.theta.row(j).transpose());
    }
    terms.factors = 0.5 * h.lambda_x *
                    ((1.0 - h.eta_x) * m.X.squaredNorm() / (T * d) + h.eta_x * ar / ((T - p) * d));
    return terms;
}

/**
 * Full objective: masked reconstruction with the 1/(2Tn) normalizer, ridge
 * (or graph-smoothed) loading penalty, AR-coefficient ridge, and the factor
 * penalty mixing ridge and AR-residual smoothness via eta_x.
 */
inline double evaluate_objective(const ObservationMatrix& y, const FactorModel& m,
                                 const LoadingGraph* graph = nullptr) {
    return objective_terms(y, m, graph).total();
}

/**
 * Exact minimizer of the objective over F with X and theta fixed.
 *
 * Without a graph each column is an independent d x d ridge system over the
 * rows observed in that column. With a graph, columns are coupled; each
 * Gauss-Seidel step minimizes exactly over one column (including the terms
 * where that column appears in another column's neighbour average) and
 * cycles repeat until the loading-block objective stops decreasing by more
 * than hyper.tol relative.
 */
inline Matrix update_loadings(const ObservationMatrix& y, const FactorModel& m, const LoadingGraph* graph = nullptr,
                              const SolverOptions& opts = {}) {
    detail::check_dimensions(y, m, graph);
    const auto& h = m.hyper;
    const Eigen::Index T = y.periods();
    const Eigen::Index n = y.series();
    const Eigen::Index d = m.X.cols();
    const double c = h.lambda_f * static_cast<double>(T) / static_cast<double>(d);

    std::vector<Matrix> gram(static_cast<std::size_t>(n));
    std::vector<Vector> xty(static_cast<std::size_t>(n));
    std::vector<Eigen::Index> counts(static_cast<std::size_t>(n), 0);
    parallel_for(static_cast<std::size_t>(n), opts.threads, [&](std::size_t ci) {
        const auto i = static_cast<Eigen::Index>(ci);
        Matrix g = Matrix::Zero(d, d);
        Vector b = Vector::Zero(d);
        Eigen::Index count = 0;
        for (Eigen::Index t = 0; t < T; ++t) {
            if (!y.observed(t, i)) continue;
            const auto row = m.X.row(t).transpose();
            g.selfadjointView<Eigen::Lower>().rankUpdate(row);
            b += row * y.value(t, i);
            ++count;
        }
        gram[ci] = g.selfadjointView<Eigen::Lower>();
        xty[ci] = std::move(b);
        counts[ci] = count;
    });

    auto solve_column = [&](Eigen::Index i, double diag, const Vector& extra_rhs) -> Vector {
        const auto ci = static_cast<std::size_t>(i);
        if (!(diag > 0.0) && counts[ci] < d) {
            throw NumericalError("underdetermined column " + std::to_string(i) + ": " + std::to_string(counts[ci]) +
                                 " observations for d=" + std::to_string(d) + " with no loading penalty");
        }
        Matrix a = gram[ci];
        a.diagonal().array() += diag;
        Eigen::LLT<Matrix> llt(a);
        if (llt.info() != Eigen::Success) {
            throw NumericalError("underdetermined column " + std::to_string(i) + ": singular normal equations");
        }
        return llt.solve(xty[ci] + extra_rhs);
    };

    Matrix F = m.F;
    if (!graph || h.eta_f == 0.0 || h.lambda_f == 0.0) {
        const double ridge = graph ? c * (1.0 - h.eta_f) : c;
        const Vector zero = Vector::Zero(d);
        parallel_for(static_cast<std::size_t>(n), opts.threads, [&](std::size_t ci) {
            F.col(static_cast<Eigen::Index>(ci)) = solve_column(static_cast<Eigen::Index>(ci), ridge, zero);
        });
        return F;
    }

    // Reverse adjacency: for column i, the columns k whose neighbour average includes i.
    struct InLink {
        int from;
        double w;  // W_ki / |N_k|
    };
    std::vector<std::vector<InLink>> in(static_cast<std::size_t>(n));
    for (std::size_t k = 0; k < graph->size(); ++k) {
        const auto& nbrs = graph->out[k];
        for (const auto& nb : nbrs) {
            in[static_cast<std::size_t>(nb.node)].push_back({static_cast<int>(k), nb.weight / static_cast<double>(nbrs.size())});
        }
    }
    auto neighbour_average = [&](std::size_t k, int skip) {
        Vector avg = Vector::Zero(d);
        const auto& nbrs = graph->out[k];
        for (const auto& nb : nbrs) {
            if (nb.node != skip) avg += nb.weight * F.col(nb.node);
        }
        return Vector(avg / static_cast<double>(nbrs.size()));
    };
    auto block_objective = [&] {
        return detail::masked_reconstruction(y, m.X, F) + detail::loadings_penalty(F, h, graph);
    };

    double prev = block_objective();
    for (int cycle = 0; cycle < opts.max_loading_cycles; ++cycle) {
        for (Eigen::Index i = 0; i < n; ++i) {
            const auto ci = static_cast<std::size_t>(i);
            double diag = c * (1.0 - h.eta_f);
            Vector extra = Vector::Zero(d);
            if (!graph->out[ci].empty()) {
                diag += c * h.eta_f;
                extra += c * h.eta_f * neighbour_average(ci, -1);
            }
            for (const auto& link : in[ci]) {
                diag += c * h.eta_f * link.w * link.w;
                const auto k = static_cast<std::size_t>(link.from);
                extra += c * h.eta_f * link.w * (F.col(link.from) - neighbour_average(k, static_cast<int>(i)));
            }
            F.col(i) = solve_column(i, diag, extra);
        }
        const double obj = block_objective();
        const double rel = (prev - obj) / std::max(prev, 1e-30);
        prev = obj;
        if (rel < h.tol) break;
    }
    return F;
}

/**
 * One Gauss-Seidel cycle over factor dimensions. For dimension j the
 * subproblem in X(:, j) has a symmetric positive definite Hessian with
 * half-bandwidth p and is solved exactly by banded Cholesky.
 */
inline Matrix update_factors(const ObservationMatrix& y, const FactorModel& m) {
    detail::check_dimensions(y, m, nullptr);
    const auto& h = m.hyper;
    const Eigen::Index T = y.periods();
    const Eigen::Index n = y.series();
    const Eigen::Index d = m.X.cols();
    const Eigen::Index p = m.theta.cols();
    const double Tn = static_cast<double>(T) * static_cast<double>(n);
    const double ridge = h.lambda_x * Tn * (1.0 - h.eta_x) / (static_cast<double>(T) * static_cast<double>(d));
    const double smooth = h.lambda_x * Tn * h.eta_x / (static_cast<double>(T - p) * static_cast<double>(d));

    const Matrix mask = detail::mask_as_double(y);
    Matrix X = m.X;
    Matrix resid = mask.cwiseProduct(y.values() - X * m.F);

    for (Eigen::Index j = 0; j < d; ++j) {
        const Vector fj = m.F.row(j).transpose();
        const Vector weight = mask * fj.cwiseAbs2();
        const Vector rhs = resid * fj + X.col(j).cwiseProduct(weight);

        BandedSpdMatrix hess(T, p);
        for (Eigen::Index t = 0; t < T; ++t) {
            if (h.lambda_x == 0.0 && weight(t) == 0.0) {
                throw NumericalError("unconstrained factor row " + std::to_string(t) +
                                     ": no observations and no factor penalty");
            }
            hess.add_diagonal(t, weight(t) + ridge);
        }
        if (smooth > 0.0) {
            // coef * v v^T with v = e_t - sum_l theta_l e_{t-l}
            Vector v(p + 1);
            v(0) = 1.0;
            for (Eigen::Index l = 1; l <= p; ++l) v(l) = -m.theta(j, l - 1);
            for (Eigen::Index t = p; t < T; ++t) {
                for (Eigen::Index a = 0; a <= p; ++a) {
                    for (Eigen::Index b = a; b <= p; ++b) hess.add(t - a, t - b, smooth * v(a) * v(b));
                }
            }
        }
        if (!hess.factorize()) {
            throw NumericalError("singular factor system for dimension " + std::to_string(j));
        }
        const Vector x = hess.solve(rhs);
        const Vector delta = x - X.col(j);
        resid.noalias() -= mask.cwiseProduct(delta * fj.transpose());
        X.col(j) = x;
    }
    return X;
}

/**
 * Per-factor ridge-regularized least squares for the AR coefficients:
 * minimizes a * sum_t (x_t - sum_l theta_l x_{t-l})^2 + b * |theta|^2 with
 * a = lambda_x eta_x / ((T-p) d) and b = lambda_theta / (d p).
 */
inline Matrix update_ar_coeffs(const FactorModel& m, const SolverOptions& opts = {}) {
    const auto& h = m.hyper;
    const Eigen::Index T = m.X.rows();
    const Eigen::Index d = m.X.cols();
    const Eigen::Index p = m.theta.cols();
    if (p < 1 || p >= T) throw ValidationError("AR order must satisfy 1 <= p < T");
    const double a = h.lambda_x * h.eta_x / (static_cast<double>(T - p) * static_cast<double>(d));
    const double b = h.lambda_theta / (static_cast<double>(d) * static_cast<double>(p));

    Matrix theta(d, p);
    parallel_for(static_cast<std::size_t>(d), opts.threads, [&](std::size_t cj) {
        const auto j = static_cast<Eigen::Index>(cj);
        if (a == 0.0) {
            if (b == 0.0) throw NumericalError("degenerate lag matrix: AR coefficients are unconstrained");
            theta.row(j).setZero();
            return;
        }
        Matrix lags(T - p, p);
        Vector target(T - p);
        for (Eigen::Index t = p; t < T; ++t) {
            target(t - p) = m.X(t, j);
            for (Eigen::Index l = 1; l <= p; ++l) lags(t - p, l - 1) = m.X(t - l, j);
        }
        if (b == 0.0 && Eigen::ColPivHouseholderQR<Matrix>(lags).rank() < p) {
            throw NumericalError("degenerate lag matrix for factor " + std::to_string(j));
        }
        Matrix normal = a * lags.transpose() * lags;
        normal.diagonal().array() += b;
        Eigen::LLT<Matrix> llt(normal);
        if (llt.info() != Eigen::Success) {
            throw NumericalError("degenerate lag matrix for factor " + std::to_string(j));
        }
        theta.row(j) = llt.solve(a * lags.transpose() * target).transpose();
    });
    return theta;
}

namespace detail {

/// Uniform on [-0.5, 0.5) from the top 53 bits of a 64-bit draw; independent of the standard library's distributions.
inline double centered_uniform(std::mt19937_64& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53 - 0.5;
}

} // namespace detail

/// Seeded starting point: X, F uniform on [-0.5, 0.5] / sqrt(d), theta = 0.
inline FactorModel initial_model(Eigen::Index periods, Eigen::Index series, const Hyperparams& h) {
    std::mt19937_64 rng(h.seed);
    const double scale = 1.0 / std::sqrt(static_cast<double>(h.d));
    FactorModel m;
    m.hyper = h;
    m.X.resize(periods, h.d);
    m.F.resize(h.d, series);
    for (Eigen::Index k = 0; k < m.X.size(); ++k) m.X.data()[k] = scale * detail::centered_uniform(rng);
    for (Eigen::Index k = 0; k < m.F.size(); ++k) m.F.data()[k] = scale * detail::centered_uniform(rng);
    m.theta = Matrix::Zero(h.d, h.p);
    return m;
}

/**
 * Block coordinate descent: each sweep updates X, then F, then theta, each
 * by exact minimization, and appends the objective to the trace. Stops when
 * the relative decrease over a sweep falls below hyper.tol or after
 * hyper.max_sweeps sweeps.
 */
inline FitResult fit(const ObservationMatrix& y, const Hyperparams& hyper, const LoadingGraph* graph = nullptr,
                     const SolverOptions& opts = {}) {
    hyper.validate(y.periods());
    const auto start = std::chrono::steady_clock::now();

    FitResult result;
    auto& report = result.report;
    if (hyper.d >= y.series()) {
        report.warnings.push_back("d=" + std::to_string(hyper.d) + " >= n=" + std::to_string(y.series()) +
                                  ": factorization is underdetermined");
    }
    if (hyper.d >= y.periods()) {
        report.warnings.push_back("d=" + std::to_string(hyper.d) + " >= T=" + std::to_string(y.periods()) +
                                  ": factorization is underdetermined");
    }

    FactorModel m = initial_model(y.periods(), y.series(), hyper);
    double prev = evaluate_objective(y, m, graph);
    for (int sweep = 0; sweep < hyper.max_sweeps; ++sweep) {
        m.X = update_factors(y, m);
        m.F = update_loadings(y, m, graph, opts);
        m.theta = update_ar_coeffs(m, opts);
        const double obj = evaluate_objective(y, m, graph);
        m.objective_trace.push_back(obj);
        report.sweeps_run = sweep + 1;
        const double rel = (prev - obj) / std::max(prev, 1e-30);
        prev = obj;
        if (rel < hyper.tol) {
            report.converged = true;
            break;
        }
    }
    report.final_objective = prev;
    report.wallclock = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    result.model = std::move(m);
    return result;
}

} // namespace trmf
