#pragma once

// Independent reference computations used only by the tests. Each one is a
// literal loop over its definition and shares no code with include/trmf.

#include "trmf/data_model.hpp"
#include "trmf/solver.hpp"

#include <Eigen/Dense>

#include <functional>
#include <random>
#include <vector>

namespace trmf::oracle {

/// Term-by-term objective: masked reconstruction, loading penalty (ridge or
/// ridge + graph deviation), theta ridge, factor ridge + AR residuals.
inline double naive_objective(const ObservationMatrix& y, const Matrix& X, const Matrix& F, const Matrix& theta,
                              const Hyperparams& h, const LoadingGraph* graph) {
    const int T = static_cast<int>(X.rows());
    const int d = static_cast<int>(X.cols());
    const int n = static_cast<int>(F.cols());
    const int p = static_cast<int>(theta.cols());

    double recon = 0.0;
    for (int t = 0; t < T; ++t) {
        for (int i = 0; i < n; ++i) {
            if (!y.observed(t, i)) continue;
            double xf = 0.0;
            for (int j = 0; j < d; ++j) xf += X(t, j) * F(j, i);
            recon += (y.value(t, i) - xf) * (y.value(t, i) - xf);
        }
    }
    recon /= 2.0 * T * n;

    double f_sq = 0.0;
    for (int j = 0; j < d; ++j)
        for (int i = 0; i < n; ++i) f_sq += F(j, i) * F(j, i);
    double f_pen = 0.0;
    if (graph == nullptr) {
        f_pen = h.lambda_f / 2.0 * (1.0 / (d * n)) * f_sq;
    } else {
        double dev = 0.0;
        for (int i = 0; i < n; ++i) {
            const auto& nbrs = graph->out[static_cast<std::size_t>(i)];
            if (nbrs.empty()) continue;
            for (int j = 0; j < d; ++j) {
                double avg = 0.0;
                for (const auto& nb : nbrs) avg += F(j, nb.node) * nb.weight;
                avg /= static_cast<double>(nbrs.size());
                dev += (F(j, i) - avg) * (F(j, i) - avg);
            }
        }
        f_pen = h.lambda_f / 2.0 * ((1.0 - h.eta_f) * (1.0 / (d * n)) * f_sq + h.eta_f * (1.0 / (d * n)) * dev);
    }

    double th_sq = 0.0;
    for (int j = 0; j < d; ++j)
        for (int l = 0; l < p; ++l) th_sq += theta(j, l) * theta(j, l);
    const double th_pen = h.lambda_theta / 2.0 * (1.0 / (d * p)) * th_sq;

    double x_sq = 0.0;
    for (int t = 0; t < T; ++t)
        for (int j = 0; j < d; ++j) x_sq += X(t, j) * X(t, j);
    double ar = 0.0;
    for (int j = 0; j < d; ++j) {
        for (int t = p; t < T; ++t) {  // 0-based t = p..T-1 is 1-based p+1..T
            double pred = 0.0;
            for (int l = 1; l <= p; ++l) pred += theta(j, l - 1) * X(t - l, j);
            ar += (X(t, j) - pred) * (X(t, j) - pred);
        }
    }
    const double x_pen =
        h.lambda_x / 2.0 * ((1.0 - h.eta_x) * (1.0 / (T * d)) * x_sq + h.eta_x * (1.0 / ((T - p) * d)) * ar);

    return recon + f_pen + th_pen + x_pen;
}

inline double naive_objective(const ObservationMatrix& y, const FactorModel& m, const LoadingGraph* graph) {
    return naive_objective(y, m.X, m.F, m.theta, m.hyper, graph);
}

/// Largest |central difference| / max(1, |objective|) over every entry of X, F and theta.
inline double max_relative_gradient(const ObservationMatrix& y, const FactorModel& m, const LoadingGraph* graph,
                                    double step = 1e-6) {
    const double base = std::max(1.0, std::abs(naive_objective(y, m, graph)));
    double worst = 0.0;
    auto probe = [&](Matrix& target) {
        for (Eigen::Index k = 0; k < target.size(); ++k) {
            const double orig = target.data()[k];
            target.data()[k] = orig + step;
            const double up = naive_objective(y, m, graph);
            target.data()[k] = orig - step;
            const double down = naive_objective(y, m, graph);
            target.data()[k] = orig;
            worst = std::max(worst, std::abs((up - down) / (2.0 * step)) / base);
        }
    };
    FactorModel& mm = const_cast<FactorModel&>(m);
    probe(mm.X);
    probe(mm.F);
    probe(mm.theta);
    return worst;
}

/// Per-column ridge normal equations solved with a dense QR, no masking tricks.
inline Matrix ridge_loadings(const ObservationMatrix& y, const Matrix& X, double lambda_f) {
    const Eigen::Index T = X.rows();
    const Eigen::Index d = X.cols();
    const Eigen::Index n = y.series();
    Matrix F(d, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        std::vector<Eigen::Index> rows;
        for (Eigen::Index t = 0; t < T; ++t)
            if (y.observed(t, i)) rows.push_back(t);
        // Stack [X_obs; sqrt(c) I] and [y_obs; 0], c = lambda_f * T / d.
        const double c = lambda_f * static_cast<double>(T) / static_cast<double>(d);
        Matrix A(static_cast<Eigen::Index>(rows.size()) + d, d);
        Vector b = Vector::Zero(A.rows());
        for (std::size_t r = 0; r < rows.size(); ++r) {
            A.row(static_cast<Eigen::Index>(r)) = X.row(rows[r]);
            b(static_cast<Eigen::Index>(r)) = y.value(rows[r], i);
        }
        A.bottomRows(d) = std::sqrt(c) * Matrix::Identity(d, d);
        F.col(i) = A.colPivHouseholderQr().solve(b);
    }
    return F;
}

/// theta_j from the stated normal equations (a L^T L + b I) theta = a L^T x.
inline Vector ar_normal_equations(const Vector& x, int p, double a, double b) {
    const Eigen::Index T = x.size();
    Matrix L(T - p, p);
    Vector z(T - p);
    for (Eigen::Index t = p; t < T; ++t) {
        z(t - p) = x(t);
        for (int l = 1; l <= p; ++l) L(t - p, l - 1) = x(t - l);
    }
    Matrix A = a * L.transpose() * L + b * Matrix::Identity(p, p);
    return A.fullPivLu().solve(a * L.transpose() * z);
}

/// Explicit unrolling of the AR recursion on a history vector.
inline std::vector<double> unroll_ar(std::vector<double> history, const std::vector<double>& coef, int h,
                                     double intercept = 0.0) {
    std::vector<double> out;
    for (int k = 0; k < h; ++k) {
        double v = intercept;
        for (std::size_t l = 0; l < coef.size(); ++l) v += coef[l] * history[history.size() - 1 - l];
        history.push_back(v);
        out.push_back(v);
    }
    return out;
}

/// Value of every node as the recursive sum of its children (leaves read `leaf_value`).
inline double tree_sum(int v, const std::vector<std::vector<int>>& children,
                       const std::function<double(int)>& leaf_value) {
    if (children[static_cast<std::size_t>(v)].empty()) return leaf_value(v);
    double s = 0.0;
    for (int c : children[static_cast<std::size_t>(v)]) s += tree_sum(c, children, leaf_value);
    return s;
}

/// Random small instance helpers.
inline ObservationMatrix random_observations(int T, int n, double density, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::uniform_real_distribution<double> coin(0.0, 1.0);
    Matrix v(T, n);
    MaskMatrix mask(T, n);
    for (Eigen::Index k = 0; k < v.size(); ++k) {
        v.data()[k] = u(rng);
        mask.data()[k] = coin(rng) < density ? 1 : 0;
    }
    return ObservationMatrix(v, mask);
}

inline FactorModel random_model(int T, int n, int d, int p, const Hyperparams& h, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    FactorModel m;
    m.hyper = h;
    m.hyper.d = d;
    m.hyper.p = p;
    m.X = Matrix::NullaryExpr(T, d, [&] { return u(rng); });
    m.F = Matrix::NullaryExpr(d, n, [&] { return u(rng); });
    m.theta = Matrix::NullaryExpr(d, p, [&] { return 0.5 * u(rng); });
    return m;
}

} // namespace trmf::oracle
