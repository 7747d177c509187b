#pragma once

#include "trmf/errors.hpp"
#include "trmf/solver.hpp"

#include <string>

namespace trmf {

/// Point forecasts h steps past the last training period.
struct ForecastBlock {
    int horizon = 0;
    Matrix factor_paths;   // d x h
    Matrix value_paths;    // n x h
    Eigen::Index origin = 0;  // T, the number of training periods
};

struct ForecastOptions {
    /// Presentation-only clamp for demand data; off by default.
    bool clamp_nonnegative = false;
};

/**
 * Dynamic AR(p) recursion per factor. Lags that reach back to or before T
 * read the fitted factor values; later lags read earlier forecasts.
 */
inline Matrix forecast_factors(const FactorModel& m, int h) {
    if (h < 1) throw ValidationError("forecast horizon must be >= 1, got " + std::to_string(h));
    const Eigen::Index T = m.X.rows();
    const Eigen::Index d = m.X.cols();
    const Eigen::Index p = m.theta.cols();
    if (p >= T + 1) throw ValidationError("model history shorter than AR order");

    Matrix out(d, h);
    for (Eigen::Index j = 0; j < d; ++j) {
        // path(s) for s in [0, T + h): fitted values then forecasts
        Vector path(T + h);
        path.head(T) = m.X.col(j);
        for (Eigen::Index s = T; s < T + h; ++s) {
            double v = 0.0;
            for (Eigen::Index l = 1; l <= p; ++l) v += m.theta(j, l - 1) * path(s - l);
            path(s) = v;
        }
        out.row(j) = path.tail(h).transpose();
    }
    return out;
}

/// y_hat(i, T+k) = sum_j x_hat(j, T+k) F(j, i).
inline Matrix forecast_values(const FactorModel& m, int h, const ForecastOptions& opts = {}) {
    Matrix values = m.F.transpose() * forecast_factors(m, h);
    if (opts.clamp_nonnegative) values = values.cwiseMax(0.0);
    return values;
}

inline ForecastBlock forecast(const FactorModel& m, int h, const ForecastOptions& opts = {}) {
    ForecastBlock block;
    block.horizon = h;
    block.factor_paths = forecast_factors(m, h);
    block.value_paths = m.F.transpose() * block.factor_paths;
    if (opts.clamp_nonnegative) block.value_paths = block.value_paths.cwiseMax(0.0);
    block.origin = m.X.rows();
    return block;
}

/// In-sample reconstruction X F, including cells that were unobserved.
inline Matrix fitted_values(const FactorModel& m) { return m.X * m.F; }

} // namespace trmf
