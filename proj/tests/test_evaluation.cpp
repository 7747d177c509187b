#include "oracles.hpp"
#include "trmf/evaluation.hpp"

#include <gtest/gtest.h>

#include <atomic>
#include <random>

using namespace trmf;

namespace {

double smape_v(std::vector<double> f, std::vector<double> a) { return smape(f, a); }

ScoreRow row(std::string s, std::int64_t period, std::string m, double v, int step = 1) {
    return {std::move(s), period, step, std::move(m), v};
}

double median_for(const std::vector<MedianScore>& out, const std::string& m, std::int64_t group = 0) {
    for (const auto& r : out)
        if (r.method == m && r.group == group) return r.median;
    ADD_FAILURE() << "missing method " << m;
    return -1;
}

} // namespace

TEST(Smape, Examples) {
    EXPECT_EQ(smape_v({3.5, 7.0}, {3.5, 7.0}), 0.0);
    EXPECT_EQ(smape_v({0.0}, {10.0}), 100.0);
    EXPECT_NEAR(smape_v({5, 15}, {10, 10}), 100.0 * (5.0 / 15.0 + 5.0 / 25.0) / 2.0, 1e-12);
    EXPECT_NEAR(smape_v({5, 15}, {10, 10}), 80.0 / 3.0, 1e-12);
    EXPECT_EQ(smape_v({0.0, 0.0}, {0.0, 0.0}), 0.0);
}

TEST(Smape, Errors) {
    EXPECT_THROW(smape_v({1.0}, {1.0, 2.0}), ValidationError);
    EXPECT_THROW(smape_v({}, {}), ValidationError);
}

TEST(Smape, PropertySymmetryRangeScale) {
    std::mt19937_64 rng(123);
    std::uniform_real_distribution<double> u(-100, 100);
    std::uniform_int_distribution<int> len(1, 20), expo(-20, 20);
    std::uniform_real_distribution<double> c(1e-3, 1e3);
    for (int trial = 0; trial < 1000; ++trial) {
        const int n = len(rng);
        std::vector<double> f(static_cast<std::size_t>(n)), a(static_cast<std::size_t>(n));
        for (int k = 0; k < n; ++k) {
            f[static_cast<std::size_t>(k)] = u(rng);
            a[static_cast<std::size_t>(k)] = u(rng);
        }
        const double s = smape(f, a);
        EXPECT_EQ(s, smape(a, f));
        EXPECT_GE(s, 0.0);
        EXPECT_LE(s, 100.0);

        // Binary scale factors commute with every rounding step.
        const double two_k = std::ldexp(1.0, expo(rng));
        auto fs = f, as = a;
        for (auto& v : fs) v *= two_k;
        for (auto& v : as) v *= two_k;
        EXPECT_EQ(smape(fs, as), s);

        const double cc = c(rng);
        for (int k = 0; k < n; ++k) {
            fs[static_cast<std::size_t>(k)] = f[static_cast<std::size_t>(k)] * cc;
            as[static_cast<std::size_t>(k)] = a[static_cast<std::size_t>(k)] * cc;
        }
        EXPECT_NEAR(smape(fs, as), s, 1e-12);
    }
}

TEST(ScoreTable, Invariants) {
    ScoreTable t;
    t.add(row("a", 0, "m", 10));
    EXPECT_THROW(t.add(row("a", 0, "m", 20)), ValidationError);
    EXPECT_THROW(t.add(row("a", 1, "m", 101)), ValidationError);
    EXPECT_THROW(t.add(row("a", 1, "m", -1)), ValidationError);
    EXPECT_NO_THROW(t.add(row("a", 0, "n", 20)));
    EXPECT_EQ(t.methods(), (std::vector<std::string>{"m", "n"}));
}

TEST(MinmaxMedian, Examples) {
    ScoreTable t;
    t.add(row("s1", 0, "A", 10));
    t.add(row("s1", 0, "B", 20));
    t.add(row("s2", 0, "A", 30));
    t.add(row("s2", 0, "B", 10));
    const auto out = minmax_median(t);
    EXPECT_DOUBLE_EQ(median_for(out, "A"), 0.5);
    EXPECT_DOUBLE_EQ(median_for(out, "B"), 0.5);

    ScoreTable single;
    single.add(row("s1", 0, "A", 10));
    single.add(row("s2", 0, "A", 90));
    EXPECT_EQ(median_for(minmax_median(single), "A"), 0.0);

    ScoreTable dom;
    for (int s = 0; s < 5; ++s) {
        dom.add(row("s" + std::to_string(s), 0, "A", 5.0 + s));
        dom.add(row("s" + std::to_string(s), 0, "B", 50.0 + s));
    }
    const auto d = minmax_median(dom);
    EXPECT_EQ(median_for(d, "A"), 0.0);
    EXPECT_EQ(median_for(d, "B"), 1.0);

    EXPECT_THROW(minmax_median(ScoreTable{}), ValidationError);
}

TEST(MinmaxMedian, GroupsByPeriodOrStep) {
    ScoreTable t;
    t.add(row("s", 10, "A", 1, 1));
    t.add(row("s", 10, "B", 2, 1));
    t.add(row("s", 11, "A", 4, 2));
    t.add(row("s", 11, "B", 3, 2));
    const auto by_period = minmax_median(t, GroupKey::Period);
    EXPECT_EQ(median_for(by_period, "A", 10), 0.0);
    EXPECT_EQ(median_for(by_period, "A", 11), 1.0);
    const auto by_step = minmax_median(t, GroupKey::Step);
    EXPECT_EQ(median_for(by_step, "B", 1), 1.0);
    EXPECT_EQ(median_for(by_step, "B", 2), 0.0);
    const auto mean = mean_over_groups(by_period, t.methods());
    EXPECT_EQ(mean[0].first, "A");
    EXPECT_DOUBLE_EQ(mean[0].second, 0.5);
}

TEST(MinmaxMedian, PropertyOrderingPreserved) {
    std::mt19937_64 rng(77);
    std::uniform_real_distribution<double> u(0, 50);
    for (int trial = 0; trial < 300; ++trial) {
        ScoreTable t;
        const int n = 1 + trial % 9;
        for (int s = 0; s < n; ++s) {
            const double a = u(rng);
            const double b = a + u(rng);  // A <= B everywhere
            const double c = u(rng) * 2;
            t.add(row("s" + std::to_string(s), 3, "A", a));
            t.add(row("s" + std::to_string(s), 3, "B", b));
            t.add(row("s" + std::to_string(s), 3, "C", c));
        }
        const auto out = minmax_median(t);
        EXPECT_LE(median_for(out, "A", 3), median_for(out, "B", 3));
        for (const auto& r : out) {
            EXPECT_GE(r.median, 0.0);
            EXPECT_LE(r.median, 1.0);
        }
    }
}

TEST(ARBaseline, ConstantSeriesPersists) {
    const auto y = ObservationMatrix::dense(Matrix::Constant(12, 2, 4.5));
    const auto m = fit_ar_baseline(y, 2);
    const Matrix fc = forecast_ar_baseline(m, 6);
    for (Eigen::Index k = 0; k < fc.size(); ++k) EXPECT_NEAR(fc.data()[k], 4.5, 1e-6);
}

TEST(ARBaseline, RecoversExactAR1AndMatchesHandRecursion) {
    Matrix v(30, 1);
    v(0, 0) = 5.0;
    for (int t = 1; t < 30; ++t) v(t, 0) = 0.8 * v(t - 1, 0);
    const auto m = fit_ar_baseline(ObservationMatrix::dense(v), 1);
    ASSERT_TRUE(m.series[0].modelable);
    EXPECT_NEAR(m.series[0].coefficients(0), 0.8, 1e-9);
    EXPECT_NEAR(m.series[0].intercept, 0.0, 1e-9);
    const Matrix fc = forecast_ar_baseline(m, 4);
    double x = v(29, 0);
    for (int k = 0; k < 4; ++k) {
        x *= 0.8;
        EXPECT_NEAR(fc(0, k), x, 1e-9);
    }
}

TEST(ARBaseline, ShortSeriesUnmodelableFallsBackToLastValue) {
    Matrix v(6, 2);
    v.col(0) << 1, 2, 3, 4, 5, 6;
    v.col(1) << 1, 0, 2, 0, 7, 0;
    MaskMatrix mask = MaskMatrix::Ones(6, 2);
    mask(1, 1) = mask(3, 1) = mask(5, 1) = 0;  // no contiguous run of 4
    const auto m = fit_ar_baseline(ObservationMatrix(v, mask), 2);
    EXPECT_TRUE(m.series[0].modelable);
    EXPECT_FALSE(m.series[1].modelable);
    const Matrix fc = forecast_ar_baseline(m, 3);
    for (int k = 0; k < 3; ++k) EXPECT_EQ(fc(1, k), 7.0);
    EXPECT_THROW(fit_ar_baseline(ObservationMatrix(v, mask), 0), ValidationError);
}

TEST(ARBaseline, PropertyRandomModelMatchesUnrolledRecursion) {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(-1, 1);
    for (int trial = 0; trial < 50; ++trial) {
        const int p = 1 + trial % 4;
        ARBaselineModel m;
        m.order = p;
        m.series.resize(3);
        for (auto& s : m.series) {
            s.modelable = true;
            s.coefficients = Vector::NullaryExpr(p, [&] { return 0.4 * u(rng); });
            s.intercept = u(rng);
            s.recent = Vector::NullaryExpr(p, [&] { return u(rng); });
        }
        const int h = 1 + trial % 8;
        const Matrix fc = forecast_ar_baseline(m, h);
        for (std::size_t i = 0; i < 3; ++i) {
            const auto& s = m.series[i];
            const auto expected = oracle::unroll_ar(std::vector<double>(s.recent.data(), s.recent.data() + p),
                                                    std::vector<double>(s.coefficients.data(), s.coefficients.data() + p),
                                                    h, s.intercept);
            for (int k = 0; k < h; ++k)
                EXPECT_NEAR(fc(static_cast<Eigen::Index>(i), k), expected[static_cast<std::size_t>(k)], 1e-14);
        }
    }
}

TEST(ARBaseline, RankDeficientDesignIsRidgedAndFlagged) {
    // A linear trend makes lag 1, lag 2 and the intercept collinear.
    Matrix v(10, 1);
    for (int t = 0; t < 10; ++t) v(t, 0) = 1.0 + t;
    const auto m = fit_ar_baseline(ObservationMatrix::dense(v), 2);
    EXPECT_TRUE(m.series[0].modelable);
    EXPECT_TRUE(m.series[0].ridged);
    EXPECT_NEAR(forecast_ar_baseline(m, 1)(0, 0), 11.0, 1e-4);
}

namespace {

Observations ramp_data(int T, int n) {
    std::vector<Record> recs;
    for (int i = 0; i < n; ++i)
        for (int t = 0; t < T; ++t) recs.push_back({"s" + std::to_string(i), 100 + t, 1.0 + t + 10.0 * i});
    return assemble_observations(recs);
}

MethodSpec perfect_foresight(const ObservationMatrix& full) {
    return {"oracle", [full](const ObservationMatrix& train, int h) {
                MethodForecast out;
                out.values = full.values().block(train.periods(), 0, h, full.series()).transpose();
                return out;
            }};
}

} // namespace

TEST(RollingBacktest, SingleFoldSingleStep) {
    const auto obs = ramp_data(8, 2);
    std::vector<Eigen::Index> seen;
    MethodSpec naive{"naive", [&](const ObservationMatrix& train, int h) {
                         seen.push_back(train.periods());
                         MethodForecast out;
                         out.values = train.values().row(train.periods() - 1).transpose().replicate(1, h);
                         return out;
                     }};
    const auto res = rolling_backtest(obs.matrix, obs.catalog, {naive}, {1, 1, 0, 1});
    EXPECT_EQ(seen, (std::vector<Eigen::Index>{7}));
    ASSERT_EQ(res.scores.rows().size(), 2u);
    EXPECT_EQ(res.scores.rows()[0].period, 107);
    EXPECT_EQ(res.scores.rows()[0].step, 1);
    EXPECT_NEAR(res.scores.rows()[0].smape_percent, 100.0 * 1.0 / 15.0, 1e-12);
}

TEST(RollingBacktest, PerfectForesightScoresZero) {
    const auto obs = ramp_data(20, 3);
    const auto res = rolling_backtest(obs.matrix, obs.catalog, {perfect_foresight(obs.matrix)}, {3, 4, 2, 1});
    EXPECT_EQ(res.scores.rows().size(), 3u * 12u);
    for (const auto& r : res.scores.rows()) EXPECT_EQ(r.smape_percent, 0.0);
}

TEST(RollingBacktest, InsufficientHistory) {
    const auto obs = ramp_data(10, 1);
    EXPECT_THROW(rolling_backtest(obs.matrix, obs.catalog, {perfect_foresight(obs.matrix)}, {3, 2, 3, 1}),
                 ValidationError);
    EXPECT_NO_THROW(rolling_backtest(obs.matrix, obs.catalog, {perfect_foresight(obs.matrix)}, {3, 2, 2, 1}));
}

TEST(RollingBacktest, PropertySplitIntegrity) {
    for (int trial = 0; trial < 20; ++trial) {
        const int h = 1 + trial % 4, k = 1 + trial % 3;
        const int T = h * k + 5 + trial % 6;
        const auto obs = ramp_data(T, 2);
        std::atomic<int> violations{0};
        std::vector<int> fold_sizes;
        MethodSpec spy{"spy", [&](const ObservationMatrix& train, int hh) {
                           // Values encode their period, so any leak past the boundary is visible.
                           const double expected_last = static_cast<double>(train.periods());
                           if (train.value(train.periods() - 1, 0) != expected_last) ++violations;
                           fold_sizes.push_back(static_cast<int>(train.periods()));
                           MethodForecast out;
                           out.values = Matrix::Ones(train.series(), hh);
                           return out;
                       }};
        rolling_backtest(obs.matrix, obs.catalog, {spy}, {h, k, 0, 1});
        EXPECT_EQ(violations.load(), 0);
        ASSERT_EQ(fold_sizes.size(), static_cast<std::size_t>(k));
        for (int f = 1; f <= k; ++f) EXPECT_EQ(fold_sizes[static_cast<std::size_t>(f - 1)], T - h * (k - f + 1));
    }
}

TEST(RollingBacktest, CanonicalOrderIndependentOfThreads) {
    const auto obs = ramp_data(16, 3);
    MethodSpec a{"b-late", [](const ObservationMatrix& train, int h) {
                     return MethodForecast{Matrix::Constant(train.series(), h, 5.0), {}, {}};
                 }};
    MethodSpec b{"a-early", [](const ObservationMatrix& train, int h) {
                     return MethodForecast{train.values().bottomRows(1).transpose().replicate(1, h), {}, {}};
                 }};
    const auto r1 = rolling_backtest(obs.matrix, obs.catalog, {a, b}, {2, 3, 0, 1});
    const auto r4 = rolling_backtest(obs.matrix, obs.catalog, {a, b}, {2, 3, 0, 4});
    ASSERT_EQ(r1.scores.rows().size(), r4.scores.rows().size());
    for (std::size_t k = 0; k < r1.scores.rows().size(); ++k) {
        const auto& x = r1.scores.rows()[k];
        const auto& y = r4.scores.rows()[k];
        EXPECT_EQ(std::tie(x.series_id, x.period, x.method, x.smape_percent),
                  std::tie(y.series_id, y.period, y.method, y.smape_percent));
    }
    const auto& rows = r1.scores.rows();
    for (std::size_t k = 1; k < rows.size(); ++k) {
        EXPECT_LE(std::tie(rows[k - 1].series_id, rows[k - 1].period), std::tie(rows[k].series_id, rows[k].period));
    }
}
