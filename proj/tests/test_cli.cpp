#include "trmf/cli.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

namespace fs = std::filesystem;

namespace {

struct Run {
    int code;
    std::string out;
    std::string err;
};

Run run(std::vector<std::string> args) {
    args.insert(args.begin(), "trmf");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    const int code = trmf::cli::cli_dispatch(static_cast<int>(argv.size()), argv.data(), out, err);
    return {code, out.str(), err.str()};
}

fs::path scratch(const std::string& name) {
    const auto dir = fs::temp_directory_path() / ("trmf_cli_test_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

// synth -> fit -> forecast -> backtest into `dir`.
void pipeline(const fs::path& dir) {
    const auto data = (dir / "data").string();
    ASSERT_EQ(run({"--seed", "3", "--out", data, "synth", "--T", "40", "--n", "6"}).code, 0);
    const auto obs = (dir / "data" / "observations.csv").string();
    ASSERT_EQ(run({"--seed", "1", "--out", (dir / "fit").string(), "fit", "--input", obs, "--d", "2", "--p", "2"}).code,
              0);
    ASSERT_EQ(run({"--out", (dir / "fc").string(), "forecast", "--model", (dir / "fit" / "model.json").string(),
                   "--horizon", "4"})
                  .code,
              0);
    ASSERT_EQ(run({"--seed", "1", "--threads", "2", "--out", (dir / "bt").string(), "backtest", "--input", obs,
                   "--methods", "trmf,ar:2", "--horizon", "2", "--folds", "2", "--d", "2", "--p", "2",
                   "--max-sweeps", "60"})
                  .code,
              0);
}

const std::vector<std::string> kPipelineFiles{
    "data/observations.csv", "data/truth.json", "data/summary.json", "fit/model.json", "fit/summary.json",
    "fc/forecasts.csv",      "fc/summary.json", "bt/forecasts.csv",  "bt/scores.csv",  "bt/summary.json"};

} // namespace

TEST(Cli, PipelineSucceedsAndIsByteIdentical) {
    const auto a = scratch("pipe_a");
    const auto b = scratch("pipe_b");
    pipeline(a);
    pipeline(b);
    for (const auto& f : kPipelineFiles) {
        ASSERT_TRUE(fs::exists(a / f)) << f;
        // Paths inside summaries differ by directory, so compare with the prefix normalized.
        auto ta = slurp(a / f), tb = slurp(b / f);
        for (auto* t : {&ta, &tb}) {
            for (const auto& root : {a.string(), b.string()}) {
                for (auto pos = t->find(root); pos != std::string::npos; pos = t->find(root)) t->replace(pos, root.size(), "<dir>");
            }
        }
        EXPECT_EQ(ta, tb) << f;
    }
    const auto fc = slurp(a / "fc" / "forecasts.csv");
    EXPECT_EQ(fc.rfind("series_id,period,value\n", 0), 0u);
    EXPECT_NE(fc.find("s0,40,"), std::string::npos);
    EXPECT_NE(slurp(a / "bt" / "summary.json").find("minmax_median_by_step"), std::string::npos);
}

TEST(Cli, FitWithOrderAtLeastTIsValidationError) {
    const auto dir = scratch("pge");
    ASSERT_EQ(run({"--out", dir.string(), "synth", "--T", "5", "--n", "3", "--p-true", "1"}).code, 0);
    const auto r = run({"--out", (dir / "m").string(), "fit", "--input", (dir / "observations.csv").string(), "--p",
                        "5", "--d", "1"});
    EXPECT_EQ(r.code, 1);
    EXPECT_NE(r.err.find("p < T"), std::string::npos) << r.err;
}

TEST(Cli, BacktestWithoutInputPrintsUsage) {
    const auto r = run({"backtest"});
    EXPECT_EQ(r.code, 1);
    EXPECT_NE(r.err.find("requires --input"), std::string::npos);
    EXPECT_NE(r.err.find("--methods"), std::string::npos);
}

TEST(Cli, ExitCodes) {
    EXPECT_EQ(run({}).code, 1);
    EXPECT_EQ(run({"--bogus"}).code, 1);
    EXPECT_EQ(run({"fit", "--input", "/nonexistent/obs.csv"}).code, 2);
    EXPECT_EQ(run({"forecast", "--model", "/nonexistent/model.json"}).code, 2);
    EXPECT_EQ(run({"--config", "/nonexistent/run.cfg", "synth"}).code, 2);

    const auto dir = scratch("codes");
    std::ofstream(dir / "bad.csv") << "series_id,period,value\na,0,1\na,0,2\n";
    const auto r = run({"--out", (dir / "o").string(), "fit", "--input", (dir / "bad.csv").string()});
    EXPECT_EQ(r.code, 1);
    EXPECT_NE(r.err.find("duplicate"), std::string::npos);

    std::ofstream(dir / "run.cfg") << "d = 2\nbogus_key = 1\n";
    EXPECT_EQ(run({"--config", (dir / "run.cfg").string(), "synth"}).code, 1);
}

TEST(Cli, ConfigFileSuppliesInput) {
    const auto dir = scratch("config");
    ASSERT_EQ(run({"--out", dir.string(), "synth", "--T", "30", "--n", "4"}).code, 0);
    std::ofstream(dir / "run.cfg") << "input = " << (dir / "observations.csv").string() << "\nd = 2\np = 1\n"
                                   << "max_sweeps = 30\noutput = " << (dir / "fit").string() << "\n";
    EXPECT_EQ(run({"--config", (dir / "run.cfg").string(), "fit"}).code, 0);
    EXPECT_NE(slurp(dir / "fit" / "model.json").find("\"d\": 2"), std::string::npos);
}

TEST(Cli, ForecastReconciliationModes) {
    const auto dir = scratch("reconcile");
    ASSERT_EQ(run({"--out", dir.string(), "synth", "--T", "30", "--branching", "2,2"}).code, 0);
    const auto obs = (dir / "observations.csv").string();
    const auto hier = (dir / "hierarchy.csv").string();
    ASSERT_EQ(run({"--out", (dir / "fit").string(), "fit", "--input", obs, "--d", "2", "--p", "1", "--max-sweeps",
                   "50"})
                  .code,
              0);
    const auto model = (dir / "fit" / "model.json").string();
    for (const std::string mode : {"bottom-up", "top-down", "middle-out"}) {
        const auto out = (dir / mode).string();
        const auto r = run({"--out", out, "forecast", "--model", model, "--horizon", "3", "--reconcile", mode,
                            "--hierarchy", hier, "--input", obs});
        ASSERT_EQ(r.code, 0) << mode << ": " << r.err;
        // Coherence: total equals the sum of its two children at every step.
        const auto recs = trmf::io::parse_long_csv(
            [&] {
                std::vector<std::string> lines;
                std::istringstream in(slurp(fs::path(out) / "forecasts.csv"));
                for (std::string l; std::getline(in, l);) lines.push_back(l);
                return lines;
            }(),
            "forecasts.csv");
        const auto fo = trmf::assemble_observations(recs);
        const auto& v = fo.matrix.values();
        const auto col = [&](const char* id) { return v.col(fo.catalog.column(id)); };
        EXPECT_LT((col("total") - col("s0") - col("s1")).cwiseAbs().maxCoeff(), 1e-9) << mode;
        EXPECT_LT((col("s0") - col("s0_0") - col("s0_1")).cwiseAbs().maxCoeff(), 1e-9) << mode;
    }
    EXPECT_EQ(run({"--out", (dir / "x").string(), "forecast", "--model", model, "--reconcile", "bottom-up"}).code, 1);
}

TEST(Cli, SeasonalModes) {
    const auto dir = scratch("seasonal");
    std::ofstream(dir / "s.csv") << "series_id,period,value\n"
                                 << "a,0,1\na,1,3\na,2,1\na,3,3\n"
                                 << "b,0,2\nb,1,6\nb,2,2\nb,3,6\n";
    for (const std::string mode : {"isi", "wgsi", "dgsi"}) {
        const auto r = run({"--out", (dir / mode).string(), "seasonal", "--input", (dir / "s.csv").string(),
                            "--season-length", "2", "--mode", mode});
        ASSERT_EQ(r.code, 0) << r.err;
        const auto csv = slurp(dir / mode / "seasonal.csv");
        EXPECT_NE(csv.find(",1,0.5\n"), std::string::npos) << csv;
        EXPECT_NE(csv.find(",2,1.5\n"), std::string::npos) << csv;
    }
    EXPECT_EQ(run({"--out", (dir / "e").string(), "seasonal", "--input", (dir / "s.csv").string(), "--season-length",
                   "3"})
                  .code,
              1);
    EXPECT_EQ(run({"--out", (dir / "e").string(), "seasonal", "--input", (dir / "s.csv").string(), "--season-length",
                   "2", "--require-two-cycles", "--mode", "isi"})
                  .code,
              0);
}

TEST(Cli, GridsearchWritesGrid) {
    const auto dir = scratch("grid");
    ASSERT_EQ(run({"--out", dir.string(), "synth", "--T", "40", "--n", "5"}).code, 0);
    const auto r = run({"--out", (dir / "g").string(), "gridsearch", "--input", (dir / "observations.csv").string(),
                        "--d-values", "1,2", "--p-values", "1,2", "--horizon", "1", "--folds", "2", "--max-sweeps",
                        "30"});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto summary = trmf::io::json::parse(slurp(dir / "g" / "summary.json"));
    EXPECT_EQ(summary["grid"]["minmax_median"].size(), 2u);
    EXPECT_EQ(summary["grid"]["minmax_median"][0].size(), 2u);
    EXPECT_TRUE(summary["grid"]["best"].contains("p"));
}
