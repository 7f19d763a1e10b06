#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <sstream>

#include "somdagmm/eval.hpp"
#include "somdagmm/rng.hpp"

using namespace somdagmm;

namespace {

/// Sort-based reference: stable descending order, first k flagged.
std::vector<std::uint8_t> sort_oracle(const std::vector<double>& e, std::size_t k) {
    std::vector<std::pair<double, std::size_t>> v;
    for (std::size_t i = 0; i < e.size(); ++i) v.push_back({-e[i], i});
    std::sort(v.begin(), v.end());
    std::vector<std::uint8_t> out(e.size(), 0);
    for (std::size_t i = 0; i < k; ++i) out[v[i].second] = 1;
    return out;
}

RunResult run_with(double acc, double prec, double rec, double f1, std::uint64_t seed = 0) {
    RunResult r;
    r.ok = true;
    r.seed = seed;
    r.metrics.accuracy = acc;
    r.metrics.precision = prec;
    r.metrics.recall = rec;
    r.metrics.f1 = f1;
    return r;
}

CellReport cell(bool som, const std::string& scenario, double ratio, double f1) {
    CellReport c;
    c.with_som = som;
    c.algorithm = algorithm_name(som);
    c.scenario = scenario;
    c.contamination = ratio;
    for (int s = 0; s < 3; ++s) c.runs.push_back(run_with(0.8, 0.7, 0.6, f1, s));
    c.summary = aggregate(c.runs);
    return c;
}

}  // namespace

TEST(Threshold, QuarterFlagsOnlyTheMaximum) {
    const auto f = threshold_energies({1, 2, 3, 4}, ThresholdPolicy::percentile(0.25));
    EXPECT_EQ(f, (std::vector<std::uint8_t>{0, 0, 0, 1}));
}

TEST(Threshold, FullCountFlagsEverything) {
    const auto f = threshold_energies({3, 1, 2}, ThresholdPolicy::percentile(0.9));
    EXPECT_EQ(f, (std::vector<std::uint8_t>{1, 1, 1}));
}

TEST(Threshold, TiesAtTheCutGoToEarlierIndex) {
    const auto f = threshold_energies({5, 7, 5, 5, 1}, ThresholdPolicy::percentile(0.4));
    EXPECT_EQ(f, (std::vector<std::uint8_t>{1, 1, 0, 0, 0}));
}

TEST(Threshold, FixedPolicyIsStrict) {
    const auto f = threshold_energies({1.0, 2.0, 2.5}, ThresholdPolicy::fixed(2.0));
    EXPECT_EQ(f, (std::vector<std::uint8_t>{0, 0, 1}));
}

TEST(Threshold, AgreesWithSortOracle) {
    Rng rng(1);
    for (int t = 0; t < 1000; ++t) {
        const std::size_t n = 1 + rng.uniform_index(300);
        std::vector<double> e(n);
        for (double& v : e) v = std::round(rng.uniform(-5.0, 5.0) * 4.0) / 4.0;  // frequent ties
        const double r = rng.uniform(0.001, 0.999);
        const auto f = threshold_energies(e, ThresholdPolicy::percentile(r));
        EXPECT_EQ(f, sort_oracle(e, flagged_count(n, r)));
    }
}

TEST(Threshold, ExactCountForEveryLengthUpTo1000) {
    // Integer reference: ratios as num/10000.
    for (std::size_t n = 1; n <= 1000; ++n) {
        for (std::uint64_t num : {100u, 2500u, 4654u}) {
            const std::size_t expected = (n * num + 9999) / 10000;
            std::vector<double> e(n);
            std::iota(e.begin(), e.end(), 0.0);
            const auto f = threshold_energies(e, ThresholdPolicy::percentile(static_cast<double>(num) / 10000.0));
            EXPECT_EQ(static_cast<std::size_t>(std::count(f.begin(), f.end(), 1)), expected) << n << ' ' << num;
        }
    }
}

TEST(Threshold, RejectsEmptyAndUnresolvedPolicies) {
    EXPECT_THROW(threshold_energies({}, ThresholdPolicy::percentile(0.5)), InvalidArgument);
    EXPECT_THROW(threshold_energies({1.0}, ThresholdPolicy::known()), ContractError);
    EXPECT_THROW(threshold_energies({1.0}, ThresholdPolicy::percentile(1.0)), InvalidArgument);
    EXPECT_EQ(ThresholdPolicy::known().resolve(0.3), ThresholdPolicy::percentile(0.3));
}

TEST(ThresholdPolicy, ParseAndPrint) {
    EXPECT_EQ(ThresholdPolicy::parse("known-ratio"), ThresholdPolicy::known());
    EXPECT_EQ(ThresholdPolicy::parse("percentile:0.25"), ThresholdPolicy::percentile(0.25));
    EXPECT_EQ(ThresholdPolicy::parse("fixed:-3.5"), ThresholdPolicy::fixed(-3.5));
    EXPECT_EQ(ThresholdPolicy::parse(ThresholdPolicy::percentile(0.4654).to_string()),
              ThresholdPolicy::percentile(0.4654));
    EXPECT_THROW(ThresholdPolicy::parse("percentile:2"), InvalidArgument);
    EXPECT_THROW(ThresholdPolicy::parse("median"), InvalidArgument);
    EXPECT_THROW(ThresholdPolicy::parse("fixed:abc"), InvalidArgument);
}

TEST(Metrics, PerfectPrediction) {
    const auto m = compute_metrics({1, 0, 1, 0}, {1, 0, 1, 0});
    EXPECT_EQ(m.accuracy, 1.0);
    EXPECT_EQ(m.precision, 1.0);
    EXPECT_EQ(m.recall, 1.0);
    EXPECT_EQ(m.f1, 1.0);
}

TEST(Metrics, OneOfEach) {
    const auto m = compute_metrics({1, 1, 0, 0}, {1, 0, 1, 0});
    EXPECT_EQ(m.tp, 1u);
    EXPECT_EQ(m.fp, 1u);
    EXPECT_EQ(m.fn, 1u);
    EXPECT_EQ(m.tn, 1u);
    EXPECT_EQ(m.accuracy, 0.5);
    EXPECT_EQ(m.precision, 0.5);
    EXPECT_EQ(m.recall, 0.5);
    EXPECT_EQ(m.f1, 0.5);
}

TEST(Metrics, NoPositivesAnywhereIsFlaggedZero) {
    const auto m = compute_metrics({0, 0, 0}, {0, 0, 0});
    EXPECT_EQ(m.accuracy, 1.0);
    EXPECT_EQ(m.precision, 0.0);
    EXPECT_EQ(m.recall, 0.0);
    EXPECT_EQ(m.f1, 0.0);
    EXPECT_TRUE(m.precision_undefined);
    EXPECT_TRUE(m.recall_undefined);
    EXPECT_TRUE(m.f1_undefined);
}

TEST(Metrics, LengthMismatch) {
    EXPECT_THROW(compute_metrics({1, 0}, {1}), DimensionMismatch);
}

TEST(Metrics, IdentitiesOnRandomPredictions) {
    Rng rng(2);
    for (int t = 0; t < 500; ++t) {
        const std::size_t n = 1 + rng.uniform_index(100);
        std::vector<std::uint8_t> p(n), a(n);
        for (std::size_t i = 0; i < n; ++i) {
            p[i] = rng.uniform() < 0.4;
            a[i] = rng.uniform() < 0.4;
        }
        const auto m = compute_metrics(p, a);
        EXPECT_EQ(m.tp + m.fp + m.fn + m.tn, n);
        for (double v : {m.accuracy, m.precision, m.recall, m.f1}) {
            EXPECT_GE(v, 0.0);
            EXPECT_LE(v, 1.0);
        }
        if (m.tp + m.fn > 0) EXPECT_EQ(m.recall, static_cast<double>(m.tp) / static_cast<double>(m.tp + m.fn));
        if (m.precision + m.recall > 0)
            EXPECT_NEAR(m.f1, 2.0 / (1.0 / m.precision + 1.0 / m.recall), 1e-12);
    }
}

TEST(Aggregate, MatchesHandAverageAndExcludesFailures) {
    std::vector<RunResult> runs{run_with(0.5, 0.6, 0.7, 0.8), run_with(0.7, 0.8, 0.9, 1.0)};
    RunResult failed;
    failed.ok = false;
    failed.error = "diverged";
    runs.push_back(failed);
    const auto s = aggregate(runs);
    EXPECT_EQ(s.runs, 3u);
    EXPECT_EQ(s.failed, 1u);
    EXPECT_NEAR(s.accuracy.mean, (0.5 + 0.7) / 2.0, 1e-12);
    EXPECT_NEAR(s.f1.mean, (0.8 + 1.0) / 2.0, 1e-12);
    EXPECT_NEAR(s.f1.stdev, 0.1, 1e-12);  // population deviation
    EXPECT_EQ(s.f1.count, 2u);
}

TEST(Aggregate, PermutationInvariant) {
    Rng rng(3);
    std::vector<RunResult> runs;
    for (int i = 0; i < 10; ++i)
        runs.push_back(run_with(rng.uniform(), rng.uniform(), rng.uniform(), rng.uniform(), i));
    const auto base = aggregate(runs);
    for (int t = 0; t < 20; ++t) {
        rng.shuffle(runs);
        const auto s = aggregate(runs);
        EXPECT_EQ(s.f1.mean, base.f1.mean);
        EXPECT_EQ(s.f1.stdev, base.f1.stdev);
        EXPECT_EQ(s.accuracy.mean, base.accuracy.mean);
    }
}

TEST(Quantiles, FiveNumberSummary) {
    const auto f = five_number_summary({0.1, 0.2, 0.3, 0.4, 0.5});
    EXPECT_DOUBLE_EQ(f.median, 0.3);
    EXPECT_DOUBLE_EQ(f.min, 0.1);
    EXPECT_DOUBLE_EQ(f.max, 0.5);
    const auto same = five_number_summary({0.7, 0.7, 0.7});
    for (double v : {same.min, same.q1, same.median, same.q3, same.max}) EXPECT_EQ(v, 0.7);
}

TEST(Quantiles, MatchReferenceInterpolation) {
    Rng rng(4);
    for (int t = 0; t < 300; ++t) {
        std::vector<double> v(1 + rng.uniform_index(40));
        for (double& x : v) x = rng.uniform();
        auto sorted = v;
        std::sort(sorted.begin(), sorted.end());
        for (double p : {0.25, 0.5, 0.75}) {
            // position (n-1)p, blend of neighbors
            const double pos = p * static_cast<double>(sorted.size() - 1);
            const std::size_t i = static_cast<std::size_t>(pos);
            const double frac = pos - static_cast<double>(i);
            const double ref = i + 1 < sorted.size() ? sorted[i] * (1 - frac) + sorted[i + 1] * frac : sorted[i];
            EXPECT_NEAR(quantile(v, p), ref, 1e-12);
        }
    }
}

TEST(Report, IdealTableHasTableShape) {
    const std::vector<CellReport> cells{cell(true, "ideal", 0, 0.9), cell(false, "ideal", 0, 0.7)};
    const auto csv = ideal_table_csv(cells);
    EXPECT_EQ(csv,
              "Algorithm,DAGMM,SOM-DAGMM\n"
              "Accuracy,0.80(0.00),0.80(0.00)\n"
              "Precision,0.70(0.00),0.70(0.00)\n"
              "Recall,0.60(0.00),0.60(0.00)\n"
              "F1 Score,0.70(0.00),0.90(0.00)\n");
}

TEST(Report, MixedTableHasSixRatioMajorColumns) {
    std::vector<CellReport> cells;
    for (double r : {0.10, 0.01, 0.05})
        for (bool som : {true, false}) cells.push_back(cell(som, "mixed", r, 0.5));
    const auto csv = mixed_table_csv(cells);
    std::istringstream in(csv);
    std::string line;
    std::getline(in, line);
    EXPECT_EQ(line, "Anomaly Ratio,1%,1%,5%,5%,10%,10%");
    std::getline(in, line);
    EXPECT_EQ(line, "Algorithm,DAGMM,SOM-DAGMM,DAGMM,SOM-DAGMM,DAGMM,SOM-DAGMM");
    int rows = 0;
    while (std::getline(in, line)) {
        ++rows;
        EXPECT_EQ(std::count(line.begin(), line.end(), ','), 6);
        EXPECT_EQ(std::count(line.begin(), line.end(), '('), 6);
    }
    EXPECT_EQ(rows, 4);
}

TEST(Report, RunsCsvHasOneRowPerRunPlusAggregate) {
    std::vector<CellReport> cells{cell(true, "ideal", 0, 0.9)};
    cells[0].runs.resize(10, run_with(0.8, 0.7, 0.6, 0.9));
    cells[0].summary = aggregate(cells[0].runs);
    const auto csv = runs_csv(cells);
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 1 + 10 + 1);
    EXPECT_NE(csv.find(",aggregate,10/10,"), std::string::npos);
}

TEST(Report, WhiskerAndDegradationTables) {
    const std::vector<CellReport> cells{cell(true, "mixed", 0.05, 0.8), cell(true, "mixed", 0.01, 0.9),
                                        cell(false, "ideal", 0.0, 0.7)};
    const auto w = whisker_csv(cells);
    EXPECT_NE(w.find("SOM-DAGMM@0.050000000000000003,SOM-DAGMM,mixed"), std::string::npos);
    std::istringstream d(degradation_csv(cells));
    std::string line;
    std::vector<std::string> lines;
    while (std::getline(d, line)) lines.push_back(line);
    ASSERT_EQ(lines.size(), 4u);
    EXPECT_EQ(lines[0], "algorithm,contamination,f1_avg,f1_stdev,runs");
    EXPECT_EQ(lines[1].rfind("DAGMM,0,", 0), 0u);
    EXPECT_EQ(lines[2].rfind("SOM-DAGMM,0.01,", 0), 0u);
    EXPECT_EQ(lines[3].rfind("SOM-DAGMM,0.050000000000000003,", 0), 0u);
    EXPECT_NEAR(std::stod(lines[2].substr(15)), 0.9, 1e-12);
}
