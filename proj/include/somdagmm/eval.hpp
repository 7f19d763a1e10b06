#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "errors.hpp"

namespace somdagmm {

/// How energies become anomaly predictions.
struct ThresholdPolicy {
    enum class Kind {
        percentile,  // flag the ceil(N·ratio) highest energies
        fixed,       // flag energies above value
        known_ratio  // percentile at the evaluated set's true anomaly ratio
    };
    Kind kind = Kind::known_ratio;
    double value = 0.0;  // ratio for percentile, cut-off for fixed

    static ThresholdPolicy percentile(double ratio) { return {Kind::percentile, ratio}; }
    static ThresholdPolicy fixed(double cut) { return {Kind::fixed, cut}; }
    static ThresholdPolicy known() { return {Kind::known_ratio, 0.0}; }

    void validate() const {
        if (kind == Kind::percentile && !(value > 0.0 && value < 1.0))
            throw InvalidArgument("threshold: percentile ratio must be in (0, 1)");
        if (kind == Kind::fixed && !std::isfinite(value)) throw InvalidArgument("threshold: fixed value must be finite");
    }

    /// Replaces known_ratio with the percentile at `anomaly_ratio`.
    ThresholdPolicy resolve(double anomaly_ratio) const {
        if (kind != Kind::known_ratio) return *this;
        return percentile(anomaly_ratio);
    }

    std::string to_string() const {
        char buf[64];
        switch (kind) {
            case Kind::percentile: std::snprintf(buf, sizeof buf, "percentile:%.17g", value); return buf;
            case Kind::fixed: std::snprintf(buf, sizeof buf, "fixed:%.17g", value); return buf;
            default: return "known-ratio";
        }
    }

    /// Accepts "known-ratio", "percentile:<r>" or "fixed:<v>".
    static ThresholdPolicy parse(const std::string& s) {
        if (s == "known-ratio" || s == "known_ratio") return known();
        const auto colon = s.find(':');
        if (colon != std::string::npos) {
            const std::string head = s.substr(0, colon), tail = s.substr(colon + 1);
            std::size_t used = 0;
            double v = 0.0;
            try {
                v = std::stod(tail, &used);
            } catch (const std::exception&) {
                used = 0;
            }
            if (used == tail.size() && used > 0) {
                ThresholdPolicy p;
                if (head == "percentile") p = percentile(v);
                else if (head == "fixed") p = fixed(v);
                else throw InvalidArgument("unknown threshold policy '" + s + "'");
                p.validate();
                return p;
            }
        }
        throw InvalidArgument("unknown threshold policy '" + s +
                              "' (expected known-ratio | percentile:<r> | fixed:<v>)");
    }

    friend bool operator==(const ThresholdPolicy&, const ThresholdPolicy&) = default;
};

/// ceil(n·ratio), snapping products within rounding noise of an integer.
inline std::size_t flagged_count(std::size_t n, double ratio) {
    const double exact = static_cast<double>(n) * ratio;
    const double nearest = std::round(exact);
    if (std::abs(exact - nearest) <= 1e-9 * std::max(1.0, exact)) return static_cast<std::size_t>(nearest);
    return static_cast<std::size_t>(std::ceil(exact));
}

/// Predicted anomaly flags (1 = anomaly). Percentile ties at the cut go to
/// the earlier index.
inline std::vector<std::uint8_t> threshold_energies(const std::vector<double>& energies,
                                                    const ThresholdPolicy& policy) {
    if (energies.empty()) throw InvalidArgument("threshold: no energies");
    for (double e : energies)
        if (std::isnan(e)) throw InvalidArgument("threshold: NaN energy");
    if (policy.kind == ThresholdPolicy::Kind::known_ratio)
        throw ContractError("threshold: known-ratio policy must be resolved against labels first");
    policy.validate();
    std::vector<std::uint8_t> out(energies.size(), 0);
    if (policy.kind == ThresholdPolicy::Kind::fixed) {
        for (std::size_t i = 0; i < energies.size(); ++i) out[i] = energies[i] > policy.value;
        return out;
    }
    std::vector<std::size_t> order(energies.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return energies[a] > energies[b]; });
    const std::size_t k = std::min(flagged_count(energies.size(), policy.value), energies.size());
    for (std::size_t i = 0; i < k; ++i) out[order[i]] = 1;
    return out;
}

/// Confusion counts and the four detection metrics, anomaly as positive.
struct Metrics {
    std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
    double accuracy = 0.0, precision = 0.0, recall = 0.0, f1 = 0.0;
    // Set when a denominator was zero and the metric was reported as 0.
    bool precision_undefined = false, recall_undefined = false, f1_undefined = false;
};

inline Metrics compute_metrics(const std::vector<std::uint8_t>& predicted, const std::vector<std::uint8_t>& actual) {
    if (predicted.size() != actual.size())
        throw DimensionMismatch("metrics: " + std::to_string(predicted.size()) + " predictions for " +
                                std::to_string(actual.size()) + " labels");
    if (predicted.empty()) throw InvalidArgument("metrics: no samples");
    Metrics m;
    for (std::size_t i = 0; i < predicted.size(); ++i) {
        const bool p = predicted[i] != 0, a = actual[i] != 0;
        if (p && a) ++m.tp;
        else if (p) ++m.fp;
        else if (a) ++m.fn;
        else ++m.tn;
    }
    const auto ratio = [](std::size_t num, std::size_t den, bool& undefined) {
        undefined = den == 0;
        return undefined ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
    };
    bool unused = false;
    m.accuracy = ratio(m.tp + m.tn, predicted.size(), unused);
    m.precision = ratio(m.tp, m.tp + m.fp, m.precision_undefined);
    m.recall = ratio(m.tp, m.tp + m.fn, m.recall_undefined);
    m.f1_undefined = m.precision + m.recall == 0.0;
    m.f1 = m.f1_undefined ? 0.0 : 2.0 * m.precision * m.recall / (m.precision + m.recall);
    return m;
}

/// Mean and population standard deviation, summed in sorted order so the
/// result does not depend on run order.
struct MeanStdev {
    double mean = 0.0;
    double stdev = 0.0;
    std::size_t count = 0;
};

inline MeanStdev mean_stdev(std::vector<double> v) {
    MeanStdev out;
    out.count = v.size();
    if (v.empty()) return out;
    std::sort(v.begin(), v.end());
    double s = 0.0;
    for (double x : v) s += x;
    out.mean = s / static_cast<double>(v.size());
    std::vector<double> sq;
    sq.reserve(v.size());
    for (double x : v) sq.push_back((x - out.mean) * (x - out.mean));
    std::sort(sq.begin(), sq.end());
    double ss = 0.0;
    for (double x : sq) ss += x;
    out.stdev = std::sqrt(ss / static_cast<double>(v.size()));
    return out;
}

/// One seeded run of an experiment cell.
struct RunResult {
    std::uint64_t seed = 0;
    bool ok = false;
    std::string error;  // set when !ok
    Metrics metrics;
    double threshold_ratio = 0.0;
    std::size_t train_size = 0, test_size = 0, test_anomalies = 0, train_anomalies = 0;
};

struct MetricsSummary {
    MeanStdev accuracy, precision, recall, f1;
    std::size_t runs = 0;
    std::size_t failed = 0;
};

/// Aggregates successful runs; failed runs are counted but excluded.
inline MetricsSummary aggregate(const std::vector<RunResult>& runs) {
    std::vector<double> acc, prec, rec, f1;
    MetricsSummary s;
    s.runs = runs.size();
    for (const auto& r : runs) {
        if (!r.ok) {
            ++s.failed;
            continue;
        }
        acc.push_back(r.metrics.accuracy);
        prec.push_back(r.metrics.precision);
        rec.push_back(r.metrics.recall);
        f1.push_back(r.metrics.f1);
    }
    s.accuracy = mean_stdev(acc);
    s.precision = mean_stdev(prec);
    s.recall = mean_stdev(rec);
    s.f1 = mean_stdev(f1);
    return s;
}

/// Quantile by linear interpolation between order statistics at (n−1)·p.
inline double quantile(std::vector<double> v, double p) {
    if (v.empty()) throw InvalidArgument("quantile: empty sample");
    if (!(p >= 0.0 && p <= 1.0)) throw InvalidArgument("quantile: p must be in [0, 1]");
    std::sort(v.begin(), v.end());
    const double h = static_cast<double>(v.size() - 1) * p;
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const std::size_t hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

struct FiveNumber {
    double min = 0.0, q1 = 0.0, median = 0.0, q3 = 0.0, max = 0.0;
};

inline FiveNumber five_number_summary(const std::vector<double>& v) {
    return {quantile(v, 0.0), quantile(v, 0.25), quantile(v, 0.5), quantile(v, 0.75), quantile(v, 1.0)};
}

/// Aggregated results of one (algorithm, scenario) cell.
struct CellReport {
    std::string algorithm;  // "DAGMM" or "SOM-DAGMM"
    bool with_som = true;
    std::string scenario;   // "ideal" or "mixed"
    double contamination = 0.0;
    std::vector<RunResult> runs;
    MetricsSummary summary;

    std::string condition() const {
        if (scenario == "ideal") return algorithm;
        char buf[64];
        std::snprintf(buf, sizeof buf, "%s@%.17g", algorithm.c_str(), contamination);
        return buf;
    }

    std::vector<double> f1_values() const {
        std::vector<double> v;
        for (const auto& r : runs)
            if (r.ok) v.push_back(r.metrics.f1);
        return v;
    }
};

inline std::string algorithm_name(bool with_som) { return with_som ? "SOM-DAGMM" : "DAGMM"; }

inline std::string format_real(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

/// "AVG(STDEV)" with a fixed number of decimals.
inline std::string avg_stdev_cell(const MeanStdev& m, int digits) {
    if (m.count == 0) return "n/a";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f(%.*f)", digits, m.mean, digits, m.stdev);
    return buf;
}

inline std::string percent_label(double ratio) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%g%%", ratio * 100.0);
    return buf;
}

namespace detail {

inline void metric_rows(std::ostringstream& out, const std::vector<const CellReport*>& cols, int digits) {
    const std::pair<const char*, MeanStdev MetricsSummary::*> rows[] = {{"Accuracy", &MetricsSummary::accuracy},
                                                                       {"Precision", &MetricsSummary::precision},
                                                                       {"Recall", &MetricsSummary::recall},
                                                                       {"F1 Score", &MetricsSummary::f1}};
    for (const auto& [name, field] : rows) {
        out << name;
        for (const auto* c : cols) out << ',' << avg_stdev_cell(c->summary.*field, digits);
        out << '\n';
    }
}

}  // namespace detail

/// Ideal-scenario table: one column per algorithm, rows are the four metrics.
inline std::string ideal_table_csv(const std::vector<CellReport>& cells, int digits = 2) {
    std::vector<const CellReport*> cols;
    for (const auto& c : cells)
        if (c.scenario == "ideal") cols.push_back(&c);
    std::stable_sort(cols.begin(), cols.end(), [](auto* a, auto* b) { return a->with_som < b->with_som; });
    std::ostringstream out;
    out << "Algorithm";
    for (const auto* c : cols) out << ',' << c->algorithm;
    out << '\n';
    detail::metric_rows(out, cols, digits);
    return out.str();
}

/// Mixed-scenario table: ratio-major columns, each ratio split by algorithm.
inline std::string mixed_table_csv(const std::vector<CellReport>& cells, int digits = 2) {
    std::vector<const CellReport*> cols;
    for (const auto& c : cells)
        if (c.scenario == "mixed") cols.push_back(&c);
    std::stable_sort(cols.begin(), cols.end(), [](auto* a, auto* b) {
        if (a->contamination != b->contamination) return a->contamination < b->contamination;
        return a->with_som < b->with_som;
    });
    std::ostringstream out;
    out << "Anomaly Ratio";
    for (const auto* c : cols) out << ',' << percent_label(c->contamination);
    out << "\nAlgorithm";
    for (const auto* c : cols) out << ',' << c->algorithm;
    out << '\n';
    detail::metric_rows(out, cols, digits);
    return out.str();
}

/// One row per run with full-precision metrics.
inline std::string runs_csv(const std::vector<CellReport>& cells) {
    std::ostringstream out;
    out << "algorithm,scenario,contamination,seed,status,accuracy,precision,recall,f1,tp,fp,fn,tn,"
           "threshold_ratio,train_size,train_anomalies,test_size,test_anomalies,error\n";
    for (const auto& c : cells) {
        for (const auto& r : c.runs) {
            out << c.algorithm << ',' << c.scenario << ',' << format_real(c.contamination) << ',' << r.seed << ','
                << (r.ok ? "ok" : "failed") << ',';
            if (r.ok)
                out << format_real(r.metrics.accuracy) << ',' << format_real(r.metrics.precision) << ','
                    << format_real(r.metrics.recall) << ',' << format_real(r.metrics.f1) << ',' << r.metrics.tp
                    << ',' << r.metrics.fp << ',' << r.metrics.fn << ',' << r.metrics.tn << ','
                    << format_real(r.threshold_ratio);
            else
                out << ",,,,,,,,";
            std::string err = r.error;
            std::replace(err.begin(), err.end(), ',', ';');
            std::replace(err.begin(), err.end(), '\n', ' ');
            out << ',' << r.train_size << ',' << r.train_anomalies << ',' << r.test_size << ',' << r.test_anomalies
                << ',' << err << '\n';
        }
        const auto& s = c.summary;
        out << c.algorithm << ',' << c.scenario << ',' << format_real(c.contamination) << ",aggregate,"
            << (s.runs - s.failed) << "/" << s.runs << ',' << format_real(s.accuracy.mean) << ','
            << format_real(s.precision.mean) << ',' << format_real(s.recall.mean) << ',' << format_real(s.f1.mean)
            << ",,,,,,,,,,\n";
    }
    return out.str();
}

/// Whisker data: five-number F1 summary per condition.
inline std::string whisker_csv(const std::vector<CellReport>& cells) {
    std::ostringstream out;
    out << "condition,algorithm,scenario,contamination,runs,min,q1,median,q3,max\n";
    for (const auto& c : cells) {
        const auto v = c.f1_values();
        out << c.condition() << ',' << c.algorithm << ',' << c.scenario << ',' << format_real(c.contamination)
            << ',' << v.size();
        if (v.empty()) {
            out << ",,,,,\n";
            continue;
        }
        const auto f = five_number_summary(v);
        out << ',' << format_real(f.min) << ',' << format_real(f.q1) << ',' << format_real(f.median) << ','
            << format_real(f.q3) << ',' << format_real(f.max) << '\n';
    }
    return out.str();
}

/// Degradation data: aggregate F1 against contamination ratio per algorithm.
/// Ideal-scenario cells appear at ratio 0.
inline std::string degradation_csv(const std::vector<CellReport>& cells) {
    std::vector<const CellReport*> rows;
    for (const auto& c : cells) rows.push_back(&c);
    std::stable_sort(rows.begin(), rows.end(), [](auto* a, auto* b) {
        if (a->with_som != b->with_som) return a->with_som < b->with_som;
        return a->contamination < b->contamination;
    });
    std::ostringstream out;
    out << "algorithm,contamination,f1_avg,f1_stdev,runs\n";
    for (const auto* c : rows)
        out << c->algorithm << ',' << format_real(c->contamination) << ',' << format_real(c->summary.f1.mean) << ','
            << format_real(c->summary.f1.stdev) << ',' << c->summary.f1.count << '\n';
    return out.str();
}

}  // namespace somdagmm
