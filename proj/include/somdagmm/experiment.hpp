#pragma once

#include <atomic>
#include <filesystem>
#include <functional>
#include <mutex>
#include <thread>

#include <json.hpp>

#include "config.hpp"
#include "model_io.hpp"

namespace somdagmm {

/// Rows an experiment draws its splits from. Raw records are preprocessed per
/// run with stats fit on that run's training split; a cache is used as is.
struct ExperimentData {
    std::optional<RecordSchema> schema;
    std::vector<RawRecord> records;
    LabeledDataset cached;
    std::vector<std::uint8_t> anomaly;
    std::string schema_hash;
    std::string source;

    bool raw() const { return schema.has_value(); }
    std::size_t size() const { return anomaly.size(); }
    std::size_t anomaly_count() const {
        return static_cast<std::size_t>(std::count(anomaly.begin(), anomaly.end(), std::uint8_t{1}));
    }
};

inline ExperimentData experiment_data(LabeledDataset ds) {
    ExperimentData d;
    d.anomaly = ds.anomaly;
    d.schema_hash = ds.provenance.schema_hash;
    d.source = ds.provenance.source;
    d.cached = std::move(ds);
    return d;
}

inline ExperimentData experiment_data(std::vector<RawRecord> records, RecordSchema schema, std::string source) {
    ExperimentData d;
    d.anomaly = anomaly_flags(records, schema);
    d.schema_hash = schema.hash();
    d.records = std::move(records);
    d.schema = std::move(schema);
    d.source = std::move(source);
    return d;
}

/// Reads the configured dataset and applies the seeded subsample.
inline ExperimentData load_experiment_data(const ExperimentConfig& cfg) {
    if (cfg.dataset.empty()) throw InvalidArgument("data.path is required");
    if (is_cache_file(cfg.dataset)) {
        auto cache = load_cache(cfg.dataset);
        auto& ds = cache.data;
        ds.provenance.schema_hash = cache.stats.schema_hash;
        if (cfg.subsample > 0 && cfg.subsample < ds.size()) {
            auto idx = subsample(iota_indices(ds.size()), cfg.subsample, cfg.subsample_seed);
            ds = ds.subset(idx);
        }
        return experiment_data(std::move(ds));
    }
    auto schema = resolve_schema(cfg.schema);
    ParseOptions opt;
    opt.max_bad_ratio = cfg.max_bad_ratio;
    auto parsed = parse_records(cfg.dataset, schema, opt);
    auto records = cfg.subsample > 0 ? subsample(parsed.records, cfg.subsample, cfg.subsample_seed)
                                     : std::move(parsed.records);
    return experiment_data(std::move(records), std::move(schema), cfg.dataset);
}

/// Train and test matrices of one seeded run.
struct PreparedRun {
    Matrix train;
    std::size_t train_anomalies = 0;
    LabeledDataset test;
};

inline PreparedRun prepare_run(const ExperimentData& data, const ExperimentConfig& cfg, double contamination,
                               std::uint64_t seed) {
    std::vector<std::size_t> train_idx, pool_idx, test_idx;
    if (contamination > 0.0) {
        auto s = split_mixed(data.anomaly, contamination, seed);
        train_idx = std::move(s.train);
        pool_idx = std::move(s.pool);
        test_idx = std::move(s.test);
    } else {
        auto s = split_ideal(data.anomaly, seed);
        train_idx = std::move(s.train);
        test_idx = std::move(s.test);
    }

    LabeledDataset train, pool;
    PreparedRun out;
    if (data.raw()) {
        const auto train_records = select(data.records, train_idx);
        const auto stats = fit_stats(train_records, *data.schema);
        train = transform(train_records, *data.schema, stats, cfg.unknown);
        if (!pool_idx.empty()) pool = transform(select(data.records, pool_idx), *data.schema, stats, cfg.unknown);
        out.test = transform(select(data.records, test_idx), *data.schema, stats, cfg.unknown);
    } else {
        train = data.cached.subset(train_idx);
        pool = data.cached.subset(pool_idx);
        out.test = data.cached.subset(test_idx);
    }
    if (contamination > 0.0) {
        auto mixed = mix_contamination(train.features, pool.features, contamination, seed);
        out.train_anomalies = mixed.audit_anomaly_count();
        out.train = mixed.features();
    } else {
        out.train = std::move(train.features);
    }
    return out;
}

/// One seed of one cell. Numerical failures become failed entries.
inline RunResult run_once(const ExperimentData& data, const ExperimentConfig& cfg, bool with_som,
                          double contamination, std::uint64_t seed) {
    RunResult r;
    r.seed = seed;
    const auto prep = prepare_run(data, cfg, contamination, seed);
    r.train_size = prep.train.rows();
    r.train_anomalies = prep.train_anomalies;
    r.test_size = prep.test.size();
    r.test_anomalies = prep.test.anomaly_count();
    try {
        const auto pipeline = cfg.pipeline(prep.train.cols(), with_som).with_seed(seed);
        const auto model = train(prep.train, pipeline);
        const auto energies = score(model, prep.test.features);
        const double ratio = static_cast<double>(r.test_anomalies) / static_cast<double>(r.test_size);
        const auto policy = cfg.threshold.resolve(ratio);
        r.threshold_ratio = policy.kind == ThresholdPolicy::Kind::percentile ? policy.value : 0.0;
        r.metrics = compute_metrics(threshold_energies(energies, policy), prep.test.anomaly);
        r.ok = true;
    } catch (const DivergedTraining& e) {
        r.error = e.what();
    } catch (const SingularMatrix& e) {
        r.error = e.what();
    }
    return r;
}

struct CellPlan {
    bool with_som = true;
    double contamination = 0.0;  // 0 = ideal scenario
    ExperimentConfig config;
};

/// Runs every (cell, seed) pair on up to `jobs` threads. Results land in fixed
/// slots so the output does not depend on scheduling.
inline std::vector<CellReport> run_cells(const ExperimentData& data, const std::vector<CellPlan>& cells,
                                         const std::vector<std::uint64_t>& seeds, std::size_t jobs,
                                         const std::function<void(const std::string&)>& progress = {}) {
    std::vector<CellReport> out(cells.size());
    for (std::size_t c = 0; c < cells.size(); ++c) {
        out[c].with_som = cells[c].with_som;
        out[c].algorithm = algorithm_name(cells[c].with_som);
        out[c].scenario = cells[c].contamination > 0.0 ? "mixed" : "ideal";
        out[c].contamination = cells[c].contamination;
        out[c].runs.resize(seeds.size());
    }
    const std::size_t total = cells.size() * seeds.size();
    std::atomic<std::size_t> next{0};
    std::mutex lock;
    std::exception_ptr first_error;
    auto worker = [&] {
        for (;;) {
            const std::size_t t = next.fetch_add(1);
            if (t >= total) return;
            const std::size_t c = t / seeds.size(), s = t % seeds.size();
            try {
                auto r = run_once(data, cells[c].config, cells[c].with_som, cells[c].contamination, seeds[s]);
                std::lock_guard g(lock);
                if (progress)
                    progress(out[c].condition() + " seed " + std::to_string(seeds[s]) +
                             (r.ok ? " f1 " + format_real(r.metrics.f1) : " failed: " + r.error));
                out[c].runs[s] = std::move(r);
            } catch (...) {
                std::lock_guard g(lock);
                if (!first_error) first_error = std::current_exception();
                next = total;
            }
        }
    };
    const std::size_t n = std::max<std::size_t>(1, std::min(jobs, total));
    if (n == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t i = 0; i < n; ++i) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }
    if (first_error) std::rethrow_exception(first_error);
    for (auto& cell : out) cell.summary = aggregate(cell.runs);
    return out;
}

struct ExperimentReport {
    ExperimentConfig config;
    std::string schema_hash;
    std::vector<CellReport> cells;
};

inline std::vector<CellPlan> experiment_cells(const ExperimentConfig& cfg) {
    std::vector<CellPlan> cells;
    const std::vector<double> ratios = cfg.scenario == "mixed" ? cfg.ratios : std::vector<double>{0.0};
    for (double r : ratios)
        for (bool arm : cfg.arms) cells.push_back({arm, r, cfg});
    return cells;
}

inline ExperimentReport run_experiment(const ExperimentConfig& cfg, const ExperimentData& data,
                                       const std::function<void(const std::string&)>& progress = {}) {
    cfg.validate();
    return {cfg, data.schema_hash, run_cells(data, experiment_cells(cfg), cfg.seeds, cfg.jobs, progress)};
}

inline nlohmann::ordered_json summary_stats(const MeanStdev& m) {
    return {{"avg", m.mean}, {"stdev", m.stdev}, {"n", m.count}};
}

/// Fixed choices that shape every number in a report.
inline nlohmann::ordered_json decision_flags(const ExperimentConfig& c) {
    return {
        {"threshold", c.threshold.to_string()},
        {"threshold_ties", "earlier index flagged first"},
        {"reconstruction_features", to_string(c.reconstruction)},
        {"covariance_eps", c.train.eps},
        {"norm_floor", 1e-12},
        {"stdev", "population"},
        {"quantiles", "linear interpolation at (n-1)p"},
        {"scaling", "min-max fit on the training split, test values clipped to [0,1]"},
        {"unknown_categories", to_string(c.unknown)},
        {"contamination", "fraction of the final training set, anomalies held aside from test"},
        {"som_init", to_string(c.som.init)},
        {"failed_runs", "excluded from aggregates"},
    };
}

inline std::string summary_json(const ExperimentReport& rep) {
    nlohmann::ordered_json j;
    j["format"] = "somdagmm-report 1";
    j["config_hash"] = config_hash(rep.config);
    j["schema_hash"] = rep.schema_hash;
    j["config"] = resolved_config(rep.config);
    j["decisions"] = decision_flags(rep.config);
    auto cells = nlohmann::ordered_json::array();
    for (const auto& c : rep.cells) {
        nlohmann::ordered_json cell;
        cell["algorithm"] = c.algorithm;
        cell["scenario"] = c.scenario;
        cell["contamination"] = c.contamination;
        cell["runs"] = c.summary.runs;
        cell["failed"] = c.summary.failed;
        cell["accuracy"] = summary_stats(c.summary.accuracy);
        cell["precision"] = summary_stats(c.summary.precision);
        cell["recall"] = summary_stats(c.summary.recall);
        cell["f1"] = summary_stats(c.summary.f1);
        auto runs = nlohmann::ordered_json::array();
        for (const auto& r : c.runs) {
            nlohmann::ordered_json run{{"seed", r.seed}, {"ok", r.ok}};
            if (r.ok)
                run["metrics"] = {{"accuracy", r.metrics.accuracy},
                                  {"precision", r.metrics.precision},
                                  {"recall", r.metrics.recall},
                                  {"f1", r.metrics.f1}};
            else
                run["error"] = r.error;
            runs.push_back(std::move(run));
        }
        cell["seeds"] = std::move(runs);
        cells.push_back(std::move(cell));
    }
    j["cells"] = std::move(cells);
    return j.dump(2) + "\n";
}

/// File name → content of every report artifact.
inline std::map<std::string, std::string> report_files(const ExperimentReport& rep) {
    std::map<std::string, std::string> files;
    const int d = rep.config.digits;
    if (rep.config.scenario == "mixed") files["table_mixed.csv"] = mixed_table_csv(rep.cells, d);
    else files["table_ideal.csv"] = ideal_table_csv(rep.cells, d);
    files["runs.csv"] = runs_csv(rep.cells);
    files["whisker.csv"] = whisker_csv(rep.cells);
    files["degradation.csv"] = degradation_csv(rep.cells);
    files["summary.json"] = summary_json(rep);
    files["config.txt"] = config_to_text(resolved_config(rep.config));
    return files;
}

inline void write_files(const std::string& dir, const std::map<std::string, std::string>& files) {
    std::filesystem::create_directories(dir);
    for (const auto& [name, text] : files) io::write_text((std::filesystem::path(dir) / name).string(), text);
}

/// F1 over a SOM learning rate × neighborhood grid on the ideal scenario.
struct SweepPoint {
    double learning_rate = 0.0;
    Neighborhood neighborhood = Neighborhood::bubble;
    CellReport cell;
};

inline std::vector<SweepPoint> run_sweep(const ExperimentConfig& cfg, const ExperimentData& data,
                                         const std::function<void(const std::string&)>& progress = {}) {
    cfg.validate();
    std::vector<CellPlan> cells;
    std::vector<SweepPoint> points;
    for (auto n : cfg.sweep_neighborhoods)
        for (double lr : cfg.sweep_learning_rates) {
            CellPlan plan{true, 0.0, cfg};
            plan.config.som.learning_rate = lr;
            plan.config.som.neighborhood = n;
            cells.push_back(plan);
            points.push_back({lr, n, {}});
        }
    auto reports = run_cells(data, cells, cfg.seeds, cfg.jobs, progress);
    for (std::size_t i = 0; i < points.size(); ++i) points[i].cell = std::move(reports[i]);
    return points;
}

inline std::string sweep_csv(const std::vector<SweepPoint>& points) {
    std::ostringstream out;
    out << "learning_rate,neighborhood,f1_avg,f1_stdev,runs,failed\n";
    for (const auto& p : points)
        out << format_real(p.learning_rate) << ',' << to_string(p.neighborhood) << ','
            << format_real(p.cell.summary.f1.mean) << ',' << format_real(p.cell.summary.f1.stdev) << ','
            << p.cell.summary.runs << ',' << p.cell.summary.failed << '\n';
    return out.str();
}

}  // namespace somdagmm
