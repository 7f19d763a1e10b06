#include <CLI11.hpp>

#include <iostream>

#include "somdagmm/experiment.hpp"

using namespace somdagmm;

namespace {

enum ExitCode : int { kOk = 0, kUsage = 1, kData = 2, kDiverged = 3 };

/// Config keys exposed as flags on one subcommand.
struct KeyFlags {
    std::map<std::string, std::string> values;
    std::map<std::string, CLI::Option*> options;
    std::string config_file;

    void attach(CLI::App* cmd, const std::vector<std::string>& prefixes) {
        cmd->add_option("--config", config_file, "key = value settings file; flags override it");
        for (const auto& k : config_keys()) {
            const std::string key = k.key;
            const bool wanted = std::any_of(prefixes.begin(), prefixes.end(),
                                            [&](const std::string& p) { return key.rfind(p, 0) == 0; });
            if (wanted)
                options[key] = cmd->add_option("--" + key, values[key], k.help)
                                   ->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
        }
    }

    ExperimentConfig resolve() const {
        ExperimentConfig cfg;
        if (!config_file.empty()) apply_config(cfg, load_config(config_file));
        ConfigMap flags;
        for (const auto& [key, opt] : options)
            if (opt->count() > 0) flags[key] = values.at(key);
        apply_config(cfg, flags);
        return cfg;
    }
};

void print_metrics(std::ostream& out, const Metrics& m) {
    out << "accuracy " << format_real(m.accuracy) << "\nprecision " << format_real(m.precision)
        << (m.precision_undefined ? " (undefined, reported as 0)" : "") << "\nrecall " << format_real(m.recall)
        << (m.recall_undefined ? " (undefined, reported as 0)" : "") << "\nf1 " << format_real(m.f1)
        << (m.f1_undefined ? " (undefined, reported as 0)" : "") << "\ntp " << m.tp << " fp " << m.fp << " fn "
        << m.fn << " tn " << m.tn << '\n';
}

/// Preprocessed rows of a cache or raw file, checked against the model's schema.
LabeledDataset load_scoring_input(const ModelFile& mf, const std::string& input, const std::string& schema_ref,
                                  UnknownCategoryPolicy unknown) {
    const auto& expected = mf.model.preprocess.schema_hash;
    auto refuse = [&](const std::string& actual) {
        throw DataError("schema hash mismatch: model " + (expected.empty() ? std::string("none") : expected) +
                        ", input " + actual + "; refusing to score");
    };
    if (is_cache_file(input)) {
        auto cache = load_cache(input);
        if (cache.stats.schema_hash != expected) refuse(cache.stats.schema_hash);
        if (cache.data.features.cols() != mf.model.nets.compression.input_dim())
            throw DataError("input has " + std::to_string(cache.data.features.cols()) + " columns, model expects " +
                            std::to_string(mf.model.nets.compression.input_dim()));
        return std::move(cache.data);
    }
    const auto schema = resolve_schema(schema_ref);
    if (schema.hash() != expected) refuse(schema.hash());
    const auto parsed = parse_records(input, schema);
    TransformReport rep;
    auto ds = transform(parsed.records, schema, mf.model.preprocess, unknown, &rep);
    if (rep.unknown_categories > 0)
        std::cerr << "warning: " << rep.unknown_categories << " unseen categorical values encoded as zeros\n";
    return ds;
}

int cmd_preprocess(const std::string& input, const std::string& schema_ref, const std::string& output,
                   std::string report_path, const std::string& stats_from, const std::string& unknown,
                   double max_bad_ratio) {
    if (report_path.empty()) report_path = output + ".report.json";
    const auto schema = resolve_schema(schema_ref);
    ParseOptions opt;
    opt.max_bad_ratio = max_bad_ratio;
    ParseResult parsed;
    try {
        parsed = parse_records(input, schema, opt);
    } catch (const DataError& e) {
        nlohmann::ordered_json j{{"source", input}, {"schema_hash", schema.hash()}, {"error", e.what()}};
        io::write_text(report_path, j.dump(2) + "\n");
        std::cerr << "error: " << e.what() << "\nreport: " << report_path << '\n';
        return kData;
    }
    io::write_text(report_path, parsed.report.to_json());

    DatasetCache cache;
    cache.schema_name = schema.name;
    TransformReport trep;
    if (!stats_from.empty()) {
        cache.stats = load_cache(stats_from).stats;
        cache.data = transform(parsed.records, schema, cache.stats, parse_unknown_policy(unknown), &trep);
    } else {
        auto fit = fit_transform(parsed.records, schema, parse_unknown_policy(unknown));
        cache.stats = std::move(fit.stats);
        cache.data = std::move(fit.dataset);
        trep = fit.report;
    }
    save_cache(output, cache);
    std::cout << "rows " << cache.data.size() << " dim " << cache.data.features.cols() << " anomalies "
              << cache.data.anomaly_count() << " skipped " << parsed.report.issues.size() << " clipped "
              << trep.clipped_values << " unknown " << trep.unknown_categories << '\n'
              << "schema_hash " << cache.stats.schema_hash << "\ncache " << output << "\nreport " << report_path
              << '\n';
    return kOk;
}

int cmd_train(const ExperimentConfig& cfg, const std::string& data_path, const std::string& model_path,
              std::string log_path, std::optional<std::uint64_t> seed_flag, bool no_som) {
    if (log_path.empty()) log_path = model_path + ".log.csv";
    cfg.validate();
    const auto cache = load_cache(data_path);
    const std::uint64_t seed = seed_flag ? *seed_flag : env_seed(0);
    const auto pipeline = cfg.pipeline(cache.data.features.cols(), !no_som).with_seed(seed);

    std::vector<EpochLog> log;
    ModelFile mf;
    try {
        mf.model = train(cache.data.features, pipeline, [&](const EpochLog& e) { log.push_back(e); });
    } catch (const DivergedTraining&) {
        io::write_text(log_path, training_log_csv(log));
        std::cerr << "training log kept at " << log_path << '\n';
        throw;
    }
    mf.model.preprocess = cache.stats;
    mf.threshold = cfg.threshold;
    save_model(model_path, mf);
    io::write_text(log_path, training_log_csv(mf.model.log));

    std::cout << "seed " << seed << "\nlatent_dim " << mf.model.latent_layout().dim() << '\n';
    if (!mf.model.log.empty()) {
        const auto& last = mf.model.log.back();
        std::cout << "epoch " << last.epoch << " reconstruction " << format_real(last.terms.reconstruction)
                  << " energy " << format_real(last.terms.energy) << " penalty "
                  << format_real(last.terms.penalty) << " objective " << format_real(last.terms.objective) << '\n';
    }
    std::cout << "model " << model_path << "\nlog " << log_path << '\n';
    return kOk;
}

int cmd_score(const std::string& model_path, const std::string& input, const std::string& schema_ref,
              const std::string& output, const std::string& unknown) {
    const auto mf = load_model(model_path);
    const auto ds = load_scoring_input(mf, input, schema_ref, parse_unknown_policy(unknown));
    const auto energies = score(mf.model, ds.features);
    std::ostringstream out;
    out << "row,energy\n";
    for (std::size_t i = 0; i < energies.size(); ++i) out << i << ',' << format_real(energies[i]) << '\n';
    if (output.empty()) std::cout << out.str();
    else io::write_text(output, out.str());
    return kOk;
}

int cmd_evaluate(const std::string& model_path, const std::string& input, const std::string& schema_ref,
                 const std::string& threshold, const std::string& output, const std::string& unknown) {
    const auto mf = load_model(model_path);
    const auto policy_in = threshold.empty() ? mf.threshold : ThresholdPolicy::parse(threshold);
    const auto ds = load_scoring_input(mf, input, schema_ref, parse_unknown_policy(unknown));
    if (ds.size() == 0) throw DataError("evaluate: no rows");
    const auto energies = score(mf.model, ds.features);
    const double ratio = static_cast<double>(ds.anomaly_count()) / static_cast<double>(ds.size());
    if (policy_in.kind == ThresholdPolicy::Kind::known_ratio && ds.anomaly_count() == 0)
        throw DataError("evaluate: known-ratio threshold needs at least one labelled anomaly");
    const auto policy = policy_in.resolve(ratio);
    const auto m = compute_metrics(threshold_energies(energies, policy), ds.anomaly);

    std::cout << "rows " << ds.size() << " anomalies " << ds.anomaly_count() << "\nthreshold " << policy.to_string()
              << '\n';
    print_metrics(std::cout, m);
    if (!output.empty()) {
        nlohmann::ordered_json j{{"model", model_path},
                                 {"input", input},
                                 {"threshold", policy.to_string()},
                                 {"rows", ds.size()},
                                 {"anomalies", ds.anomaly_count()},
                                 {"accuracy", m.accuracy},
                                 {"precision", m.precision},
                                 {"recall", m.recall},
                                 {"f1", m.f1},
                                 {"precision_undefined", m.precision_undefined},
                                 {"recall_undefined", m.recall_undefined},
                                 {"f1_undefined", m.f1_undefined},
                                 {"tp", m.tp},
                                 {"fp", m.fp},
                                 {"fn", m.fn},
                                 {"tn", m.tn}};
        io::write_text(output, j.dump(2) + "\n");
    }
    return kOk;
}

std::function<void(const std::string&)> progress_printer(bool quiet) {
    if (quiet) return {};
    return [](const std::string& line) { std::cerr << line << '\n'; };
}

int cmd_experiment(const ExperimentConfig& cfg, const std::string& out_dir, bool quiet) {
    cfg.validate();
    const auto data = load_experiment_data(cfg);
    const auto rep = run_experiment(cfg, data, progress_printer(quiet));
    const auto files = report_files(rep);
    write_files(out_dir, files);
    std::cout << files.at(cfg.scenario == "mixed" ? "table_mixed.csv" : "table_ideal.csv");
    std::size_t failed = 0;
    for (const auto& c : rep.cells) failed += c.summary.failed;
    if (failed > 0) std::cout << "failed runs: " << failed << " (see runs.csv)\n";
    std::cout << "config_hash " << config_hash(cfg) << "\nreports " << out_dir << '\n';
    return kOk;
}

int cmd_sweep(const ExperimentConfig& cfg, const std::string& out_dir, bool quiet) {
    cfg.validate();
    const auto data = load_experiment_data(cfg);
    const auto points = run_sweep(cfg, data, progress_printer(quiet));
    std::vector<CellReport> cells;
    for (const auto& p : points) cells.push_back(p.cell);
    ExperimentReport rep{cfg, data.schema_hash, cells};
    write_files(out_dir, {{"sweep.csv", sweep_csv(points)},
                          {"summary.json", summary_json(rep)},
                          {"config.txt", config_to_text(resolved_config(cfg))}});
    std::cout << sweep_csv(points) << "config_hash " << config_hash(cfg) << "\nreports " << out_dir << '\n';
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"SOM-DAGMM anomaly detection"};
    app.require_subcommand(1);

    auto* pre = app.add_subcommand("preprocess", "parse and scale a dataset into a cache");
    std::string pre_input, pre_schema = "nsl-kdd", pre_output, pre_report, pre_stats, pre_unknown = "warn-zeros";
    double pre_bad = 0.01;
    pre->add_option("--input", pre_input, "raw dataset")->required();
    pre->add_option("--schema", pre_schema, "schema name or file")->capture_default_str();
    pre->add_option("--output", pre_output, "cache to write")->required();
    pre->add_option("--report", pre_report, "parse report path (default <output>.report.json)");
    pre->add_option("--stats-from", pre_stats, "reuse scaling stats of an existing cache");
    pre->add_option("--unknown", pre_unknown, "warn-zeros | reject")->capture_default_str();
    pre->add_option("--max-bad-ratio", pre_bad, "largest tolerated fraction of malformed lines")->capture_default_str();

    const std::vector<std::string> model_keys{"som.", "ae.", "est.", "train.", "model.", "threshold"};
    auto* tr = app.add_subcommand("train", "train a model on a cache");
    KeyFlags tr_keys;
    tr_keys.attach(tr, model_keys);
    std::string tr_data, tr_model, tr_log;
    std::optional<std::uint64_t> tr_seed;
    bool tr_no_som = false;
    tr->add_option("--data", tr_data, "preprocessed cache")->required();
    tr->add_option("--model", tr_model, "model file to write")->required();
    tr->add_option("--log", tr_log, "training log CSV (default <model>.log.csv)");
    tr->add_option("--seed", tr_seed, "run seed (default SOMDAGMM_SEED, else 0)");
    tr->add_flag("--no-som", tr_no_som, "train the ablation without SOM coordinates");

    auto* sc = app.add_subcommand("score", "write one energy per input row");
    std::string sc_model, sc_input, sc_schema = "nsl-kdd", sc_output, sc_unknown = "warn-zeros";
    sc->add_option("--model", sc_model, "model file")->required();
    sc->add_option("--input", sc_input, "cache or raw dataset")->required();
    sc->add_option("--schema", sc_schema, "schema of a raw input")->capture_default_str();
    sc->add_option("--output", sc_output, "energies CSV (default stdout)");
    sc->add_option("--unknown", sc_unknown, "warn-zeros | reject")->capture_default_str();

    auto* ev = app.add_subcommand("evaluate", "score labelled rows and report metrics");
    std::string ev_model, ev_input, ev_schema = "nsl-kdd", ev_threshold, ev_output, ev_unknown = "warn-zeros";
    ev->add_option("--model", ev_model, "model file")->required();
    ev->add_option("--input", ev_input, "cache or raw dataset")->required();
    ev->add_option("--schema", ev_schema, "schema of a raw input")->capture_default_str();
    ev->add_option("--threshold", ev_threshold, "override the model's threshold policy");
    ev->add_option("--output", ev_output, "metrics JSON");
    ev->add_option("--unknown", ev_unknown, "warn-zeros | reject")->capture_default_str();

    const std::vector<std::string> all_keys{""};
    auto* ex = app.add_subcommand("experiment", "multi-seed evaluation of SOM-DAGMM and the ablation");
    KeyFlags ex_keys;
    ex_keys.attach(ex, all_keys);
    std::string ex_out;
    bool ex_quiet = false;
    ex->add_option("--out", ex_out, "report directory")->required();
    ex->add_flag("--quiet", ex_quiet, "no per-run progress lines");

    auto* sw = app.add_subcommand("sweep", "F1 over SOM learning rate and neighborhood");
    KeyFlags sw_keys;
    sw_keys.attach(sw, all_keys);
    std::string sw_out;
    bool sw_quiet = false;
    sw->add_option("--out", sw_out, "report directory")->required();
    sw->add_flag("--quiet", sw_quiet, "no per-run progress lines");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kUsage;
    }

    try {
        if (*pre) return cmd_preprocess(pre_input, pre_schema, pre_output, pre_report, pre_stats, pre_unknown, pre_bad);
        if (*tr) return cmd_train(tr_keys.resolve(), tr_data, tr_model, tr_log, tr_seed, tr_no_som);
        if (*sc) return cmd_score(sc_model, sc_input, sc_schema, sc_output, sc_unknown);
        if (*ev) return cmd_evaluate(ev_model, ev_input, ev_schema, ev_threshold, ev_output, ev_unknown);
        if (*ex) return cmd_experiment(ex_keys.resolve(), ex_out, ex_quiet);
        if (*sw) return cmd_sweep(sw_keys.resolve(), sw_out, sw_quiet);
    } catch (const DivergedTraining& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kDiverged;
    } catch (const InvalidArgument& e) {
        std::cerr << "usage error: " << e.what() << '\n';
        return kUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kData;
    }
    return kUsage;
}
