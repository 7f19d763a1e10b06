#pragma once

#include <cstdlib>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "data.hpp"
#include "errors.hpp"
#include "eval.hpp"
#include "trainer.hpp"

namespace somdagmm {

/// Raw settings: dotted key → textual value.
using ConfigMap = std::map<std::string, std::string>;

struct ConfigKey {
    const char* key;
    const char* help;
};

/// Every recognised key. Each one is also a command-line flag (--key).
inline const std::vector<ConfigKey>& config_keys() {
    static const std::vector<ConfigKey> keys = {
        {"data.path", "input dataset (raw records or a preprocessed cache)"},
        {"data.schema", "schema name (nsl-kdd) or schema file path"},
        {"data.subsample", "seeded subsample size before splitting, 0 keeps every row"},
        {"data.subsample_seed", "seed of the subsample draw"},
        {"data.unknown", "unseen categorical values: warn-zeros | reject"},
        {"data.max_bad_ratio", "largest tolerated fraction of malformed lines"},
        {"experiment.scenario", "ideal | mixed"},
        {"experiment.ratios", "contamination ratios for the mixed scenario, comma separated"},
        {"experiment.seeds", "run seeds, comma separated or a range a..b"},
        {"experiment.arms", "algorithms to run: dagmm, som-dagmm or both"},
        {"experiment.jobs", "parallel seeded runs"},
        {"experiment.digits", "decimals in the AVG(STDEV) table cells"},
        {"threshold", "known-ratio | percentile:<r> | fixed:<v>"},
        {"som.width", "grid width"},
        {"som.height", "grid height"},
        {"som.learning_rate", "initial learning rate"},
        {"som.neighborhood", "bubble | gaussian"},
        {"som.radius", "initial neighborhood radius, 0 selects half the larger grid side"},
        {"som.iterations", "training steps, 0 selects min(10n, 500000)"},
        {"som.init", "random | sample"},
        {"ae.layers", "encoder widths after the input, comma separated"},
        {"est.hidden", "estimation hidden widths, comma separated"},
        {"est.components", "mixture components K"},
        {"est.dropout", "dropout rate"},
        {"train.lr", "optimizer learning rate"},
        {"train.batch", "batch size"},
        {"train.lambda1", "energy weight"},
        {"train.lambda2", "covariance penalty weight"},
        {"train.epochs", "epochs"},
        {"train.eps", "covariance diagonal regulariser"},
        {"train.optimizer", "adam | sgd"},
        {"model.zr", "reconstruction features: both | euclidean-only"},
        {"sweep.learning_rates", "SOM learning rates to sweep, comma separated"},
        {"sweep.neighborhoods", "SOM neighborhoods to sweep, comma separated"},
    };
    return keys;
}

inline bool is_config_key(const std::string& k) {
    for (const auto& c : config_keys())
        if (k == c.key) return true;
    return false;
}

/// Parses "key = value" lines. '#' starts a comment; blank lines are skipped.
inline ConfigMap parse_config_text(const std::string& text, const std::string& source = "config") {
    ConfigMap out;
    std::istringstream in(text);
    std::string line;
    std::size_t ln = 0;
    while (std::getline(in, line)) {
        ++ln;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        const auto t = detail::trim(line);
        if (t.empty()) continue;
        const auto eq = t.find('=');
        if (eq == std::string_view::npos)
            throw InvalidArgument(source + ":" + std::to_string(ln) + ": expected key = value");
        const std::string key(detail::trim(t.substr(0, eq)));
        const std::string value(detail::trim(t.substr(eq + 1)));
        if (!is_config_key(key)) throw InvalidArgument(source + ":" + std::to_string(ln) + ": unknown key '" + key + "'");
        out[key] = value;
    }
    return out;
}

inline ConfigMap load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InvalidArgument("cannot open config '" + path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_config_text(buf.str(), path);
}

namespace detail {

inline std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    for (auto part : split_commas(s)) {
        const auto t = trim(part);
        if (!t.empty()) out.emplace_back(t);
    }
    return out;
}

inline double to_real(const std::string& key, const std::string& v) {
    double out = 0.0;
    if (!parse_double(v, out)) throw InvalidArgument(key + ": '" + v + "' is not a number");
    return out;
}

inline std::uint64_t to_u64(const std::string& key, const std::string& v) {
    std::uint64_t out = 0;
    const auto r = std::from_chars(v.data(), v.data() + v.size(), out);
    if (r.ec != std::errc() || r.ptr != v.data() + v.size())
        throw InvalidArgument(key + ": '" + v + "' is not a non-negative integer");
    return out;
}

inline std::vector<std::size_t> to_sizes(const std::string& key, const std::string& v) {
    std::vector<std::size_t> out;
    for (const auto& p : split_list(v)) out.push_back(static_cast<std::size_t>(to_u64(key, p)));
    return out;
}

inline std::string join_sizes(const std::vector<std::size_t>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
    return s;
}

inline std::string join_reals(const std::vector<double>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + format_real(v[i]);
    return s;
}

}  // namespace detail

/// Parses "1,2,5" or "1..10" (inclusive) into seeds.
inline std::vector<std::uint64_t> parse_seed_list(const std::string& s) {
    std::vector<std::uint64_t> out;
    for (const auto& part : detail::split_list(s)) {
        const auto dots = part.find("..");
        if (dots == std::string::npos) {
            out.push_back(detail::to_u64("seeds", part));
            continue;
        }
        const auto lo = detail::to_u64("seeds", part.substr(0, dots));
        const auto hi = detail::to_u64("seeds", part.substr(dots + 2));
        if (hi < lo) throw InvalidArgument("seeds: empty range '" + part + "'");
        if (hi - lo >= 100000) throw InvalidArgument("seeds: range '" + part + "' is too long");
        for (auto v = lo; v <= hi; ++v) out.push_back(v);
    }
    return out;
}

/// The seed used when nothing else names one: SOMDAGMM_SEED, else `fallback`.
inline std::uint64_t env_seed(std::uint64_t fallback) {
    const char* v = std::getenv("SOMDAGMM_SEED");
    if (!v || !*v) return fallback;
    return detail::to_u64("SOMDAGMM_SEED", v);
}

/// Complete description of an experiment. Input widths are filled from the data.
struct ExperimentConfig {
    std::string dataset;
    std::string schema = "nsl-kdd";
    std::size_t subsample = 0;
    std::uint64_t subsample_seed = 0;
    UnknownCategoryPolicy unknown = UnknownCategoryPolicy::warn_zeros;
    double max_bad_ratio = 0.01;

    std::string scenario = "ideal";
    std::vector<double> ratios{0.01, 0.05, 0.10};
    std::vector<std::uint64_t> seeds;
    std::vector<bool> arms{false, true};  // with_som per arm
    std::size_t jobs = 1;
    int digits = 2;
    ThresholdPolicy threshold = ThresholdPolicy::known();

    SomConfig som;
    std::vector<std::size_t> ae_layers{60, 30, 10, 1};
    EstimationConfig estimation;
    TrainConfig train;
    ReconstructionMode reconstruction = ReconstructionMode::both;

    std::vector<double> sweep_learning_rates{0.2, 0.4, 0.6, 0.8, 1.0};
    std::vector<Neighborhood> sweep_neighborhoods{Neighborhood::bubble, Neighborhood::gaussian};

    ExperimentConfig() : seeds(default_seeds()) {}

    /// Ten consecutive seeds starting at SOMDAGMM_SEED (or 1).
    static std::vector<std::uint64_t> default_seeds() {
        const auto base = env_seed(1);
        std::vector<std::uint64_t> s;
        for (std::uint64_t i = 0; i < 10; ++i) s.push_back(base + i);
        return s;
    }

    void validate() const {
        if (scenario != "ideal" && scenario != "mixed")
            throw InvalidArgument("experiment.scenario must be ideal or mixed, got '" + scenario + "'");
        if (scenario == "mixed") {
            if (ratios.empty()) throw InvalidArgument("experiment.ratios: at least one ratio required");
            for (double r : ratios)
                if (!(r > 0.0 && r < 0.5)) throw InvalidArgument("experiment.ratios: each ratio must be in (0, 0.5)");
        }
        if (seeds.empty()) throw InvalidArgument("experiment.seeds: at least one seed required");
        auto sorted = seeds;
        std::sort(sorted.begin(), sorted.end());
        if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
            throw InvalidArgument("experiment.seeds: seeds must be unique");
        if (arms.empty()) throw InvalidArgument("experiment.arms: at least one arm required");
        if (jobs < 1) throw InvalidArgument("experiment.jobs must be >= 1");
        if (digits < 0 || digits > 17) throw InvalidArgument("experiment.digits must be in [0, 17]");
        if (!(max_bad_ratio >= 0.0 && max_bad_ratio <= 1.0)) throw InvalidArgument("data.max_bad_ratio must be in [0, 1]");
        if (sweep_learning_rates.empty() || sweep_neighborhoods.empty())
            throw InvalidArgument("sweep: learning rates and neighborhoods must be non-empty");
        for (double lr : sweep_learning_rates)
            if (!(lr > 0.0 && lr <= 1.0)) throw InvalidArgument("sweep.learning_rates: each must be in (0, 1]");
        threshold.validate();
        som.validate();
        pipeline(2).autoencoder.validate();
        estimation.validate();
        train.validate();
    }

    /// Pipeline for input width `d`, before per-run seeding.
    PipelineConfig pipeline(std::size_t d, bool with_som = true) const {
        PipelineConfig p;
        p.som = som;
        p.autoencoder.layer_sizes = {d};
        p.autoencoder.layer_sizes.insert(p.autoencoder.layer_sizes.end(), ae_layers.begin(), ae_layers.end());
        p.estimation = estimation;
        p.train = train;
        p.with_som = with_som;
        p.reconstruction = reconstruction;
        return p;
    }
};

inline std::string arms_to_string(const std::vector<bool>& arms) {
    std::string s;
    for (std::size_t i = 0; i < arms.size(); ++i) s += (i ? "," : "") + std::string(arms[i] ? "som-dagmm" : "dagmm");
    return s;
}

/// Applies `m` on top of `c`. Later calls override earlier ones.
inline void apply_config(ExperimentConfig& c, const ConfigMap& m) {
    using namespace detail;
    for (const auto& [k, v] : m) {
        if (k == "data.path") c.dataset = v;
        else if (k == "data.schema") c.schema = v;
        else if (k == "data.subsample") c.subsample = to_u64(k, v);
        else if (k == "data.subsample_seed") c.subsample_seed = to_u64(k, v);
        else if (k == "data.unknown") c.unknown = parse_unknown_policy(v);
        else if (k == "data.max_bad_ratio") c.max_bad_ratio = to_real(k, v);
        else if (k == "experiment.scenario") c.scenario = v;
        else if (k == "experiment.ratios") {
            c.ratios.clear();
            for (const auto& p : split_list(v)) c.ratios.push_back(to_real(k, p));
        } else if (k == "experiment.seeds") c.seeds = parse_seed_list(v);
        else if (k == "experiment.arms") {
            c.arms.clear();
            for (const auto& p : split_list(v)) {
                if (p == "dagmm" || p == "no-som") c.arms.push_back(false);
                else if (p == "som-dagmm" || p == "som") c.arms.push_back(true);
                else if (p == "both") c.arms.insert(c.arms.end(), {false, true});
                else throw InvalidArgument(k + ": unknown arm '" + p + "'");
            }
        } else if (k == "experiment.jobs") c.jobs = to_u64(k, v);
        else if (k == "experiment.digits") c.digits = static_cast<int>(to_u64(k, v));
        else if (k == "threshold") c.threshold = ThresholdPolicy::parse(v);
        else if (k == "som.width") c.som.grid_width = to_u64(k, v);
        else if (k == "som.height") c.som.grid_height = to_u64(k, v);
        else if (k == "som.learning_rate") c.som.learning_rate = to_real(k, v);
        else if (k == "som.neighborhood") c.som.neighborhood = parse_neighborhood(v);
        else if (k == "som.radius") c.som.initial_radius = to_real(k, v);
        else if (k == "som.iterations") c.som.iterations = to_u64(k, v);
        else if (k == "som.init") c.som.init = parse_som_init(v);
        else if (k == "ae.layers") c.ae_layers = to_sizes(k, v);
        else if (k == "est.hidden") c.estimation.hidden = to_sizes(k, v);
        else if (k == "est.components") c.estimation.components = to_u64(k, v);
        else if (k == "est.dropout") c.estimation.dropout_rate = to_real(k, v);
        else if (k == "train.lr") c.train.learning_rate = to_real(k, v);
        else if (k == "train.batch") c.train.batch_size = to_u64(k, v);
        else if (k == "train.lambda1") c.train.lambda1 = to_real(k, v);
        else if (k == "train.lambda2") c.train.lambda2 = to_real(k, v);
        else if (k == "train.epochs") c.train.epochs = to_u64(k, v);
        else if (k == "train.eps") c.train.eps = to_real(k, v);
        else if (k == "train.optimizer") c.train.optimizer = parse_optimizer(v);
        else if (k == "model.zr") c.reconstruction = parse_reconstruction_mode(v);
        else if (k == "sweep.learning_rates") {
            c.sweep_learning_rates.clear();
            for (const auto& p : split_list(v)) c.sweep_learning_rates.push_back(to_real(k, p));
        } else if (k == "sweep.neighborhoods") {
            c.sweep_neighborhoods.clear();
            for (const auto& p : split_list(v)) c.sweep_neighborhoods.push_back(parse_neighborhood(p));
        } else throw InvalidArgument("unknown config key '" + k + "'");
    }
}

/// Every key with its resolved value, defaults included.
inline ConfigMap resolved_config(const ExperimentConfig& c) {
    using namespace detail;
    std::vector<std::string> neigh;
    for (auto n : c.sweep_neighborhoods) neigh.push_back(to_string(n));
    std::string neigh_list;
    for (std::size_t i = 0; i < neigh.size(); ++i) neigh_list += (i ? "," : "") + neigh[i];
    std::string seeds;
    for (std::size_t i = 0; i < c.seeds.size(); ++i) seeds += (i ? "," : "") + std::to_string(c.seeds[i]);
    return {
        {"data.path", c.dataset},
        {"data.schema", c.schema},
        {"data.subsample", std::to_string(c.subsample)},
        {"data.subsample_seed", std::to_string(c.subsample_seed)},
        {"data.unknown", to_string(c.unknown)},
        {"data.max_bad_ratio", format_real(c.max_bad_ratio)},
        {"experiment.scenario", c.scenario},
        {"experiment.ratios", join_reals(c.ratios)},
        {"experiment.seeds", seeds},
        {"experiment.arms", arms_to_string(c.arms)},
        {"experiment.jobs", std::to_string(c.jobs)},
        {"experiment.digits", std::to_string(c.digits)},
        {"threshold", c.threshold.to_string()},
        {"som.width", std::to_string(c.som.grid_width)},
        {"som.height", std::to_string(c.som.grid_height)},
        {"som.learning_rate", format_real(c.som.learning_rate)},
        {"som.neighborhood", to_string(c.som.neighborhood)},
        {"som.radius", format_real(c.som.initial_radius)},
        {"som.iterations", std::to_string(c.som.iterations)},
        {"som.init", to_string(c.som.init)},
        {"ae.layers", join_sizes(c.ae_layers)},
        {"est.hidden", join_sizes(c.estimation.hidden)},
        {"est.components", std::to_string(c.estimation.components)},
        {"est.dropout", format_real(c.estimation.dropout_rate)},
        {"train.lr", format_real(c.train.learning_rate)},
        {"train.batch", std::to_string(c.train.batch_size)},
        {"train.lambda1", format_real(c.train.lambda1)},
        {"train.lambda2", format_real(c.train.lambda2)},
        {"train.epochs", std::to_string(c.train.epochs)},
        {"train.eps", format_real(c.train.eps)},
        {"train.optimizer", to_string(c.train.optimizer)},
        {"model.zr", to_string(c.reconstruction)},
        {"sweep.learning_rates", join_reals(c.sweep_learning_rates)},
        {"sweep.neighborhoods", neigh_list},
    };
}

inline std::string config_to_text(const ConfigMap& m) {
    std::string out;
    for (const auto& [k, v] : m) out += k + " = " + v + "\n";
    return out;
}

/// Hash of the resolved config, excluding keys that cannot change results.
inline std::string config_hash(const ExperimentConfig& c) {
    auto m = resolved_config(c);
    m.erase("experiment.jobs");
    return hex64(fnv1a64(config_to_text(m)));
}

}  // namespace somdagmm
