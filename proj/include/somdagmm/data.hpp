#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "errors.hpp"
#include "matrix.hpp"
#include "rng.hpp"
#include "schema.hpp"

namespace somdagmm {

using FeatureValue = std::variant<double, std::string>;

struct RawRecord {
    std::vector<FeatureValue> values;  // one per schema feature, in schema order
    std::string label;
    std::size_t line = 0;
};

struct ParseIssue {
    std::size_t line = 0;
    std::string message;
};

struct ParseReport {
    std::string source;
    std::size_t lines = 0;  // non-blank data lines seen
    std::size_t parsed = 0;
    std::vector<ParseIssue> issues;
    std::size_t anomalies = 0;
    std::size_t inliers = 0;

    double bad_ratio() const {
        return lines == 0 ? 0.0 : static_cast<double>(issues.size()) / static_cast<double>(lines);
    }

    std::string to_json() const {
        std::ostringstream out;
        out << "{\n  \"source\": \"" << source << "\",\n  \"lines\": " << lines << ",\n  \"parsed\": " << parsed
            << ",\n  \"bad_lines\": " << issues.size() << ",\n  \"inliers\": " << inliers
            << ",\n  \"anomalies\": " << anomalies << ",\n  \"issues\": [";
        for (std::size_t i = 0; i < issues.size(); ++i) {
            std::string msg;
            for (char c : issues[i].message) {
                if (c == '"' || c == '\\') msg += '\\';
                msg += c;
            }
            out << (i ? ",\n" : "\n") << "    {\"line\": " << issues[i].line << ", \"message\": \"" << msg << "\"}";
        }
        out << (issues.empty() ? "]" : "\n  ]") << "\n}\n";
        return out.str();
    }
};

struct ParseOptions {
    /// Fatal when more than this fraction of lines is malformed.
    double max_bad_ratio = 0.01;
};

struct ParseResult {
    std::vector<RawRecord> records;
    ParseReport report;
};

namespace detail {

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

inline std::vector<std::string_view> split_commas(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    for (;;) {
        const auto pos = line.find(',', start);
        out.push_back(trim(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return out;
}

inline bool parse_double(std::string_view s, double& out) {
    if (s.empty()) return false;
    if (s.front() == '+') s.remove_prefix(1);
    const auto res = std::from_chars(s.data(), s.data() + s.size(), out);
    return res.ec == std::errc() && res.ptr == s.data() + s.size() && std::isfinite(out);
}

/// KDD-style labels sometimes carry a trailing '.'.
inline std::string normalize_label(std::string_view s) {
    if (!s.empty() && s.back() == '.') s.remove_suffix(1);
    return std::string(s);
}

inline std::vector<std::string> read_lines(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open input file '" + path + "'");
    std::vector<std::string> lines;
    for (std::string line; std::getline(in, line);) lines.push_back(std::move(line));
    return lines;
}

inline bool blank(const std::string& line) { return trim(line).empty(); }

inline void finish_report(ParseResult& result, const RecordSchema& schema, const ParseOptions& opt) {
    auto& rep = result.report;
    rep.parsed = result.records.size();
    for (const auto& r : result.records) (schema.label_rule.is_anomaly(r.label) ? rep.anomalies : rep.inliers)++;
    if (rep.lines == 0) throw DataError("input '" + rep.source + "' is empty: no data lines");
    if (rep.bad_ratio() > opt.max_bad_ratio)
        throw DataError("input '" + rep.source + "': " + std::to_string(rep.issues.size()) + " of " +
                        std::to_string(rep.lines) + " lines malformed, above the allowed ratio");
}

inline bool convert_fields(const RecordSchema& schema, const std::vector<std::string_view>& fields,
                           const std::vector<std::size_t>& feature_columns, RawRecord& rec, std::string& error) {
    rec.values.clear();
    rec.values.reserve(schema.features.size());
    for (std::size_t f = 0; f < schema.features.size(); ++f) {
        const auto field = fields[feature_columns[f]];
        if (schema.features[f].kind == FeatureKind::continuous) {
            double v;
            if (!parse_double(field, v)) {
                error = "unparseable numeric field '" + std::string(field) + "' for feature '" +
                        schema.features[f].name + "'";
                return false;
            }
            rec.values.emplace_back(v);
        } else {
            rec.values.emplace_back(std::string(field));
        }
    }
    return true;
}

}  // namespace detail

/// Parses positional comma-separated records (NSL-KDD layout: features,
/// label, optional difficulty). Malformed lines are collected in the report.
inline ParseResult parse_nslkdd(const std::string& path, const RecordSchema& schema, const ParseOptions& opt = {}) {
    schema.validate();
    ParseResult result;
    result.report.source = path;
    const std::size_t nf = schema.features.size();
    std::vector<std::size_t> columns = iota_indices(nf);
    const auto lines = detail::read_lines(path);
    for (std::size_t ln = 0; ln < lines.size(); ++ln) {
        if (detail::blank(lines[ln])) continue;
        ++result.report.lines;
        const auto fields = detail::split_commas(lines[ln]);
        if (fields.size() < nf + 1 || fields.size() > nf + 1 + schema.optional_trailing) {
            result.report.issues.push_back({ln + 1, "expected " + std::to_string(nf + 1) + " to " +
                                                        std::to_string(nf + 1 + schema.optional_trailing) +
                                                        " fields, found " + std::to_string(fields.size())});
            continue;
        }
        RawRecord rec;
        rec.line = ln + 1;
        std::string error;
        if (!detail::convert_fields(schema, fields, columns, rec, error)) {
            result.report.issues.push_back({ln + 1, error});
            continue;
        }
        rec.label = detail::normalize_label(fields[nf]);
        result.records.push_back(std::move(rec));
    }
    detail::finish_report(result, schema, opt);
    return result;
}

/// Parses a comma-separated file whose first line names the columns.
/// Columns not named by the schema are ignored.
inline ParseResult parse_csv(const std::string& path, const RecordSchema& schema, const ParseOptions& opt = {}) {
    schema.validate();
    ParseResult result;
    result.report.source = path;
    const auto lines = detail::read_lines(path);
    std::size_t ln = 0;
    while (ln < lines.size() && detail::blank(lines[ln])) ++ln;
    if (ln == lines.size()) throw DataError("input '" + path + "' is empty: no header line");
    const auto header = detail::split_commas(lines[ln]);
    std::map<std::string, std::size_t, std::less<>> by_name;
    for (std::size_t c = 0; c < header.size(); ++c) by_name.emplace(std::string(header[c]), c);
    std::vector<std::size_t> columns;
    for (const auto& f : schema.features) {
        const auto it = by_name.find(f.name);
        if (it == by_name.end()) throw DataError("input '" + path + "': header lacks feature column '" + f.name + "'");
        columns.push_back(it->second);
    }
    const auto label_it = by_name.find(schema.label_column);
    if (label_it == by_name.end())
        throw DataError("input '" + path + "': header lacks label column '" + schema.label_column + "'");
    const std::size_t label_col = label_it->second;

    for (++ln; ln < lines.size(); ++ln) {
        if (detail::blank(lines[ln])) continue;
        ++result.report.lines;
        const auto fields = detail::split_commas(lines[ln]);
        if (fields.size() != header.size()) {
            result.report.issues.push_back({ln + 1, "expected " + std::to_string(header.size()) +
                                                        " fields, found " + std::to_string(fields.size())});
            continue;
        }
        RawRecord rec;
        rec.line = ln + 1;
        std::string error;
        if (!detail::convert_fields(schema, fields, columns, rec, error)) {
            result.report.issues.push_back({ln + 1, error});
            continue;
        }
        rec.label = detail::normalize_label(fields[label_col]);
        result.records.push_back(std::move(rec));
    }
    detail::finish_report(result, schema, opt);
    return result;
}

inline ParseResult parse_records(const std::string& path, const RecordSchema& schema, const ParseOptions& opt = {}) {
    return schema.layout == ColumnLayout::positional ? parse_nslkdd(path, schema, opt) : parse_csv(path, schema, opt);
}

enum class UnknownCategoryPolicy { warn_zeros, reject };

inline UnknownCategoryPolicy parse_unknown_policy(const std::string& s) {
    if (s == "warn-zeros" || s == "warn_zeros") return UnknownCategoryPolicy::warn_zeros;
    if (s == "reject") return UnknownCategoryPolicy::reject;
    throw InvalidArgument("unknown category policy '" + s + "' (expected warn-zeros | reject)");
}

inline std::string to_string(UnknownCategoryPolicy p) {
    return p == UnknownCategoryPolicy::warn_zeros ? "warn-zeros" : "reject";
}

struct ContinuousStats {
    std::string name;
    double min = 0.0;
    double max = 0.0;

    friend bool operator==(const ContinuousStats&, const ContinuousStats&) = default;
};

struct CategoricalStats {
    std::string name;
    std::vector<std::string> vocabulary;

    friend bool operator==(const CategoricalStats&, const CategoricalStats&) = default;
};

/// Min/max per continuous feature (training split only) and fixed
/// vocabularies; features are encoded in schema order.
struct PreprocessStats {
    std::string schema_hash;
    std::vector<FeatureKind> order;  // kind of each schema feature
    std::vector<ContinuousStats> continuous;
    std::vector<CategoricalStats> categorical;

    std::size_t encoded_dim() const {
        std::size_t d = continuous.size();
        for (const auto& c : categorical) d += c.vocabulary.size();
        return d;
    }

    friend bool operator==(const PreprocessStats&, const PreprocessStats&) = default;
};

struct Provenance {
    std::string source;
    std::string schema_hash;
    std::uint64_t seed = 0;
};

/// Preprocessed feature rows with a parallel anomaly flag per row.
struct LabeledDataset {
    Matrix features;
    std::vector<std::uint8_t> anomaly;  // 1 = anomaly (positive class)
    Provenance provenance;

    std::size_t size() const { return features.rows(); }
    std::size_t anomaly_count() const {
        return static_cast<std::size_t>(std::count(anomaly.begin(), anomaly.end(), std::uint8_t{1}));
    }

    LabeledDataset subset(const std::vector<std::size_t>& rows) const {
        LabeledDataset out;
        out.features = Matrix(rows.size(), features.cols());
        out.anomaly.reserve(rows.size());
        for (std::size_t r = 0; r < rows.size(); ++r) {
            const auto src = features.row(rows[r]);
            std::copy(src.begin(), src.end(), out.features.row(r).begin());
            out.anomaly.push_back(anomaly[rows[r]]);
        }
        out.provenance = provenance;
        return out;
    }
};

struct TransformReport {
    std::size_t unknown_categories = 0;
    std::size_t clipped_values = 0;
};

inline PreprocessStats fit_stats(const std::vector<RawRecord>& records, const RecordSchema& schema) {
    if (records.empty()) throw DataError("fit: no records");
    PreprocessStats st;
    st.schema_hash = schema.hash();
    for (const auto& f : schema.features) {
        st.order.push_back(f.kind);
        if (f.kind == FeatureKind::continuous)
            st.continuous.push_back({f.name, std::numeric_limits<double>::infinity(),
                                     -std::numeric_limits<double>::infinity()});
        else
            st.categorical.push_back({f.name, f.vocabulary});
    }
    for (const auto& r : records) {
        if (r.values.size() != schema.features.size()) throw DataError("fit: record arity differs from schema");
        std::size_t c = 0;
        for (std::size_t f = 0; f < schema.features.size(); ++f) {
            if (schema.features[f].kind != FeatureKind::continuous) continue;
            const double v = std::get<double>(r.values[f]);
            st.continuous[c].min = std::min(st.continuous[c].min, v);
            st.continuous[c].max = std::max(st.continuous[c].max, v);
            ++c;
        }
    }
    return st;
}

/// Encodes records with fixed stats: min-max scaling clipped to [0, 1]
/// (constant features map to 0) and one-hot categorical groups.
inline LabeledDataset transform(const std::vector<RawRecord>& records, const RecordSchema& schema,
                                const PreprocessStats& st,
                                UnknownCategoryPolicy policy = UnknownCategoryPolicy::warn_zeros,
                                TransformReport* report = nullptr) {
    if (st.schema_hash != schema.hash())
        throw DataError("transform: stats were fit for schema " + st.schema_hash + ", records use " + schema.hash());
    LabeledDataset ds;
    ds.features = Matrix(records.size(), st.encoded_dim());
    ds.anomaly.reserve(records.size());
    ds.provenance.schema_hash = st.schema_hash;
    TransformReport local;
    for (std::size_t r = 0; r < records.size(); ++r) {
        const auto& rec = records[r];
        if (rec.values.size() != st.order.size()) throw DataError("transform: record arity differs from schema");
        auto row = ds.features.row(r);
        std::size_t col = 0, c = 0, k = 0;
        for (std::size_t f = 0; f < st.order.size(); ++f) {
            if (st.order[f] == FeatureKind::continuous) {
                const auto& s = st.continuous[c++];
                const double v = std::get<double>(rec.values[f]);
                double scaled = s.max > s.min ? (v - s.min) / (s.max - s.min) : 0.0;
                if (scaled < 0.0 || scaled > 1.0) {
                    ++local.clipped_values;
                    scaled = std::clamp(scaled, 0.0, 1.0);
                }
                row[col++] = scaled;
            } else {
                const auto& vocab = st.categorical[k++].vocabulary;
                const auto& v = std::get<std::string>(rec.values[f]);
                const auto it = std::find(vocab.begin(), vocab.end(), v);
                if (it == vocab.end()) {
                    if (policy == UnknownCategoryPolicy::reject)
                        throw DataError("line " + std::to_string(rec.line) + ": unknown category '" + v +
                                        "' for feature '" + schema.features[f].name + "'");
                    ++local.unknown_categories;
                } else {
                    row[col + static_cast<std::size_t>(it - vocab.begin())] = 1.0;
                }
                col += vocab.size();
            }
        }
        ds.anomaly.push_back(schema.label_rule.is_anomaly(rec.label) ? 1 : 0);
    }
    if (report) *report = local;
    return ds;
}

struct FitTransformResult {
    LabeledDataset dataset;
    PreprocessStats stats;
    TransformReport report;
};

inline FitTransformResult fit_transform(const std::vector<RawRecord>& records, const RecordSchema& schema,
                                        UnknownCategoryPolicy policy = UnknownCategoryPolicy::warn_zeros) {
    FitTransformResult out;
    out.stats = fit_stats(records, schema);
    out.dataset = transform(records, schema, out.stats, policy, &out.report);
    return out;
}

/// Row indices of the ideal scenario: a seeded half of the inliers trains,
/// the other half plus every anomaly tests.
struct SplitIndices {
    std::vector<std::size_t> train;
    std::vector<std::size_t> test;
};

inline SplitIndices split_ideal(const std::vector<std::uint8_t>& anomaly, std::uint64_t seed) {
    std::vector<std::size_t> inliers, anomalies;
    for (std::size_t i = 0; i < anomaly.size(); ++i) (anomaly[i] ? anomalies : inliers).push_back(i);
    if (inliers.size() < 2) throw DataError("split: need at least 2 inliers, have " + std::to_string(inliers.size()));
    if (anomalies.empty()) throw DataError("split: dataset has no anomalies");
    Rng rng(mix_seed(seed, 0x5917));
    rng.shuffle(inliers);
    const std::size_t half = inliers.size() / 2;
    SplitIndices s;
    s.train.assign(inliers.begin(), inliers.begin() + static_cast<std::ptrdiff_t>(half));
    s.test.assign(inliers.begin() + static_cast<std::ptrdiff_t>(half), inliers.end());
    s.test.insert(s.test.end(), anomalies.begin(), anomalies.end());
    std::sort(s.train.begin(), s.train.end());
    std::sort(s.test.begin(), s.test.end());
    return s;
}

/// Number of anomalies to add to `inliers` rows so that anomalies make up
/// round(ratio × final size) of the result.
inline std::size_t contamination_count(std::size_t inliers, double ratio) {
    if (!(ratio >= 0.0 && ratio < 0.5)) throw InvalidArgument("contamination ratio must be in [0, 0.5)");
    if (ratio == 0.0) return 0;
    const double est = ratio * static_cast<double>(inliers) / (1.0 - ratio);
    const auto base = static_cast<std::size_t>(std::floor(est));
    for (std::size_t a = base > 2 ? base - 2 : 0; a <= base + 3; ++a)
        if (static_cast<double>(a) == std::round(ratio * static_cast<double>(inliers + a))) return a;
    return static_cast<std::size_t>(std::llround(est));
}

/// Training rows after contamination. Anomaly flags are kept for auditing only;
/// training consumes features() alone.
class ContaminatedTrain {
public:
    ContaminatedTrain(Matrix features, std::vector<std::uint8_t> audit)
        : features_(std::move(features)), audit_(std::move(audit)) {}

    const Matrix& features() const noexcept { return features_; }
    std::size_t size() const noexcept { return features_.rows(); }
    std::size_t audit_anomaly_count() const {
        return static_cast<std::size_t>(std::count(audit_.begin(), audit_.end(), std::uint8_t{1}));
    }

private:
    Matrix features_;
    std::vector<std::uint8_t> audit_;
};

/// Adds seeded-sampled pool anomalies to the training rows so they make up
/// round(ratio × final size). Added rows are appended in draw order.
inline ContaminatedTrain mix_contamination(const Matrix& train, const Matrix& pool, double ratio, std::uint64_t seed) {
    const std::size_t add = contamination_count(train.rows(), ratio);
    if (add > pool.rows())
        throw DataError("contamination: need " + std::to_string(add) + " anomalies, pool has " +
                        std::to_string(pool.rows()));
    if (add > 0 && pool.cols() != train.cols()) throw DimensionMismatch("contamination: pool dimension differs");
    auto picks = iota_indices(pool.rows());
    Rng rng(mix_seed(seed, 0xC0));
    rng.shuffle(picks);
    Matrix out(train.rows() + add, train.cols());
    std::copy(train.data().begin(), train.data().end(), out.data().begin());
    std::vector<std::uint8_t> audit(train.rows(), 0);
    for (std::size_t a = 0; a < add; ++a) {
        const auto src = pool.row(picks[a]);
        std::copy(src.begin(), src.end(), out.row(train.rows() + a).begin());
        audit.push_back(1);
    }
    return ContaminatedTrain(std::move(out), std::move(audit));
}

/// Mixed scenario indices: the ideal split, with `pool` anomalies held aside
/// from the test set for contaminating the training rows.
struct MixedSplitIndices {
    std::vector<std::size_t> train;
    std::vector<std::size_t> pool;
    std::vector<std::size_t> test;
};

inline MixedSplitIndices split_mixed(const std::vector<std::uint8_t>& anomaly, double ratio, std::uint64_t seed) {
    const auto ideal = split_ideal(anomaly, seed);
    const std::size_t need = contamination_count(ideal.train.size(), ratio);
    std::vector<std::size_t> test_anomalies, test_inliers;
    for (auto i : ideal.test) (anomaly[i] ? test_anomalies : test_inliers).push_back(i);
    if (need >= test_anomalies.size())
        throw DataError("contamination: need " + std::to_string(need) + " held-aside anomalies, only " +
                        std::to_string(test_anomalies.size()) + " available");
    Rng rng(mix_seed(seed, 0x9001));
    rng.shuffle(test_anomalies);
    MixedSplitIndices s;
    s.train = ideal.train;
    s.pool.assign(test_anomalies.begin(), test_anomalies.begin() + static_cast<std::ptrdiff_t>(need));
    s.test = test_inliers;
    s.test.insert(s.test.end(), test_anomalies.begin() + static_cast<std::ptrdiff_t>(need), test_anomalies.end());
    std::sort(s.pool.begin(), s.pool.end());
    std::sort(s.test.begin(), s.test.end());
    return s;
}

/// Seeded subsample of up to n records (order preserved).
template <typename T>
std::vector<T> subsample(const std::vector<T>& items, std::size_t n, std::uint64_t seed) {
    if (n >= items.size()) return items;
    auto idx = iota_indices(items.size());
    Rng rng(mix_seed(seed, 0x5B));
    rng.shuffle(idx);
    idx.resize(n);
    std::sort(idx.begin(), idx.end());
    std::vector<T> out;
    out.reserve(n);
    for (auto i : idx) out.push_back(items[i]);
    return out;
}

template <typename T>
std::vector<T> select(const std::vector<T>& items, const std::vector<std::size_t>& idx) {
    std::vector<T> out;
    out.reserve(idx.size());
    for (auto i : idx) out.push_back(items.at(i));
    return out;
}

inline std::vector<std::uint8_t> anomaly_flags(const std::vector<RawRecord>& records, const RecordSchema& schema) {
    std::vector<std::uint8_t> out;
    out.reserve(records.size());
    for (const auto& r : records) out.push_back(schema.label_rule.is_anomaly(r.label) ? 1 : 0);
    return out;
}

}  // namespace somdagmm
