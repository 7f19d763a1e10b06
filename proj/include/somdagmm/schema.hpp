#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "errors.hpp"

namespace somdagmm {

enum class FeatureKind { continuous, categorical };

struct FeatureDescriptor {
    std::string name;
    FeatureKind kind = FeatureKind::continuous;
    std::vector<std::string> vocabulary;  // categorical only, fixed index order

    friend bool operator==(const FeatureDescriptor&, const FeatureDescriptor&) = default;
};

/// How input columns are located.
enum class ColumnLayout {
    positional,  // features in schema order, then the label, then optional ignored trailers
    header       // first line names the columns; features looked up by name
};

/// Which raw labels count as anomalies.
struct LabelRule {
    enum class Kind { anomaly_labels, inlier_labels };
    Kind kind = Kind::anomaly_labels;
    std::set<std::string> labels;

    bool is_anomaly(const std::string& label) const {
        const bool listed = labels.count(label) > 0;
        return kind == Kind::anomaly_labels ? listed : !listed;
    }

    friend bool operator==(const LabelRule&, const LabelRule&) = default;
};

inline std::uint64_t fnv1a64(const std::string& s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

inline std::vector<std::string> split_whitespace(const std::string& line) {
    std::istringstream in(line);
    std::vector<std::string> out;
    for (std::string tok; in >> tok;) out.push_back(tok);
    return out;
}

/// Column roles, vocabularies and the label convention of an input file.
struct RecordSchema {
    static constexpr int kFormatVersion = 1;

    std::string name;
    ColumnLayout layout = ColumnLayout::positional;
    std::vector<FeatureDescriptor> features;
    std::string label_column = "label";
    LabelRule label_rule;
    /// Positional layout: number of optional trailing fields after the label.
    std::size_t optional_trailing = 0;

    std::size_t encoded_dim() const {
        std::size_t d = 0;
        for (const auto& f : features) d += f.kind == FeatureKind::continuous ? 1 : f.vocabulary.size();
        return d;
    }

    std::size_t continuous_count() const {
        return static_cast<std::size_t>(std::count_if(features.begin(), features.end(), [](const auto& f) {
            return f.kind == FeatureKind::continuous;
        }));
    }

    void validate() const {
        std::set<std::string> names;
        if (features.empty()) throw DataError("schema: no features");
        for (const auto& f : features) {
            if (!names.insert(f.name).second) throw DataError("schema: duplicate feature name '" + f.name + "'");
            if (f.kind == FeatureKind::categorical) {
                if (f.vocabulary.empty()) throw DataError("schema: empty vocabulary for '" + f.name + "'");
                std::set<std::string> v(f.vocabulary.begin(), f.vocabulary.end());
                if (v.size() != f.vocabulary.size())
                    throw DataError("schema: duplicate vocabulary entry for '" + f.name + "'");
            }
        }
        if (names.count(label_column)) throw DataError("schema: label column is also a feature");
        if (label_rule.labels.empty()) throw DataError("schema: label rule lists no labels");
    }

    /// Canonical text form; also the file format.
    std::string to_text() const {
        std::ostringstream out;
        out << "somdagmm-schema " << kFormatVersion << '\n';
        out << "name " << name << '\n';
        out << "layout " << (layout == ColumnLayout::positional ? "positional" : "header") << '\n';
        out << "label " << label_column << '\n';
        out << (label_rule.kind == LabelRule::Kind::anomaly_labels ? "anomaly_labels" : "inlier_labels");
        for (const auto& l : label_rule.labels) out << ' ' << l;
        out << '\n';
        out << "optional_trailing " << optional_trailing << '\n';
        for (const auto& f : features) {
            if (f.kind == FeatureKind::continuous) {
                out << "continuous " << f.name << '\n';
            } else {
                out << "categorical " << f.name;
                for (const auto& v : f.vocabulary) out << ' ' << v;
                out << '\n';
            }
        }
        return out.str();
    }

    /// Hash over column roles, vocabularies and layout. The label rule is
    /// excluded: relabeling does not change the encoded feature space.
    std::string hash() const {
        std::ostringstream out;
        out << (layout == ColumnLayout::positional ? "positional" : "header") << '\n';
        for (const auto& f : features) {
            out << (f.kind == FeatureKind::continuous ? "c " : "k ") << f.name;
            for (const auto& v : f.vocabulary) out << ' ' << v;
            out << '\n';
        }
        return hex64(fnv1a64(out.str()));
    }

    static RecordSchema from_text(const std::string& text) {
        std::istringstream in(text);
        RecordSchema s;
        bool saw_header = false;
        bool saw_rule = false;
        std::size_t lineno = 0;
        for (std::string line; std::getline(in, line);) {
            ++lineno;
            if (auto hashpos = line.find('#'); hashpos != std::string::npos) line.erase(hashpos);
            const auto tok = split_whitespace(line);
            if (tok.empty()) continue;
            const auto fail = [&](const std::string& msg) {
                return DataError("schema line " + std::to_string(lineno) + ": " + msg);
            };
            if (!saw_header) {
                if (tok.size() != 2 || tok[0] != "somdagmm-schema") throw fail("expected 'somdagmm-schema <version>'");
                if (tok[1] != std::to_string(kFormatVersion)) throw fail("unsupported schema version " + tok[1]);
                saw_header = true;
                continue;
            }
            const std::string& key = tok[0];
            if (key == "name") {
                s.name = tok.size() > 1 ? tok[1] : "";
            } else if (key == "layout") {
                if (tok.size() != 2) throw fail("layout takes one value");
                if (tok[1] == "positional") s.layout = ColumnLayout::positional;
                else if (tok[1] == "header") s.layout = ColumnLayout::header;
                else throw fail("unknown layout '" + tok[1] + "'");
            } else if (key == "label") {
                if (tok.size() != 2) throw fail("label takes one column name");
                s.label_column = tok[1];
            } else if (key == "anomaly_labels" || key == "inlier_labels") {
                if (saw_rule) throw fail("only one of anomaly_labels / inlier_labels may appear");
                saw_rule = true;
                s.label_rule.kind = key == "anomaly_labels" ? LabelRule::Kind::anomaly_labels
                                                            : LabelRule::Kind::inlier_labels;
                s.label_rule.labels = std::set<std::string>(tok.begin() + 1, tok.end());
            } else if (key == "optional_trailing") {
                if (tok.size() != 2) throw fail("optional_trailing takes one count");
                s.optional_trailing = std::stoul(tok[1]);
            } else if (key == "continuous") {
                if (tok.size() != 2) throw fail("continuous takes one name");
                s.features.push_back({tok[1], FeatureKind::continuous, {}});
            } else if (key == "categorical") {
                if (tok.size() < 3) throw fail("categorical needs a name and a vocabulary");
                s.features.push_back({tok[1], FeatureKind::categorical, {tok.begin() + 2, tok.end()}});
            } else {
                throw fail("unknown key '" + key + "'");
            }
        }
        if (!saw_header) throw DataError("schema: missing 'somdagmm-schema' header");
        s.validate();
        return s;
    }

    static RecordSchema load(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw DataError("cannot open schema file '" + path + "'");
        std::ostringstream buf;
        buf << in.rdbuf();
        return from_text(buf.str());
    }

    friend bool operator==(const RecordSchema&, const RecordSchema&) = default;
};

/// The canonical NSL-KDD layout: 41 features (38 numeric including the binary
/// flags, plus protocol_type, service and flag one-hot), label, then the
/// optional difficulty column. "normal" records are the anomalies.
inline RecordSchema nslkdd_schema() {
    RecordSchema s;
    s.name = "nsl-kdd";
    s.layout = ColumnLayout::positional;
    s.label_column = "label";
    s.label_rule = {LabelRule::Kind::anomaly_labels, {"normal"}};
    s.optional_trailing = 1;

    const std::vector<std::string> protocols{"tcp", "udp", "icmp"};
    const std::vector<std::string> services{
        "aol",       "auth",        "bgp",         "courier",     "csnet_ns",   "ctf",      "daytime",
        "discard",   "domain",      "domain_u",    "echo",        "eco_i",      "ecr_i",    "efs",
        "exec",      "finger",      "ftp",         "ftp_data",    "gopher",     "harvest",  "hostnames",
        "http",      "http_2784",   "http_443",    "http_8001",   "imap4",      "IRC",      "iso_tsap",
        "klogin",    "kshell",      "ldap",        "link",        "login",      "mtp",      "name",
        "netbios_dgm", "netbios_ns", "netbios_ssn", "netstat",    "nnsp",       "nntp",     "ntp_u",
        "other",     "pm_dump",     "pop_2",       "pop_3",       "printer",    "private",  "red_i",
        "remote_job", "rje",        "shell",       "smtp",        "sql_net",    "ssh",      "sunrpc",
        "supdup",    "systat",      "telnet",      "tftp_u",      "tim_i",      "time",     "urh_i",
        "urp_i",     "uucp",        "uucp_path",   "vmnet",       "whois",      "X11",      "Z39_50"};
    const std::vector<std::string> flags{"OTH", "REJ", "RSTO", "RSTOS0", "RSTR", "S0",
                                         "S1",  "S2",  "S3",   "SF",     "SH"};

    const auto cont = [&](const char* n) { s.features.push_back({n, FeatureKind::continuous, {}}); };
    cont("duration");
    s.features.push_back({"protocol_type", FeatureKind::categorical, protocols});
    s.features.push_back({"service", FeatureKind::categorical, services});
    s.features.push_back({"flag", FeatureKind::categorical, flags});
    for (const char* n :
         {"src_bytes", "dst_bytes", "land", "wrong_fragment", "urgent", "hot", "num_failed_logins", "logged_in",
          "num_compromised", "root_shell", "su_attempted", "num_root", "num_file_creations", "num_shells",
          "num_access_files", "num_outbound_cmds", "is_host_login", "is_guest_login", "count", "srv_count",
          "serror_rate", "srv_serror_rate", "rerror_rate", "srv_rerror_rate", "same_srv_rate", "diff_srv_rate",
          "srv_diff_host_rate", "dst_host_count", "dst_host_srv_count", "dst_host_same_srv_rate",
          "dst_host_diff_srv_rate", "dst_host_same_src_port_rate", "dst_host_srv_diff_host_rate",
          "dst_host_serror_rate", "dst_host_srv_serror_rate", "dst_host_rerror_rate",
          "dst_host_srv_rerror_rate"})
        cont(n);
    return s;
}

/// Resolves a built-in schema name ("nsl-kdd") or loads a schema file.
inline RecordSchema resolve_schema(const std::string& name_or_path) {
    if (name_or_path == "nsl-kdd" || name_or_path == "nslkdd") return nslkdd_schema();
    return RecordSchema::load(name_or_path);
}

}  // namespace somdagmm
