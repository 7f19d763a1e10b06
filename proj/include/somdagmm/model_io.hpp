#pragma once

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "data.hpp"
#include "errors.hpp"
#include "eval.hpp"
#include "trainer.hpp"

namespace somdagmm {

namespace io {

/// Whitespace-separated token writer; reals use 17 significant digits.
class Writer {
public:
    Writer& key(const std::string& k) {
        out_ << k;
        return *this;
    }
    Writer& str(const std::string& s) {
        if (s.empty() || s.find_first_of(" \t\r\n") != std::string::npos)
            throw InvalidArgument("model file: token '" + s + "' is empty or contains whitespace");
        out_ << ' ' << s;
        return *this;
    }
    Writer& num(std::size_t v) {
        out_ << ' ' << v;
        return *this;
    }
    Writer& real(double v) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.17g", v);
        out_ << ' ' << buf;
        return *this;
    }
    Writer& reals(std::span<const double> v) {
        for (double x : v) real(x);
        return *this;
    }
    Writer& end() {
        out_ << '\n';
        return *this;
    }
    Writer& line(const std::string& k) { return key(k).end(); }

    void matrix(const std::string& name, const Matrix& m) {
        key(name).num(m.rows()).num(m.cols()).end();
        for (std::size_t r = 0; r < m.rows(); ++r) {
            bool first = true;
            for (double v : m.row(r)) {
                char buf[32];
                std::snprintf(buf, sizeof buf, "%.17g", v);
                out_ << (first ? "" : " ") << buf;
                first = false;
            }
            out_ << '\n';
        }
    }

    std::string text() const { return out_.str(); }

private:
    std::ostringstream out_;
};

class Reader {
public:
    Reader(std::string text, std::string source) : text_(std::move(text)), source_(std::move(source)) {}

    bool done() {
        skip_space();
        return pos_ >= text_.size();
    }

    std::string token() {
        skip_space();
        if (pos_ >= text_.size()) fail("unexpected end of file");
        const std::size_t start = pos_;
        while (pos_ < text_.size() && !std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
        return text_.substr(start, pos_ - start);
    }

    void expect(const std::string& k) {
        const auto t = token();
        if (t != k) fail("expected '" + k + "', found '" + t + "'");
    }

    std::size_t count() {
        const auto t = token();
        std::size_t v = 0;
        const auto r = std::from_chars(t.data(), t.data() + t.size(), v);
        if (r.ec != std::errc() || r.ptr != t.data() + t.size()) fail("expected a count, found '" + t + "'");
        return v;
    }

    std::uint64_t u64() {
        const auto t = token();
        std::uint64_t v = 0;
        const auto r = std::from_chars(t.data(), t.data() + t.size(), v);
        if (r.ec != std::errc() || r.ptr != t.data() + t.size()) fail("expected an integer, found '" + t + "'");
        return v;
    }

    double real() {
        const auto t = token();
        double v = 0.0;
        const auto r = std::from_chars(t.data(), t.data() + t.size(), v);
        if (r.ec != std::errc() || r.ptr != t.data() + t.size() || !std::isfinite(v))
            fail("expected a finite real, found '" + t + "'");
        return v;
    }

    Matrix matrix(const std::string& name) {
        expect(name);
        const std::size_t r = count(), c = count();
        Matrix m(r, c);
        for (double& v : m.data()) v = real();
        return m;
    }

    [[noreturn]] void fail(const std::string& msg) const {
        std::size_t line = 1;
        for (std::size_t i = 0; i < pos_ && i < text_.size(); ++i) line += text_[i] == '\n';
        throw DataError(source_ + ":" + std::to_string(line) + ": " + msg);
    }

private:
    void skip_space() {
        while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
    }

    std::string text_;
    std::string source_;
    std::size_t pos_ = 0;
};

inline std::string read_text(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open '" + path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

inline void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write '" + path + "'");
    out << text;
    if (!out) throw DataError("write to '" + path + "' failed");
}

inline void write_stats(Writer& w, const PreprocessStats& st) {
    w.key("preprocess").num(st.order.size()).end();
    std::size_t c = 0, k = 0;
    for (auto kind : st.order) {
        if (kind == FeatureKind::continuous) {
            const auto& s = st.continuous[c++];
            w.key("continuous").str(s.name).real(s.min).real(s.max).end();
        } else {
            const auto& s = st.categorical[k++];
            w.key("categorical").str(s.name).num(s.vocabulary.size());
            for (const auto& v : s.vocabulary) w.str(v);
            w.end();
        }
    }
}

inline PreprocessStats read_stats(Reader& r, const std::string& schema_hash) {
    PreprocessStats st;
    st.schema_hash = schema_hash;
    r.expect("preprocess");
    const std::size_t n = r.count();
    for (std::size_t f = 0; f < n; ++f) {
        const auto kind = r.token();
        if (kind == "continuous") {
            ContinuousStats s;
            s.name = r.token();
            s.min = r.real();
            s.max = r.real();
            if (s.max < s.min) r.fail("feature '" + s.name + "' has max < min");
            st.order.push_back(FeatureKind::continuous);
            st.continuous.push_back(std::move(s));
        } else if (kind == "categorical") {
            CategoricalStats s;
            s.name = r.token();
            const std::size_t v = r.count();
            if (v == 0) r.fail("empty vocabulary for '" + s.name + "'");
            for (std::size_t i = 0; i < v; ++i) s.vocabulary.push_back(r.token());
            st.order.push_back(FeatureKind::categorical);
            st.categorical.push_back(std::move(s));
        } else {
            r.fail("unknown feature kind '" + kind + "'");
        }
    }
    return st;
}

inline void write_layers(Writer& w, const std::string& name, const std::vector<DenseLayer>& layers) {
    w.key(name).num(layers.size()).end();
    for (const auto& l : layers) {
        w.matrix("weight", l.weight);
        w.matrix("bias", l.bias);
    }
}

inline std::vector<DenseLayer> read_layers(Reader& r, const std::string& name) {
    r.expect(name);
    const std::size_t n = r.count();
    std::vector<DenseLayer> layers;
    for (std::size_t i = 0; i < n; ++i) {
        DenseLayer l;
        l.weight = r.matrix("weight");
        l.bias = r.matrix("bias");
        if (l.bias.rows() != 1 || l.bias.cols() != l.weight.cols()) r.fail(name + ": bias shape");
        if (!layers.empty() && layers.back().weight.cols() != l.weight.rows()) r.fail(name + ": layers do not chain");
        layers.push_back(std::move(l));
    }
    return layers;
}

}  // namespace io

/// Model plus the decisions needed to reproduce scoring.
struct ModelFile {
    static constexpr int kVersion = 1;
    TrainedModel model;
    ThresholdPolicy threshold = ThresholdPolicy::known();
};

inline std::string model_to_text(const ModelFile& f) {
    const auto& m = f.model;
    io::Writer w;
    w.key("somdagmm-model").num(ModelFile::kVersion).end();
    w.key("schema_hash").str(m.preprocess.schema_hash.empty() ? "none" : m.preprocess.schema_hash).end();
    w.key("reconstruction").str(to_string(m.reconstruction)).end();
    w.key("eps").real(m.eps).end();
    w.key("threshold").str(f.threshold.to_string()).end();
    w.key("with_som").num(m.som ? 1 : 0).end();
    io::write_stats(w, m.preprocess);
    if (m.som) {
        const auto& c = m.som->config();
        w.line("[som]");
        w.key("grid").num(c.grid_width).num(c.grid_height).end();
        w.key("learning_rate").real(c.learning_rate).end();
        w.key("neighborhood").str(to_string(c.neighborhood)).end();
        w.key("initial_radius").real(c.initial_radius).end();
        w.key("iterations").num(c.iterations).end();
        w.key("init").str(to_string(c.init)).end();
        w.key("seed").num(c.seed).end();
        w.matrix("weights", m.som->weights());
    }
    w.line("[compression]");
    io::write_layers(w, "encoder", m.nets.compression.encoder());
    io::write_layers(w, "decoder", m.nets.compression.decoder());
    w.line("[estimation]");
    w.key("dropout").real(m.nets.estimation.dropout_rate).end();
    io::write_layers(w, "layers", m.nets.estimation.layers);
    w.line("[gmm]");
    w.key("components").num(m.final_gmm.components()).key(" dim").num(m.final_gmm.dim()).end();
    w.key("phi").reals(m.final_gmm.phi).end();
    w.matrix("mu", m.final_gmm.mu);
    for (const auto& s : m.final_gmm.sigma) w.matrix("sigma", s);
    w.line("end");
    return w.text();
}

inline ModelFile model_from_text(const std::string& text, const std::string& source = "model") {
    io::Reader r(text, source);
    ModelFile f;
    auto& m = f.model;
    r.expect("somdagmm-model");
    const auto version = r.count();
    if (version != ModelFile::kVersion)
        r.fail("unsupported model format version " + std::to_string(version));
    r.expect("schema_hash");
    auto hash = r.token();
    if (hash == "none") hash.clear();
    r.expect("reconstruction");
    m.reconstruction = parse_reconstruction_mode(r.token());
    r.expect("eps");
    m.eps = r.real();
    r.expect("threshold");
    f.threshold = ThresholdPolicy::parse(r.token());
    r.expect("with_som");
    const bool with_som = r.count() != 0;
    m.preprocess = io::read_stats(r, hash);
    if (with_som) {
        r.expect("[som]");
        SomConfig c;
        r.expect("grid");
        c.grid_width = r.count();
        c.grid_height = r.count();
        r.expect("learning_rate");
        c.learning_rate = r.real();
        r.expect("neighborhood");
        c.neighborhood = parse_neighborhood(r.token());
        r.expect("initial_radius");
        c.initial_radius = r.real();
        r.expect("iterations");
        c.iterations = r.count();
        r.expect("init");
        c.init = parse_som_init(r.token());
        r.expect("seed");
        c.seed = r.u64();
        m.som = SomModel(c, r.matrix("weights"));
    }
    r.expect("[compression]");
    auto enc = io::read_layers(r, "encoder");
    auto dec = io::read_layers(r, "decoder");
    m.nets.compression = CompressionNet(std::move(enc), std::move(dec));
    r.expect("[estimation]");
    r.expect("dropout");
    m.nets.estimation.dropout_rate = r.real();
    m.nets.estimation.layers = io::read_layers(r, "layers");
    if (m.nets.estimation.layers.empty()) r.fail("estimation net has no layers");
    r.expect("[gmm]");
    r.expect("components");
    const std::size_t k = r.count();
    r.expect("dim");
    const std::size_t d = r.count();
    r.expect("phi");
    for (std::size_t c = 0; c < k; ++c) m.final_gmm.phi.push_back(r.real());
    m.final_gmm.mu = r.matrix("mu");
    for (std::size_t c = 0; c < k; ++c) m.final_gmm.sigma.push_back(r.matrix("sigma"));
    r.expect("end");
    if (!r.done()) r.fail("trailing content after 'end'");

    if (m.final_gmm.mu.rows() != k || m.final_gmm.mu.cols() != d) r.fail("gmm mean shape");
    for (const auto& s : m.final_gmm.sigma)
        if (s.rows() != d || s.cols() != d) r.fail("gmm covariance shape");
    if (m.nets.estimation.components() != k) r.fail("estimation net width differs from gmm components");
    if (m.nets.estimation.input_dim() != m.latent_layout().dim() || d != m.latent_layout().dim())
        r.fail("latent dimension is inconsistent across sections");
    if (m.som && m.som->dim() != m.nets.compression.input_dim()) r.fail("som and compression input widths differ");
    if (!m.preprocess.order.empty() && m.preprocess.encoded_dim() != m.nets.compression.input_dim())
        r.fail("preprocessing width differs from the compression net input");
    return f;
}

inline void save_model(const std::string& path, const ModelFile& f) { io::write_text(path, model_to_text(f)); }

inline ModelFile load_model(const std::string& path) { return model_from_text(io::read_text(path), path); }

/// Preprocessed rows with their anomaly flags and the stats that produced them.
struct DatasetCache {
    static constexpr int kVersion = 1;
    std::string schema_name;
    PreprocessStats stats;  // stats.schema_hash identifies the schema
    LabeledDataset data;
};

inline std::string cache_to_text(const DatasetCache& c) {
    io::Writer w;
    w.key("somdagmm-dataset").num(DatasetCache::kVersion).end();
    w.key("schema_hash").str(c.stats.schema_hash).end();
    w.key("schema_name").str(c.schema_name.empty() ? "unnamed" : c.schema_name).end();
    w.key("dim").num(c.data.features.cols()).end();
    w.key("rows").num(c.data.features.rows()).end();
    io::write_stats(w, c.stats);
    w.line("data");
    for (std::size_t r = 0; r < c.data.size(); ++r) {
        std::string line;
        for (double v : c.data.features.row(r)) {
            char buf[32];
            std::snprintf(buf, sizeof buf, "%.17g ", v);
            line += buf;
        }
        line += c.data.anomaly[r] ? '1' : '0';
        w.key(line).end();
    }
    return w.text();
}

inline DatasetCache cache_from_text(const std::string& text, const std::string& source = "cache") {
    io::Reader r(text, source);
    DatasetCache c;
    r.expect("somdagmm-dataset");
    if (r.count() != DatasetCache::kVersion) r.fail("unsupported dataset cache version");
    r.expect("schema_hash");
    const auto hash = r.token();
    r.expect("schema_name");
    c.schema_name = r.token();
    r.expect("dim");
    const std::size_t d = r.count();
    r.expect("rows");
    const std::size_t n = r.count();
    c.stats = io::read_stats(r, hash);
    if (c.stats.encoded_dim() != d) r.fail("dim differs from the preprocessing stats");
    r.expect("data");
    c.data.features = Matrix(n, d);
    c.data.anomaly.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        for (double& v : c.data.features.row(i)) v = r.real();
        const auto label = r.count();
        if (label > 1) r.fail("label must be 0 or 1");
        c.data.anomaly.push_back(static_cast<std::uint8_t>(label));
    }
    if (!r.done()) r.fail("more rows than declared");
    c.data.provenance = {source, hash, 0};
    return c;
}

inline void save_cache(const std::string& path, const DatasetCache& c) { io::write_text(path, cache_to_text(c)); }

inline DatasetCache load_cache(const std::string& path) { return cache_from_text(io::read_text(path), path); }

/// True when the file starts with the dataset cache header.
inline bool is_cache_file(const std::string& path) {
    std::ifstream in(path);
    std::string first;
    return static_cast<bool>(in >> first) && first == "somdagmm-dataset";
}

}  // namespace somdagmm
