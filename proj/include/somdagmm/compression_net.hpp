#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dense.hpp"
#include "errors.hpp"
#include "matrix.hpp"
#include "rng.hpp"
#include "tape.hpp"

namespace somdagmm {

/// Which reconstruction features enter the latent vector.
enum class ReconstructionMode { both, euclidean_only };

inline std::string to_string(ReconstructionMode m) {
    return m == ReconstructionMode::both ? "both" : "euclidean-only";
}

inline ReconstructionMode parse_reconstruction_mode(const std::string& s) {
    if (s == "both") return ReconstructionMode::both;
    if (s == "euclidean-only" || s == "euclidean_only") return ReconstructionMode::euclidean_only;
    throw InvalidArgument("unknown reconstruction mode '" + s + "' (expected both | euclidean-only)");
}

inline std::size_t reconstruction_width(ReconstructionMode m) { return m == ReconstructionMode::both ? 2 : 1; }

struct AutoencoderConfig {
    /// Encoder side, input → code. The decoder mirrors it.
    std::vector<std::size_t> layer_sizes{122, 60, 30, 10, 1};
    std::uint64_t seed = 0;

    std::size_t input_dim() const { return layer_sizes.front(); }
    std::size_t code_dim() const { return layer_sizes.back(); }

    void validate() const {
        if (layer_sizes.size() < 2) throw InvalidArgument("autoencoder: at least 2 layer sizes required");
        for (auto s : layer_sizes)
            if (s == 0) throw InvalidArgument("autoencoder: layer sizes must be positive");
    }

    /// Default architecture for a given input dimension.
    static AutoencoderConfig for_input(std::size_t d, std::uint64_t seed = 0) {
        return AutoencoderConfig{{d, 60, 30, 10, 1}, seed};
    }
};

struct ReconstructionFeatures {
    double rel_euclidean = 0.0;
    double cosine_sim = 0.0;
};

/// Deep autoencoder: tanh hidden layers, linear code and output layers.
class CompressionNet {
public:
    CompressionNet() = default;
    CompressionNet(std::vector<DenseLayer> encoder, std::vector<DenseLayer> decoder)
        : encoder_(std::move(encoder)), decoder_(std::move(decoder)) {
        validate();
    }

    static CompressionNet initialize(const AutoencoderConfig& cfg) {
        cfg.validate();
        Rng rng(mix_seed(cfg.seed, 0xAE));
        std::vector<DenseLayer> enc, dec;
        const auto& s = cfg.layer_sizes;
        for (std::size_t l = 0; l + 1 < s.size(); ++l) enc.push_back(init_dense(s[l], s[l + 1], rng));
        for (std::size_t l = s.size() - 1; l > 0; --l) dec.push_back(init_dense(s[l], s[l - 1], rng));
        return CompressionNet(std::move(enc), std::move(dec));
    }

    std::size_t input_dim() const { return encoder_.front().inputs(); }
    std::size_t code_dim() const { return encoder_.back().outputs(); }

    const std::vector<DenseLayer>& encoder() const noexcept { return encoder_; }
    const std::vector<DenseLayer>& decoder() const noexcept { return decoder_; }
    std::vector<DenseLayer>& encoder() noexcept { return encoder_; }
    std::vector<DenseLayer>& decoder() noexcept { return decoder_; }

    std::vector<std::size_t> layer_sizes() const {
        std::vector<std::size_t> s{input_dim()};
        for (const auto& l : encoder_) s.push_back(l.outputs());
        return s;
    }

    /// x is N × d; returns N × code_dim.
    Matrix encode(const Matrix& x) const {
        if (x.cols() != input_dim())
            throw DimensionMismatch("compression encode: input has " + std::to_string(x.cols()) +
                                    " features, net expects " + std::to_string(input_dim()));
        return forward_stack(encoder_, x);
    }

    Matrix decode(const Matrix& code) const {
        if (code.cols() != code_dim())
            throw DimensionMismatch("compression decode: code has dimension " + std::to_string(code.cols()) +
                                    ", net expects " + std::to_string(code_dim()));
        return forward_stack(decoder_, code);
    }

    friend bool operator==(const CompressionNet&, const CompressionNet&) = default;

private:
    void validate() const {
        if (encoder_.empty() || encoder_.size() != decoder_.size())
            throw InvalidArgument("compression net: decoder must mirror encoder");
        for (std::size_t l = 0; l < encoder_.size(); ++l) {
            const auto& e = encoder_[l];
            const auto& d = decoder_[encoder_.size() - 1 - l];
            if (e.inputs() != d.outputs() || e.outputs() != d.inputs())
                throw InvalidArgument("compression net: decoder layer shapes are not the mirror of the encoder");
            if (e.bias.cols() != e.outputs() || d.bias.cols() != d.outputs())
                throw InvalidArgument("compression net: bias shape");
        }
        for (std::size_t l = 1; l < encoder_.size(); ++l)
            if (encoder_[l].inputs() != encoder_[l - 1].outputs())
                throw InvalidArgument("compression net: encoder layers do not chain");
    }

    std::vector<DenseLayer> encoder_;
    std::vector<DenseLayer> decoder_;
};

inline ReconstructionFeatures reconstruction_features(std::span<const double> x, std::span<const double> xr) {
    if (x.size() != xr.size()) throw DimensionMismatch("reconstruction_features: length mismatch");
    const double nx = std::sqrt(squared_norm(x));
    const double nr = std::sqrt(squared_norm(xr));
    return {std::sqrt(squared_distance(x, xr)) / std::max(nx, ad::kNormFloor),
            dot(x, xr) / std::max(nx * nr, ad::kNormFloor)};
}

/// Squared L2 distance ‖x − x'‖².
inline double reconstruction_loss(std::span<const double> x, std::span<const double> xr) {
    return squared_distance(x, xr);
}

/// Compression-net outputs for a batch, plain (no tape).
struct CompressionOutput {
    Matrix code;            // N × code_dim
    Matrix reconstruction;  // N × d
    Matrix features;        // N × reconstruction_width
};

inline CompressionOutput compress(const CompressionNet& net, const Matrix& x, ReconstructionMode mode) {
    CompressionOutput out;
    out.code = net.encode(x);
    out.reconstruction = net.decode(out.code);
    out.features = Matrix(x.rows(), reconstruction_width(mode));
    for (std::size_t i = 0; i < x.rows(); ++i) {
        const auto f = reconstruction_features(x.row(i), out.reconstruction.row(i));
        out.features(i, 0) = f.rel_euclidean;
        if (mode == ReconstructionMode::both) out.features(i, 1) = f.cosine_sim;
    }
    return out;
}

}  // namespace somdagmm
