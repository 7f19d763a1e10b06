#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <vector>

#include "dense.hpp"
#include "errors.hpp"
#include "gmm.hpp"
#include "matrix.hpp"
#include "rng.hpp"
#include "tape.hpp"

namespace somdagmm {

struct EstimationConfig {
    std::vector<std::size_t> hidden{10};
    double dropout_rate = 0.5;
    std::size_t components = 4;
    std::uint64_t seed = 0;

    void validate() const {
        if (components < 1) throw InvalidArgument("estimation net: K must be >= 1");
        if (!(dropout_rate >= 0.0 && dropout_rate < 1.0))
            throw InvalidArgument("estimation net: dropout rate must be in [0, 1)");
        for (auto h : hidden)
            if (h == 0) throw InvalidArgument("estimation net: hidden widths must be positive");
    }
};

/// Membership network: tanh hidden layers with dropout, linear output of width K.
struct EstimationNetParams {
    std::vector<DenseLayer> layers;
    double dropout_rate = 0.5;

    std::size_t input_dim() const { return layers.front().inputs(); }
    std::size_t components() const { return layers.back().outputs(); }

    static EstimationNetParams initialize(std::size_t latent_dim, const EstimationConfig& cfg) {
        cfg.validate();
        Rng rng(mix_seed(cfg.seed, 0xE5));
        EstimationNetParams p;
        p.dropout_rate = cfg.dropout_rate;
        std::size_t in = latent_dim;
        for (auto h : cfg.hidden) {
            p.layers.push_back(init_dense(in, h, rng));
            in = h;
        }
        p.layers.push_back(init_dense(in, cfg.components, rng));
        return p;
    }

    friend bool operator==(const EstimationNetParams&, const EstimationNetParams&) = default;
};

/// Latent layout [z_s, z_r, z_c]; z_s is absent in the no-SOM ablation.
struct LatentLayout {
    bool with_som = true;
    std::size_t reconstruction_width = 2;
    std::size_t code_dim = 1;

    std::size_t som_width() const { return with_som ? 2 : 0; }
    std::size_t dim() const { return som_width() + reconstruction_width + code_dim; }
};

/// Concatenates [z_s, z_r, z_c] row-wise. `som` may be empty (0 columns).
inline Matrix assemble_latent(const Matrix& som, const Matrix& recon, const Matrix& code) {
    const std::size_t n = code.rows();
    if (recon.rows() != n || (!som.empty() && som.rows() != n))
        throw DimensionMismatch("assemble_latent: row counts differ");
    const std::size_t ws = som.empty() ? 0 : som.cols();
    Matrix z(n, ws + recon.cols() + code.cols());
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t c = 0;
        for (std::size_t j = 0; j < ws; ++j) z(i, c++) = som(i, j);
        for (std::size_t j = 0; j < recon.cols(); ++j) z(i, c++) = recon(i, j);
        for (std::size_t j = 0; j < code.cols(); ++j) z(i, c++) = code(i, j);
    }
    return z;
}

struct MembershipBatch {
    Matrix gamma;   // N × K soft memberships
    Matrix logits;  // N × K
};

/// Inverted-dropout masks for each hidden layer of a batch of n rows:
/// entries are 0 with probability rate, otherwise 1/(1-rate).
inline std::vector<Matrix> dropout_masks(const EstimationNetParams& p, std::size_t n, Rng& rng) {
    std::vector<Matrix> masks;
    const double keep = 1.0 - p.dropout_rate;
    for (std::size_t l = 0; l + 1 < p.layers.size(); ++l) {
        Matrix m(n, p.layers[l].outputs(), 1.0);
        if (p.dropout_rate > 0.0)
            for (double& v : m.data()) v = rng.uniform() < p.dropout_rate ? 0.0 : 1.0 / keep;
        masks.push_back(std::move(m));
    }
    return masks;
}

/// Soft memberships for a batch. Dropout applies only when `training` is set,
/// drawing its mask from `rng`.
inline MembershipBatch membership(const EstimationNetParams& p, const Matrix& z, bool training,
                                  Rng* rng = nullptr) {
    if (z.cols() != p.input_dim())
        throw DimensionMismatch("membership: latent has dimension " + std::to_string(z.cols()) +
                                ", estimation net expects " + std::to_string(p.input_dim()));
    std::vector<Matrix> masks;
    if (training && p.dropout_rate > 0.0) {
        if (rng == nullptr) throw ContractError("membership: training with dropout needs an rng");
        masks = dropout_masks(p, z.rows(), *rng);
    }
    Matrix h = z;
    for (std::size_t l = 0; l < p.layers.size(); ++l) {
        Matrix y = matmul(h, p.layers[l].weight);
        for (std::size_t i = 0; i < y.rows(); ++i)
            for (std::size_t j = 0; j < y.cols(); ++j) y(i, j) += p.layers[l].bias(0, j);
        if (l + 1 < p.layers.size()) {
            for (double& v : y.data()) v = std::tanh(v);
            if (!masks.empty())
                for (std::size_t i = 0; i < y.size(); ++i) y.data()[i] *= masks[l].data()[i];
        }
        h = std::move(y);
    }
    MembershipBatch out;
    out.gamma = softmax_rows(h);
    out.logits = std::move(h);
    return out;
}

/// Taped membership forward; `masks` empty means no dropout.
inline Var membership(const std::vector<DenseVars>& layers, Var z, const std::vector<Matrix>& masks) {
    Var h = z;
    for (std::size_t l = 0; l < layers.size(); ++l) {
        h = ad::add_row(ad::matmul(h, layers[l].weight), layers[l].bias);
        if (l + 1 < layers.size()) {
            h = ad::tanh(h);
            if (!masks.empty()) h = ad::hadamard(h, z.tape->constant(masks[l]));
        }
    }
    return ad::softmax_rows(h);
}

}  // namespace somdagmm
