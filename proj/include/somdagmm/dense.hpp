#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "matrix.hpp"
#include "rng.hpp"
#include "tape.hpp"

namespace somdagmm {

/// Fully connected layer y = x·W + b, W is (in × out), b is (1 × out).
struct DenseLayer {
    Matrix weight;
    Matrix bias;

    std::size_t inputs() const noexcept { return weight.rows(); }
    std::size_t outputs() const noexcept { return weight.cols(); }

    friend bool operator==(const DenseLayer&, const DenseLayer&) = default;
};

/// Uniform ±√(6/(fan_in+fan_out)) weights, zero biases.
inline DenseLayer init_dense(std::size_t in, std::size_t out, Rng& rng) {
    DenseLayer l{Matrix(in, out), Matrix(1, out)};
    const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
    for (double& w : l.weight.data()) w = rng.uniform(-limit, limit);
    return l;
}

/// Forward through a stack of layers; tanh after every layer except the last.
inline Matrix forward_stack(const std::vector<DenseLayer>& layers, Matrix x) {
    for (std::size_t l = 0; l < layers.size(); ++l) {
        Matrix y = matmul(x, layers[l].weight);
        for (std::size_t i = 0; i < y.rows(); ++i)
            for (std::size_t j = 0; j < y.cols(); ++j) y(i, j) += layers[l].bias(0, j);
        if (l + 1 < layers.size())
            for (double& v : y.data()) v = std::tanh(v);
        x = std::move(y);
    }
    return x;
}

/// Layer parameters registered on a tape.
struct DenseVars {
    Var weight;
    Var bias;
};

inline std::vector<DenseVars> register_layers(GradientTape& tape, const std::vector<DenseLayer>& layers) {
    std::vector<DenseVars> out;
    out.reserve(layers.size());
    for (const auto& l : layers) {
        Var w = tape.parameter(l.weight);
        Var b = tape.parameter(l.bias);
        out.push_back({w, b});
    }
    return out;
}

inline Var forward_stack(const std::vector<DenseVars>& layers, Var x) {
    for (std::size_t l = 0; l < layers.size(); ++l) {
        x = ad::add_row(ad::matmul(x, layers[l].weight), layers[l].bias);
        if (l + 1 < layers.size()) x = ad::tanh(x);
    }
    return x;
}

inline std::size_t parameter_count(const std::vector<DenseLayer>& layers) {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.weight.size() + l.bias.size();
    return n;
}

inline bool all_finite(const std::vector<DenseLayer>& layers) {
    for (const auto& l : layers)
        if (!l.weight.all_finite() || !l.bias.all_finite()) return false;
    return true;
}

}  // namespace somdagmm
