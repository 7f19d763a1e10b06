#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "errors.hpp"
#include "matrix.hpp"
#include "rng.hpp"

namespace somdagmm {

enum class Neighborhood { bubble, gaussian };

/// Weight initialization: `random` draws uniform [-1, 1] vectors scaled to unit
/// length; `sample` copies uniformly sampled training vectors.
enum class SomInit { random, sample };

inline std::string to_string(SomInit i) { return i == SomInit::random ? "random" : "sample"; }

inline SomInit parse_som_init(const std::string& s) {
    if (s == "random") return SomInit::random;
    if (s == "sample") return SomInit::sample;
    throw InvalidArgument("unknown som init '" + s + "' (expected random | sample)");
}

inline std::string to_string(Neighborhood n) { return n == Neighborhood::bubble ? "bubble" : "gaussian"; }

inline Neighborhood parse_neighborhood(const std::string& s) {
    if (s == "bubble") return Neighborhood::bubble;
    if (s == "gaussian") return Neighborhood::gaussian;
    throw InvalidArgument("unknown neighborhood '" + s + "' (expected bubble | gaussian)");
}

struct SomConfig {
    std::size_t grid_width = 10;
    std::size_t grid_height = 10;
    double learning_rate = 0.6;
    Neighborhood neighborhood = Neighborhood::bubble;
    /// 0 selects max(grid_width, grid_height) / 2.
    double initial_radius = 0.0;
    /// 0 selects min(10 × samples, 500000).
    std::size_t iterations = 0;
    SomInit init = SomInit::random;
    std::uint64_t seed = 0;

    void validate() const {
        if (grid_width < 2 || grid_height < 2) throw InvalidArgument("som: grid must be at least 2x2");
        if (!(learning_rate > 0.0 && learning_rate <= 1.0))
            throw InvalidArgument("som: learning rate must be in (0, 1]");
        if (initial_radius < 0.0) throw InvalidArgument("som: initial radius must be > 0");
    }

    double resolved_radius() const {
        return initial_radius > 0.0 ? initial_radius
                                    : static_cast<double>(std::max(grid_width, grid_height)) / 2.0;
    }

    std::size_t resolved_iterations(std::size_t samples) const {
        return iterations > 0 ? iterations : std::min<std::size_t>(10 * samples, 500000);
    }
};

struct GridCoord {
    std::size_t i = 0;  // column, 0 ≤ i < grid_width
    std::size_t j = 0;  // row, 0 ≤ j < grid_height

    friend bool operator==(const GridCoord&, const GridCoord&) = default;
    friend auto operator<=>(const GridCoord&, const GridCoord&) = default;
};

/// Trained map: one weight vector per grid unit, unit (i, j) stored at row
/// i·grid_height + j so a linear scan visits units in lexicographic order.
class SomModel {
public:
    SomModel() = default;
    SomModel(SomConfig config, Matrix weights) : config_(config), weights_(std::move(weights)) {
        config_.validate();
        if (weights_.rows() != config_.grid_width * config_.grid_height)
            throw DimensionMismatch("som: weight rows do not match grid size");
        if (!weights_.all_finite()) throw InvalidArgument("som: non-finite weights");
    }

    const SomConfig& config() const noexcept { return config_; }
    const Matrix& weights() const noexcept { return weights_; }
    std::size_t dim() const noexcept { return weights_.cols(); }
    std::size_t units() const noexcept { return weights_.rows(); }

    std::size_t unit_index(GridCoord c) const { return c.i * config_.grid_height + c.j; }
    GridCoord coord(std::size_t unit) const { return {unit / config_.grid_height, unit % config_.grid_height}; }
    std::span<const double> weight(GridCoord c) const { return weights_.row(unit_index(c)); }

    /// Unit with the smallest squared distance to x; ties go to the smallest (i, j).
    GridCoord bmu(std::span<const double> x) const { return coord(bmu_index(x)); }

    std::size_t bmu_index(std::span<const double> x) const {
        check_dim(x.size());
        return nearest_row(weights_, x);
    }

    /// Index of the row of `weights` closest to x; first row wins ties.
    static std::size_t nearest_row(const Matrix& weights, std::span<const double> x) {
        std::size_t best = 0;
        double best_d = std::numeric_limits<double>::infinity();
        for (std::size_t u = 0; u < weights.rows(); ++u) {
            const double d = squared_distance(x, weights.row(u));
            if (d < best_d) {
                best_d = d;
                best = u;
            }
        }
        return best;
    }

    /// Normalized BMU coordinates in [0, 1]².
    std::array<double, 2> encode(std::span<const double> x) const {
        const GridCoord c = bmu(x);
        return {static_cast<double>(c.i) / static_cast<double>(config_.grid_width - 1),
                static_cast<double>(c.j) / static_cast<double>(config_.grid_height - 1)};
    }

    /// Encodes every row of data into an N × 2 matrix.
    Matrix encode_batch(const Matrix& data) const {
        Matrix out(data.rows(), 2);
        for (std::size_t r = 0; r < data.rows(); ++r) {
            const auto z = encode(data.row(r));
            out(r, 0) = z[0];
            out(r, 1) = z[1];
        }
        return out;
    }

    friend bool operator==(const SomModel& a, const SomModel& b) { return a.weights_ == b.weights_; }

private:
    void check_dim(std::size_t d) const {
        if (d != dim())
            throw DimensionMismatch("som: input has dimension " + std::to_string(d) + ", map expects " +
                                    std::to_string(dim()));
    }

    SomConfig config_;
    Matrix weights_;
};

/// Mean Euclidean distance from each sample to its BMU weight.
inline double quantization_error(const SomModel& model, const Matrix& data) {
    if (data.rows() == 0) throw InvalidArgument("quantization_error: empty data");
    double total = 0.0;
    for (std::size_t r = 0; r < data.rows(); ++r) {
        const auto u = model.bmu_index(data.row(r));
        total += std::sqrt(squared_distance(data.row(r), model.weights().row(u)));
    }
    return total / static_cast<double>(data.rows());
}

/// Called with (iteration, map) after `iteration` updates have been applied.
using SomObserver = std::function<void(std::size_t, const SomModel&)>;

/// Competitive-learning training. Samples are visited cyclically over a seeded
/// shuffle; the learning rate decays linearly to 1% of its initial value and
/// the radius to 1.
inline SomModel train_som(const Matrix& data, const SomConfig& cfg, const SomObserver& observer = {},
                          std::size_t observe_every = 0) {
    cfg.validate();
    const std::size_t n = data.rows(), d = data.cols();
    if (n == 0 || d == 0) throw InvalidArgument("train_som: empty data");
    if (!data.all_finite()) throw InvalidArgument("train_som: non-finite data");

    Rng rng(mix_seed(cfg.seed, 0x50));
    const std::size_t units = cfg.grid_width * cfg.grid_height;
    Matrix weights(units, d);
    for (std::size_t u = 0; u < units; ++u) {
        auto w = weights.row(u);
        if (cfg.init == SomInit::sample) {
            const auto src = data.row(static_cast<std::size_t>(rng.uniform_index(n)));
            std::copy(src.begin(), src.end(), w.begin());
            continue;
        }
        for (double& v : w) v = rng.uniform(-1.0, 1.0);
        const double norm = std::sqrt(squared_norm(w));
        if (norm > 0.0)
            for (double& v : w) v /= norm;
    }
    if (observer) observer(0, SomModel(cfg, weights));

    auto order = iota_indices(n);
    rng.shuffle(order);

    const std::size_t iters = cfg.resolved_iterations(n);
    const double eta0 = cfg.learning_rate, eta1 = cfg.learning_rate / 100.0;
    const double r0 = cfg.resolved_radius(), r1 = 1.0;
    const std::size_t h = cfg.grid_height;

    for (std::size_t t = 0; t < iters; ++t) {
        const double frac = iters > 1 ? static_cast<double>(t) / static_cast<double>(iters - 1) : 1.0;
        const double eta = eta0 + (eta1 - eta0) * frac;
        const double radius = r0 + (r1 - r0) * frac;
        const auto x = data.row(order[t % n]);
        const std::size_t bmu = SomModel::nearest_row(weights, x);
        const GridCoord c{bmu / h, bmu % h};

        for (std::size_t u = 0; u < units; ++u) {
            const auto ui = static_cast<double>(u / h), uj = static_cast<double>(u % h);
            const double di = ui - static_cast<double>(c.i), dj = uj - static_cast<double>(c.j);
            double influence;
            if (cfg.neighborhood == Neighborhood::bubble) {
                // Strictly inside the radius, so at radius 1 only the BMU moves.
                influence = std::max(std::abs(di), std::abs(dj)) < radius ? 1.0 : 0.0;
            } else {
                influence = std::exp(-(di * di + dj * dj) / (2.0 * radius * radius));
            }
            if (influence == 0.0) continue;
            auto w = weights.row(u);
            const double step = eta * influence;
            for (std::size_t k = 0; k < d; ++k) w[k] += step * (x[k] - w[k]);
        }
        if (observer && observe_every > 0 && (t + 1) % observe_every == 0) observer(t + 1, SomModel(cfg, weights));
    }
    return SomModel(cfg, std::move(weights));
}

}  // namespace somdagmm
