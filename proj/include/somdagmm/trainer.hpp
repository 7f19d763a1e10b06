#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "compression_net.hpp"
#include "data.hpp"
#include "dense.hpp"
#include "errors.hpp"
#include "estimation_net.hpp"
#include "gmm.hpp"
#include "matrix.hpp"
#include "rng.hpp"
#include "som.hpp"
#include "tape.hpp"

namespace somdagmm {

enum class OptimizerKind { adam, sgd };

inline std::string to_string(OptimizerKind o) { return o == OptimizerKind::adam ? "adam" : "sgd"; }

inline OptimizerKind parse_optimizer(const std::string& s) {
    if (s == "adam") return OptimizerKind::adam;
    if (s == "sgd") return OptimizerKind::sgd;
    throw InvalidArgument("unknown optimizer '" + s + "' (expected adam | sgd)");
}

struct TrainConfig {
    double learning_rate = 1e-4;
    std::size_t batch_size = 1024;
    double lambda1 = 0.1;
    double lambda2 = 0.005;
    std::size_t epochs = 200;
    std::uint64_t seed = 0;
    double eps = 1e-6;
    OptimizerKind optimizer = OptimizerKind::adam;
    /// Trains the autoencoder alone (no estimation network in the objective).
    bool reconstruction_only = false;

    void validate() const {
        if (!(learning_rate > 0.0)) throw InvalidArgument("train: learning rate must be > 0");
        if (batch_size < 1) throw InvalidArgument("train: batch size must be >= 1");
        if (!(lambda1 >= 0.0) || !(lambda2 >= 0.0)) throw InvalidArgument("train: lambdas must be >= 0");
        if (!(eps >= 0.0)) throw InvalidArgument("train: eps must be >= 0");
    }
};

/// Everything needed to build and train one model.
struct PipelineConfig {
    SomConfig som;
    AutoencoderConfig autoencoder;
    EstimationConfig estimation;
    TrainConfig train;
    bool with_som = true;
    ReconstructionMode reconstruction = ReconstructionMode::both;

    /// Uses one run seed for every stochastic component.
    PipelineConfig with_seed(std::uint64_t seed) const {
        PipelineConfig c = *this;
        c.som.seed = mix_seed(seed, 1);
        c.autoencoder.seed = mix_seed(seed, 2);
        c.estimation.seed = mix_seed(seed, 3);
        c.train.seed = mix_seed(seed, 4);
        return c;
    }

    LatentLayout latent_layout() const {
        return {with_som, reconstruction_width(reconstruction), autoencoder.code_dim()};
    }
};

/// The differentiable part of the model.
struct JointNets {
    CompressionNet compression;
    EstimationNetParams estimation;

    friend bool operator==(const JointNets&, const JointNets&) = default;
};

/// Every trainable matrix in a fixed order: encoder, decoder, estimation.
inline std::vector<Matrix*> parameter_refs(JointNets& nets) {
    std::vector<Matrix*> out;
    for (auto* layers : {&nets.compression.encoder(), &nets.compression.decoder(), &nets.estimation.layers})
        for (auto& l : *layers) {
            out.push_back(&l.weight);
            out.push_back(&l.bias);
        }
    return out;
}

struct ObjectiveSettings {
    double lambda1 = 0.1;
    double lambda2 = 0.005;
    double eps = 1e-6;
    ReconstructionMode reconstruction = ReconstructionMode::both;
    bool reconstruction_only = false;
};

struct ObjectiveGraph {
    Var objective;
    Var reconstruction;  // mean squared reconstruction error
    Var energy;          // mean sample energy
    Var penalty;         // covariance penalty
    std::vector<Var> parameters;  // same order as parameter_refs
    std::size_t components = 0;
    std::size_t latent_dim = 0;
    bool has_gmm = false;
};

/// Records J = mean L(x, x') + λ₁·mean E(z) + λ₂·P(Σ) for one batch.
/// `som_codes` is N × 2 (or empty for the no-SOM ablation); `masks` are the
/// estimation-net dropout masks (empty for none).
inline ObjectiveGraph build_objective(GradientTape& tape, const JointNets& nets, const Matrix& x,
                                      const Matrix& som_codes, const std::vector<Matrix>& masks,
                                      const ObjectiveSettings& s) {
    if (x.rows() == 0) throw InvalidArgument("objective: empty batch");
    if (!som_codes.empty() && som_codes.rows() != x.rows())
        throw DimensionMismatch("objective: som codes and batch row counts differ");
    ObjectiveGraph g;
    auto enc = register_layers(tape, nets.compression.encoder());
    auto dec = register_layers(tape, nets.compression.decoder());
    auto est = register_layers(tape, nets.estimation.layers);
    for (auto* group : {&enc, &dec, &est})
        for (const auto& l : *group) {
            g.parameters.push_back(l.weight);
            g.parameters.push_back(l.bias);
        }

    Var xv = tape.constant(x);
    if (x.cols() != nets.compression.input_dim())
        throw DimensionMismatch("objective: batch has " + std::to_string(x.cols()) + " features, net expects " +
                                std::to_string(nets.compression.input_dim()));
    Var code = forward_stack(enc, xv);
    Var recon = forward_stack(dec, code);
    g.reconstruction = ad::mean(ad::row_sum_squares(ad::sub(xv, recon)));

    if (s.reconstruction_only) {
        g.energy = tape.constant(Matrix::scalar(0.0));
        g.penalty = tape.constant(Matrix::scalar(0.0));
        g.objective = g.reconstruction;
        return g;
    }

    Var features = ad::reconstruction_features(xv, recon, s.reconstruction == ReconstructionMode::both);
    std::vector<Var> parts;
    if (!som_codes.empty()) parts.push_back(tape.constant(som_codes));
    parts.push_back(features);
    parts.push_back(code);
    Var z = ad::concat_cols(parts);
    Var gamma = membership(est, z, masks);
    const ad::GmmVar gmm = ad::estimate_gmm(gamma, z, s.eps);
    g.energy = ad::mean(ad::gmm_energy(z, gmm, s.eps));
    g.penalty = ad::gmm_cov_penalty(gmm, s.eps);
    g.objective = ad::add(ad::add(g.reconstruction, ad::scale(g.energy, s.lambda1)), ad::scale(g.penalty, s.lambda2));
    g.components = gmm.components;
    g.latent_dim = gmm.dim;
    g.has_gmm = true;
    return g;
}

struct LossTerms {
    double reconstruction = 0.0;
    double energy = 0.0;
    double penalty = 0.0;
    double objective = 0.0;
};

/// Objective value and per-term breakdown for one batch (no gradients).
inline LossTerms objective(const JointNets& nets, const Matrix& x, const Matrix& som_codes,
                           const std::vector<Matrix>& masks, const ObjectiveSettings& s) {
    GradientTape tape;
    const auto g = build_objective(tape, nets, x, som_codes, masks, s);
    return {g.reconstruction.value()(0, 0), g.energy.value()(0, 0), g.penalty.value()(0, 0),
            g.objective.value()(0, 0)};
}

class Optimizer {
public:
    Optimizer(OptimizerKind kind, double learning_rate) : kind_(kind), lr_(learning_rate) {}

    void step(const std::vector<Matrix*>& params, const std::vector<Matrix>& grads) {
        if (m_.empty())
            for (const Matrix* p : params) {
                m_.emplace_back(p->rows(), p->cols());
                v_.emplace_back(p->rows(), p->cols());
            }
        ++t_;
        const double bc1 = 1.0 - std::pow(kBeta1, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(kBeta2, static_cast<double>(t_));
        for (std::size_t p = 0; p < params.size(); ++p) {
            auto& w = params[p]->data();
            const auto& g = grads[p].data();
            if (kind_ == OptimizerKind::sgd) {
                for (std::size_t i = 0; i < w.size(); ++i) w[i] -= lr_ * g[i];
                continue;
            }
            auto& m = m_[p].data();
            auto& v = v_[p].data();
            for (std::size_t i = 0; i < w.size(); ++i) {
                m[i] = kBeta1 * m[i] + (1.0 - kBeta1) * g[i];
                v[i] = kBeta2 * v[i] + (1.0 - kBeta2) * g[i] * g[i];
                w[i] -= lr_ * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + kEpsilon);
            }
        }
    }

    static constexpr double kBeta1 = 0.9;
    static constexpr double kBeta2 = 0.999;
    static constexpr double kEpsilon = 1e-8;

private:
    OptimizerKind kind_;
    double lr_;
    std::size_t t_ = 0;
    std::vector<Matrix> m_, v_;
};

struct EpochLog {
    std::size_t epoch = 0;
    LossTerms terms;  // means over the epoch's minibatches
};

inline std::string training_log_csv(const std::vector<EpochLog>& log) {
    std::ostringstream out;
    out.precision(17);
    out << "epoch,reconstruction,energy,penalty,objective\n";
    for (const auto& e : log)
        out << e.epoch << ',' << e.terms.reconstruction << ',' << e.terms.energy << ',' << e.terms.penalty << ','
            << e.terms.objective << '\n';
    return out.str();
}

struct TrainedModel {
    std::optional<SomModel> som;
    JointNets nets;
    GmmParams final_gmm;
    PreprocessStats preprocess;
    double eps = 1e-6;
    ReconstructionMode reconstruction = ReconstructionMode::both;
    std::vector<EpochLog> log;

    bool with_som() const { return som.has_value(); }
    LatentLayout latent_layout() const {
        return {with_som(), reconstruction_width(reconstruction), nets.compression.code_dim()};
    }
};

/// z = [z_s, z_r, z_c] for every row of x (deterministic path).
inline Matrix latent(const std::optional<SomModel>& som, const CompressionNet& net, ReconstructionMode mode,
                     const Matrix& x) {
    const auto c = compress(net, x, mode);
    return assemble_latent(som ? som->encode_batch(x) : Matrix{}, c.features, c.code);
}

inline Matrix latent(const TrainedModel& m, const Matrix& x) {
    return latent(m.som, m.nets.compression, m.reconstruction, x);
}

/// GMM over the whole dataset with dropout off.
inline GmmParams full_data_gmm(const TrainedModel& m, const Matrix& x) {
    const Matrix z = latent(m, x);
    return estimate_gmm(membership(m.nets.estimation, z, false).gamma, z, m.eps);
}

/// Sample energies of already preprocessed rows under the model's final GMM.
inline std::vector<double> score(const TrainedModel& m, const Matrix& x) {
    return energies(latent(m, x), m.final_gmm, m.eps);
}

/// Applies the stored preprocessing to raw records, then scores them.
inline std::vector<double> score(const TrainedModel& m, const std::vector<RawRecord>& records,
                                 const RecordSchema& schema,
                                 UnknownCategoryPolicy policy = UnknownCategoryPolicy::warn_zeros) {
    return score(m, transform(records, schema, m.preprocess, policy).features);
}

inline Matrix gather_rows(const Matrix& src, std::span<const std::size_t> rows) {
    Matrix out(rows.size(), src.cols());
    for (std::size_t r = 0; r < rows.size(); ++r) {
        const auto s = src.row(rows[r]);
        std::copy(s.begin(), s.end(), out.row(r).begin());
    }
    return out;
}

/// Two-phase training: the SOM is fit on the raw rows and its codes are frozen;
/// the compression and estimation networks are then trained jointly.
/// `x` holds preprocessed features only; no labels enter training.
/// `on_epoch` sees each log entry as it is produced, so a caller keeps the
/// history even when training later diverges.
inline TrainedModel train(const Matrix& x, const PipelineConfig& cfg,
                          const std::function<void(const EpochLog&)>& on_epoch = {}) {
    cfg.train.validate();
    if (x.rows() == 0) throw InvalidArgument("train: empty data");
    if (!x.all_finite()) throw InvalidArgument("train: non-finite data");
    AutoencoderConfig ae = cfg.autoencoder;
    ae.layer_sizes.front() = x.cols();

    TrainedModel model;
    model.eps = cfg.train.eps;
    model.reconstruction = cfg.reconstruction;

    Matrix som_codes;
    if (cfg.with_som) {
        model.som = train_som(x, cfg.som);
        som_codes = model.som->encode_batch(x);
    }

    model.nets.compression = CompressionNet::initialize(ae);
    model.nets.estimation = EstimationNetParams::initialize(model.latent_layout().dim(), cfg.estimation);

    const ObjectiveSettings settings{cfg.train.lambda1, cfg.train.lambda2, cfg.train.eps, cfg.reconstruction,
                                     cfg.train.reconstruction_only};
    Optimizer opt(cfg.train.optimizer, cfg.train.learning_rate);
    Rng shuffle_rng(mix_seed(cfg.train.seed, 0x5F));
    Rng dropout_rng(mix_seed(cfg.train.seed, 0xD0));
    auto order = iota_indices(x.rows());
    const std::size_t n = x.rows(), bs = cfg.train.batch_size;
    long last_good = -1;

    for (std::size_t epoch = 0; epoch < cfg.train.epochs; ++epoch) {
        shuffle_rng.shuffle(order);
        LossTerms sum;
        std::size_t batches = 0;
        for (std::size_t start = 0, b = 0; start < n; start += bs, ++b) {
            const std::span<const std::size_t> rows(order.data() + start, std::min(bs, n - start));
            const Matrix xb = gather_rows(x, rows);
            const Matrix sb = cfg.with_som ? gather_rows(som_codes, rows) : Matrix{};
            const auto masks = cfg.train.reconstruction_only
                                   ? std::vector<Matrix>{}
                                   : dropout_masks(model.nets.estimation, rows.size(), dropout_rng);

            GradientTape tape;
            ObjectiveGraph g;
            try {
                g = build_objective(tape, model.nets, xb, sb, masks, settings);
            } catch (const SingularMatrix&) {
                throw DivergedTraining(epoch, b, last_good);
            } catch (const InvalidArgument&) {
                // inputs were checked above, so this is an overflowed activation
                throw DivergedTraining(epoch, b, last_good);
            }
            const double j = g.objective.value()(0, 0);
            if (!std::isfinite(j)) throw DivergedTraining(epoch, b, last_good);
            tape.backward(g.objective);

            std::vector<Matrix> grads;
            grads.reserve(g.parameters.size());
            for (const Var& p : g.parameters) grads.push_back(tape.adjoint(p));
            opt.step(parameter_refs(model.nets), grads);
            if (!all_finite(model.nets.compression.encoder()) || !all_finite(model.nets.compression.decoder()) ||
                !all_finite(model.nets.estimation.layers))
                throw DivergedTraining(epoch, b, last_good);

            sum.reconstruction += g.reconstruction.value()(0, 0);
            sum.energy += g.energy.value()(0, 0);
            sum.penalty += g.penalty.value()(0, 0);
            sum.objective += j;
            ++batches;
        }
        const double inv = 1.0 / static_cast<double>(batches);
        model.log.push_back({epoch, {sum.reconstruction * inv, sum.energy * inv, sum.penalty * inv, sum.objective * inv}});
        if (on_epoch) on_epoch(model.log.back());
        last_good = static_cast<long>(epoch);
    }

    if (!all_finite(model.nets.compression.encoder()) || !all_finite(model.nets.compression.decoder()) ||
        !all_finite(model.nets.estimation.layers))
        throw DivergedTraining(cfg.train.epochs, 0, last_good);
    try {
        model.final_gmm = full_data_gmm(model, x);
    } catch (const SingularMatrix&) {
        throw DivergedTraining(cfg.train.epochs, 0, last_good);
    } catch (const InvalidArgument&) {
        throw DivergedTraining(cfg.train.epochs, 0, last_good);
    }
    return model;
}

}  // namespace somdagmm
