#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "somdagmm/trainer.hpp"
#include "test_support.hpp"

using namespace somdagmm;
using namespace somdagmm::testing;

namespace {

PipelineConfig tiny_config(std::size_t d, std::uint64_t seed = 1) {
    PipelineConfig c;
    c.som.grid_width = 4;
    c.som.grid_height = 4;
    c.som.iterations = 500;
    c.autoencoder.layer_sizes = {d, 4, 1};
    c.estimation.hidden = {6};
    c.estimation.components = 2;
    c.train.epochs = 10;
    c.train.batch_size = 64;
    c.train.learning_rate = 1e-3;
    return c.with_seed(seed);
}

Matrix gaussian_cloud(Rng& rng, std::size_t n, std::size_t d, double center, double spread) {
    Matrix m(n, d);
    for (double& v : m.data()) v = center + spread * rng.normal();
    return m;
}

JointNets random_nets(std::size_t d, std::size_t latent, std::size_t k, std::uint64_t seed) {
    AutoencoderConfig ae;
    ae.layer_sizes = {d, 3, 1};
    ae.seed = seed;
    EstimationConfig est;
    est.hidden = {6};
    est.components = k;
    est.seed = seed + 1;
    return {CompressionNet::initialize(ae), EstimationNetParams::initialize(latent, est)};
}

std::vector<std::pair<Matrix, Matrix>> pairs(const std::vector<DenseLayer>& layers) {
    std::vector<std::pair<Matrix, Matrix>> out;
    for (const auto& l : layers) out.emplace_back(l.weight, l.bias);
    return out;
}

/// Independent composition of the three objective terms from the naive oracles.
LossTerms oracle_terms(const JointNets& nets, const Matrix& x, const Matrix& som, const ObjectiveSettings& s) {
    const std::size_t n = x.rows();
    Matrix z, gamma;
    double rec = 0.0;
    std::vector<std::vector<double>> zs;
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<double> xi(x.row(i).begin(), x.row(i).end());
        const auto code = naive_forward(pairs(nets.compression.encoder()), xi);
        const auto xr = naive_forward(pairs(nets.compression.decoder()), code);
        double sq = 0.0, nx = 0.0, nr = 0.0, dt = 0.0;
        for (std::size_t a = 0; a < xi.size(); ++a) {
            sq += (xi[a] - xr[a]) * (xi[a] - xr[a]);
            nx += xi[a] * xi[a];
            nr += xr[a] * xr[a];
            dt += xi[a] * xr[a];
        }
        rec += sq;
        std::vector<double> zi;
        if (!som.empty()) zi = {som(i, 0), som(i, 1)};
        zi.push_back(std::sqrt(sq) / std::sqrt(nx));
        zi.push_back(dt / (std::sqrt(nx) * std::sqrt(nr)));
        zi.insert(zi.end(), code.begin(), code.end());
        zs.push_back(zi);
    }
    z = Matrix(n, zs[0].size());
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t a = 0; a < zs[i].size(); ++a) z(i, a) = zs[i][a];
    const std::size_t k = nets.estimation.components();
    gamma = Matrix(n, k);
    for (std::size_t i = 0; i < n; ++i) {
        const auto logits = naive_forward(pairs(nets.estimation.layers), zs[i]);
        double total = 0.0;
        for (double v : logits) total += std::exp(v);
        for (std::size_t c = 0; c < k; ++c) gamma(i, c) = std::exp(logits[c]) / total;
    }
    const auto g = naive_estimate_gmm(gamma, z);
    double e = 0.0;
    for (std::size_t i = 0; i < n; ++i) e += naive_energy(zs[i], g.phi, g.mu, g.sigma, s.eps);
    LossTerms t;
    t.reconstruction = rec / static_cast<double>(n);
    t.energy = e / static_cast<double>(n);
    t.penalty = naive_penalty(g.sigma, s.eps);
    t.objective = t.reconstruction + s.lambda1 * t.energy + s.lambda2 * t.penalty;
    return t;
}

double mean(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size()); }

}  // namespace

TEST(TrainConfig, TableDefaultsAndValidation) {
    const TrainConfig c;
    EXPECT_EQ(c.learning_rate, 1e-4);
    EXPECT_EQ(c.batch_size, 1024u);
    EXPECT_EQ(c.lambda1, 0.1);
    EXPECT_EQ(c.lambda2, 0.005);
    EXPECT_EQ(c.eps, 1e-6);
    EXPECT_EQ(c.optimizer, OptimizerKind::adam);
    auto bad = c;
    bad.learning_rate = 0.0;
    EXPECT_THROW(bad.validate(), InvalidArgument);
    bad = c;
    bad.batch_size = 0;
    EXPECT_THROW(bad.validate(), InvalidArgument);
    bad = c;
    bad.lambda1 = -1.0;
    EXPECT_THROW(bad.validate(), InvalidArgument);
}

TEST(Objective, ZeroLambdasGiveReconstructionExactly) {
    Rng rng(1);
    const auto nets = random_nets(4, 5, 3, 2);
    const Matrix x = random_matrix(rng, 8, 4);
    const Matrix som = random_matrix(rng, 8, 2, 0.0, 1.0);
    const auto t = objective(nets, x, som, {}, {0.0, 0.0, 1e-6});
    EXPECT_EQ(t.objective, t.reconstruction);
}

TEST(Objective, PerfectAutoencoderLeavesOnlyEnergy) {
    AutoencoderConfig ae;
    ae.layer_sizes = {3, 3};
    auto comp = CompressionNet::initialize(ae);
    comp.encoder()[0].weight = Matrix::identity(3);
    comp.encoder()[0].bias = Matrix(1, 3);
    comp.decoder()[0].weight = Matrix::identity(3);
    comp.decoder()[0].bias = Matrix(1, 3);
    EstimationConfig est;
    est.components = 2;
    est.seed = 5;
    JointNets nets{comp, EstimationNetParams::initialize(2 + 2 + 3, est)};
    Rng rng(2);
    const Matrix x = random_matrix(rng, 10, 3);
    const Matrix som = random_matrix(rng, 10, 2, 0.0, 1.0);
    const ObjectiveSettings s{0.1, 0.0, 1e-6};
    const auto t = objective(nets, x, som, {}, s);
    EXPECT_EQ(t.reconstruction, 0.0);
    EXPECT_NEAR(t.objective, s.lambda1 * t.energy, 1e-12 * std::abs(t.objective));
}

TEST(Objective, EqualsOracleComposition) {
    Rng rng(3);
    for (int trial = 0; trial < 10; ++trial) {
        const auto nets = random_nets(4, 5, 3, 10 + trial);
        const Matrix x = random_matrix(rng, 12, 4);
        const Matrix som = random_matrix(rng, 12, 2, 0.0, 1.0);
        const ObjectiveSettings s{0.1, 0.005, 1e-6};
        const auto t = objective(nets, x, som, {}, s);
        const auto o = oracle_terms(nets, x, som, s);
        EXPECT_NEAR(t.reconstruction, o.reconstruction, 1e-10 * std::max(1.0, std::abs(o.reconstruction)));
        EXPECT_NEAR(t.energy, o.energy, 1e-10 * std::max(1.0, std::abs(o.energy)));
        EXPECT_NEAR(t.penalty, o.penalty, 1e-10 * std::max(1.0, std::abs(o.penalty)));
        EXPECT_NEAR(t.objective, o.objective, 1e-10 * std::max(1.0, std::abs(o.objective)));
    }
}

TEST(Objective, ComposedGradientMatchesFiniteDifferences) {
    Rng rng(4);
    for (int trial = 0; trial < 5; ++trial) {
        auto nets = random_nets(4, 5, 3, 20 + trial);
        const Matrix x = random_matrix(rng, 8, 4);
        const Matrix som = random_matrix(rng, 8, 2, 0.0, 1.0);
        Rng mask_rng(trial);
        const auto masks = dropout_masks(nets.estimation, 8, mask_rng);
        const ObjectiveSettings s{0.1, 0.005, 1e-6};
        GradientTape tape;
        const auto g = build_objective(tape, nets, x, som, masks, s);
        tape.backward(g.objective);
        auto refs = parameter_refs(nets);
        ASSERT_EQ(refs.size(), g.parameters.size());
        for (std::size_t p = 0; p < refs.size(); ++p) {
            const Matrix saved = *refs[p];
            const Matrix numeric = finite_difference_gradient(
                [&](const Matrix& m) {
                    *refs[p] = m;
                    const double v = objective(nets, x, som, masks, s).objective;
                    *refs[p] = saved;
                    return v;
                },
                saved);
            EXPECT_LT(max_relative_error(tape.adjoint(g.parameters[p]), numeric, 1e-6), 1e-4)
                << "trial " << trial << " parameter " << p;
        }
    }
}

TEST(Objective, SomCodesReceiveNoParameterSlot) {
    Rng rng(5);
    const auto nets = random_nets(4, 5, 3, 3);
    GradientTape tape;
    const auto g = build_objective(tape, nets, random_matrix(rng, 6, 4), random_matrix(rng, 6, 2), {}, {});
    EXPECT_EQ(tape.parameters().size(), g.parameters.size());
    EXPECT_EQ(g.latent_dim, 5u);
}

TEST(Train, SomIsFrozenDuringJointPhase) {
    Rng rng(6);
    const Matrix x = gaussian_cloud(rng, 150, 3, 0.5, 0.1);
    const auto cfg = tiny_config(3);
    const auto model = train(x, cfg);
    ASSERT_TRUE(model.som.has_value());
    EXPECT_EQ(model.som->weights(), train_som(x, cfg.som).weights());
}

TEST(Train, DeterministicForSameSeed) {
    Rng rng(7);
    const Matrix x = gaussian_cloud(rng, 150, 3, 0.5, 0.1);
    const auto a = train(x, tiny_config(3, 9));
    const auto b = train(x, tiny_config(3, 9));
    EXPECT_TRUE(a.nets == b.nets);
    EXPECT_EQ(a.final_gmm.mu, b.final_gmm.mu);
    EXPECT_EQ(a.final_gmm.phi, b.final_gmm.phi);
    EXPECT_EQ(a.final_gmm.sigma, b.final_gmm.sigma);
    EXPECT_EQ(training_log_csv(a.log), training_log_csv(b.log));
    const auto c = train(x, tiny_config(3, 10));
    EXPECT_FALSE(a.nets == c.nets);
}

TEST(Train, LogIsFiniteAndDecomposes) {
    Rng rng(8);
    const Matrix x = gaussian_cloud(rng, 130, 3, 0.5, 0.2);
    const auto cfg = tiny_config(3);
    const auto model = train(x, cfg);
    ASSERT_EQ(model.log.size(), cfg.train.epochs);
    for (const auto& e : model.log) {
        EXPECT_TRUE(std::isfinite(e.terms.objective));
        const double composed =
            e.terms.reconstruction + cfg.train.lambda1 * e.terms.energy + cfg.train.lambda2 * e.terms.penalty;
        EXPECT_NEAR(e.terms.objective, composed, 1e-12 * std::max(1.0, std::abs(composed)));
    }
    const auto csv = training_log_csv(model.log);
    EXPECT_EQ(csv.substr(0, csv.find('\n')), "epoch,reconstruction,energy,penalty,objective");
}

TEST(Train, EnergyFallsOnTightCluster) {
    // The penalty term is switched off: on a tight cluster λ₂·P dwarfs λ₁·E and
    // the optimizer widens the covariances, raising energy on purpose.
    Rng rng(9);
    const Matrix x = gaussian_cloud(rng, 200, 3, 0.5, 0.05);
    auto cfg = tiny_config(3, 3);
    cfg.train.lambda2 = 0.0;
    cfg.train.epochs = 0;
    const double before = mean(score(train(x, cfg), x));
    cfg.train.epochs = 60;
    const double after = mean(score(train(x, cfg), x));
    EXPECT_LT(after, before);
}

TEST(Train, ObjectiveFallsWithDefaultLambdas) {
    Rng rng(9);
    const Matrix x = gaussian_cloud(rng, 200, 3, 0.5, 0.05);
    auto cfg = tiny_config(3, 3);
    cfg.train.epochs = 60;
    const auto model = train(x, cfg);
    EXPECT_LT(model.log.back().terms.objective, model.log.front().terms.objective);
}

TEST(Train, ReconstructionImprovesWithZeroLambdas) {
    Rng rng(10);
    Matrix x(200, 4);
    for (std::size_t i = 0; i < 200; ++i) {
        const double t = rng.uniform();
        x(i, 0) = t;
        x(i, 1) = 1.0 - t;
        x(i, 2) = 0.5 * t;
        x(i, 3) = 0.25;
    }
    auto cfg = tiny_config(4, 4);
    cfg.train.lambda1 = 0.0;
    cfg.train.lambda2 = 0.0;
    cfg.train.epochs = 40;
    const auto model = train(x, cfg);
    EXPECT_LT(model.log.back().terms.reconstruction, model.log.front().terms.reconstruction);
}

TEST(Train, ZeroLambdasMatchPureAutoencoderRun) {
    Rng rng(11);
    const Matrix x = gaussian_cloud(rng, 100, 3, 0.5, 0.2);
    auto joint = tiny_config(3, 5);
    joint.train.lambda1 = 0.0;
    joint.train.lambda2 = 0.0;
    auto pure = joint;
    pure.train.reconstruction_only = true;
    const auto a = train(x, joint);
    const auto b = train(x, pure);
    EXPECT_TRUE(a.nets.compression == b.nets.compression);
}

TEST(Train, NoSomAblationHasThreeDimLatent) {
    Rng rng(12);
    const Matrix x = gaussian_cloud(rng, 80, 3, 0.5, 0.2);
    auto cfg = tiny_config(3);
    cfg.with_som = false;
    const auto model = train(x, cfg);
    EXPECT_FALSE(model.som.has_value());
    EXPECT_EQ(model.nets.estimation.input_dim(), 3u);
    EXPECT_EQ(model.final_gmm.dim(), 3u);
    EXPECT_EQ(latent(model, x).cols(), 3u);
}

TEST(Train, LastPartialBatchIsKept) {
    Rng rng(13);
    const Matrix x = gaussian_cloud(rng, 65, 3, 0.5, 0.2);
    auto cfg = tiny_config(3);
    cfg.train.epochs = 1;
    cfg.train.batch_size = 64;  // a 1-row batch remains
    EXPECT_NO_THROW(train(x, cfg));
}

TEST(Train, DivergenceIsReported) {
    Rng rng(14);
    const Matrix x = gaussian_cloud(rng, 80, 3, 0.5, 0.2);
    auto cfg = tiny_config(3);
    cfg.train.optimizer = OptimizerKind::sgd;
    cfg.train.learning_rate = 1e12;
    cfg.train.epochs = 20;
    try {
        train(x, cfg);
        FAIL() << "expected divergence";
    } catch (const DivergedTraining& e) {
        EXPECT_LT(e.last_good_epoch(), static_cast<long>(e.epoch()));
    }
}

TEST(Train, OverflowingActivationsCountAsDivergence) {
    Rng rng(15);
    const Matrix x = gaussian_cloud(rng, 80, 3, 0.5, 0.2);
    auto cfg = tiny_config(3);
    cfg.with_som = false;
    cfg.train.optimizer = OptimizerKind::sgd;
    cfg.train.learning_rate = 1e300;
    std::vector<EpochLog> seen;
    EXPECT_THROW(train(x, cfg, [&](const EpochLog& e) { seen.push_back(e); }), DivergedTraining);
    EXPECT_LT(seen.size(), cfg.train.epochs);
}

TEST(Train, RejectsNonFiniteData) {
    Matrix x(4, 2, 0.5);
    x(1, 1) = std::nan("");
    EXPECT_THROW(train(x, tiny_config(2)), InvalidArgument);
}

TEST(Train, EpochCallbackSeesEveryLogEntry) {
    Rng rng(16);
    const Matrix x = gaussian_cloud(rng, 100, 3, 0.5, 0.1);
    std::vector<EpochLog> seen;
    const auto model = train(x, tiny_config(3), [&](const EpochLog& e) { seen.push_back(e); });
    EXPECT_EQ(training_log_csv(seen), training_log_csv(model.log));
}

TEST(Score, OutlierScoresAboveTrainingSample) {
    RecordSchema schema;
    schema.name = "toy";
    schema.layout = ColumnLayout::header;
    schema.label_rule = {LabelRule::Kind::anomaly_labels, {"bad"}};
    for (const char* n : {"a", "b", "c"}) schema.features.push_back({n, FeatureKind::continuous, {}});
    Rng rng(15);
    std::vector<RawRecord> recs;
    for (int i = 0; i < 200; ++i) {
        RawRecord r;
        for (int f = 0; f < 3; ++f) r.values.emplace_back(5.0 + rng.normal());
        r.label = "ok";
        recs.push_back(r);
    }
    auto fit = fit_transform(recs, schema);
    auto cfg = tiny_config(3, 6);
    cfg.train.epochs = 30;
    auto model = train(fit.dataset.features, cfg);
    model.preprocess = fit.stats;
    RawRecord far;
    for (const auto& c : fit.stats.continuous) far.values.emplace_back(10.0 * c.max);
    const auto e = score(model, std::vector<RawRecord>{recs[0], far}, schema);
    EXPECT_GT(e[1], e[0]);
}

TEST(Score, DeterministicAndOrderIndependent) {
    Rng rng(16);
    const Matrix x = gaussian_cloud(rng, 120, 3, 0.5, 0.2);
    const auto model = train(x, tiny_config(3));
    const auto batch = score(model, x);
    EXPECT_EQ(batch, score(model, x));
    for (std::size_t i = 0; i < x.rows(); ++i) {
        const Matrix one(1, 3, {x(i, 0), x(i, 1), x(i, 2)});
        EXPECT_EQ(score(model, one)[0], batch[i]);
    }
}
