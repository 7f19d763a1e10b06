#include <gtest/gtest.h>

#include "somdagmm/model_io.hpp"
#include "test_support.hpp"

using namespace somdagmm;
using namespace somdagmm::testing;

namespace {

PipelineConfig small_config(std::size_t d, bool with_som, std::uint64_t seed) {
    PipelineConfig c;
    c.som.grid_width = 3;
    c.som.grid_height = 5;
    c.som.iterations = 300;
    c.autoencoder.layer_sizes = {d, 5, 2};
    c.estimation.hidden = {4};
    c.estimation.components = 3;
    c.train.epochs = 3;
    c.train.batch_size = 32;
    c.train.learning_rate = 1e-3;
    c.with_som = with_som;
    return c.with_seed(seed);
}

struct NslFixture {
    RecordSchema schema = nslkdd_schema();
    std::vector<RawRecord> records;
    FitTransformResult fitted;

    explicit NslFixture(std::size_t n) {
        TempDir dir;
        Rng rng(3);
        std::string text;
        for (std::size_t i = 0; i < n; ++i)
            text += nslkdd_line(rng, schema, i % 10 == 0 ? "neptune" : "normal", i % 10 == 0 ? 5.0 : 1.0);
        records = parse_nslkdd(dir.write("train.txt", text), schema).records;
        fitted = fit_transform(records, schema);
    }
};

void expect_same_model(const TrainedModel& a, const TrainedModel& b) {
    EXPECT_EQ(a.som.has_value(), b.som.has_value());
    if (a.som && b.som) {
        EXPECT_EQ(a.som->weights(), b.som->weights());
        EXPECT_EQ(a.som->config().seed, b.som->config().seed);
    }
    EXPECT_TRUE(a.nets == b.nets);
    EXPECT_EQ(a.final_gmm.phi, b.final_gmm.phi);
    EXPECT_EQ(a.final_gmm.mu, b.final_gmm.mu);
    EXPECT_EQ(a.final_gmm.sigma, b.final_gmm.sigma);
    EXPECT_EQ(a.eps, b.eps);
    EXPECT_EQ(a.reconstruction, b.reconstruction);
    EXPECT_EQ(a.preprocess.schema_hash, b.preprocess.schema_hash);
}

}  // namespace

TEST(ModelFile, RoundTripGivesIdenticalScores) {
    NslFixture fx(400);
    ModelFile f;
    f.model = train(fx.fitted.dataset.features, small_config(fx.fitted.dataset.features.cols(), true, 5));
    f.model.preprocess = fx.fitted.stats;
    f.threshold = ThresholdPolicy::percentile(0.2);

    TempDir dir;
    const auto path = dir.file("m.model");
    save_model(path, f);
    const auto back = load_model(path);
    expect_same_model(f.model, back.model);
    EXPECT_EQ(back.threshold.to_string(), f.threshold.to_string());

    Rng rng(11);
    const Matrix probe = random_matrix(rng, 1000, fx.fitted.dataset.features.cols(), -0.5, 1.5);
    const auto s1 = score(f.model, probe);
    const auto s2 = score(back.model, probe);
    ASSERT_EQ(s1.size(), 1000u);
    for (std::size_t i = 0; i < s1.size(); ++i) ASSERT_EQ(s1[i], s2[i]) << i;

    EXPECT_EQ(score(f.model, fx.records, fx.schema), score(back.model, fx.records, fx.schema));
}

TEST(ModelFile, ResaveIsByteIdentical) {
    Rng rng(2);
    const Matrix x = random_matrix(rng, 120, 4, 0.0, 1.0);
    for (bool with_som : {true, false}) {
        ModelFile f;
        f.model = train(x, small_config(4, with_som, 8));
        const auto text = model_to_text(f);
        EXPECT_EQ(model_to_text(model_from_text(text)), text);
        EXPECT_EQ(text.find("[som]") != std::string::npos, with_som);
    }
}

TEST(ModelFile, EuclideanOnlyModeSurvives) {
    Rng rng(4);
    const Matrix x = random_matrix(rng, 80, 3, 0.0, 1.0);
    auto cfg = small_config(3, false, 2);
    cfg.reconstruction = ReconstructionMode::euclidean_only;
    ModelFile f;
    f.model = train(x, cfg);
    const auto back = model_from_text(model_to_text(f));
    EXPECT_EQ(back.model.reconstruction, ReconstructionMode::euclidean_only);
    EXPECT_EQ(score(back.model, x), score(f.model, x));
}

TEST(ModelFile, RejectsVersionAndCorruption) {
    Rng rng(6);
    const Matrix x = random_matrix(rng, 60, 3, 0.0, 1.0);
    ModelFile f;
    f.model = train(x, small_config(3, true, 1));
    const auto text = model_to_text(f);

    auto bumped = text;
    bumped.replace(bumped.find("somdagmm-model 1"), 16, "somdagmm-model 9");
    EXPECT_THROW(model_from_text(bumped), DataError);

    EXPECT_THROW(model_from_text(text.substr(0, text.size() / 2)), DataError);
    EXPECT_THROW(model_from_text(text + "extra\n"), DataError);

    auto nan = text;
    const auto at = nan.find("phi ") + 4;
    nan.replace(at, nan.find(' ', at) - at, "nan");
    EXPECT_THROW(model_from_text(nan), DataError);
}

TEST(DatasetCache, RoundTripIsExact) {
    NslFixture fx(150);
    DatasetCache c;
    c.schema_name = fx.schema.name;
    c.stats = fx.fitted.stats;
    c.data = fx.fitted.dataset;
    c.data.features(0, 0) = 0.1 + 0.2;  // needs all 17 digits

    TempDir dir;
    const auto path = dir.file("d.cache");
    save_cache(path, c);
    EXPECT_TRUE(is_cache_file(path));
    EXPECT_FALSE(is_cache_file(dir.write("raw.txt", "0,tcp\n")));

    const auto back = load_cache(path);
    EXPECT_EQ(back.data.features, c.data.features);
    EXPECT_EQ(back.data.anomaly, c.data.anomaly);
    EXPECT_EQ(back.stats.schema_hash, fx.schema.hash());
    EXPECT_EQ(back.stats.encoded_dim(), 122u);
    EXPECT_EQ(cache_to_text(back), read_file(path));
}

TEST(DatasetCache, RejectsRowCountMismatch) {
    NslFixture fx(20);
    DatasetCache c;
    c.stats = fx.fitted.stats;
    c.data = fx.fitted.dataset;
    auto text = cache_to_text(c);
    text.replace(text.find("rows 20"), 7, "rows 21");
    EXPECT_THROW(cache_from_text(text), DataError);
}
