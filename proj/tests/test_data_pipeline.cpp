#include <gtest/gtest.h>

#include <algorithm>
#include <set>

#include "somdagmm/data.hpp"
#include "somdagmm/schema.hpp"
#include "test_support.hpp"

using namespace somdagmm;
using namespace somdagmm::testing;

namespace {

RecordSchema toy_schema() {
    RecordSchema s;
    s.name = "toy";
    s.layout = ColumnLayout::header;
    s.label_column = "label";
    s.label_rule = {LabelRule::Kind::anomaly_labels, {"bad"}};
    s.features = {{"x", FeatureKind::continuous, {}},
                  {"proto", FeatureKind::categorical, {"tcp", "udp", "icmp"}},
                  {"y", FeatureKind::continuous, {}}};
    return s;
}

RawRecord rec(double x, const std::string& proto, double y, const std::string& label = "ok") {
    return {{x, proto, y}, label, 0};
}

std::vector<std::uint8_t> flags(std::size_t inliers, std::size_t anomalies) {
    std::vector<std::uint8_t> f(inliers, 0);
    f.insert(f.end(), anomalies, 1);
    return f;
}

}  // namespace

TEST(Schema, NslKddEncodesTo122Dimensions) {
    const auto s = nslkdd_schema();
    EXPECT_EQ(s.features.size(), 41u);
    EXPECT_EQ(s.continuous_count(), 38u);
    EXPECT_EQ(s.encoded_dim(), 122u);
    EXPECT_TRUE(s.label_rule.is_anomaly("normal"));
    EXPECT_FALSE(s.label_rule.is_anomaly("neptune"));
}

TEST(Schema, TextRoundTrip) {
    const auto s = nslkdd_schema();
    const auto back = RecordSchema::from_text(s.to_text());
    EXPECT_EQ(back, s);
    EXPECT_EQ(back.hash(), s.hash());
}

TEST(Schema, ShippedFileMatchesBuiltIn) {
    const auto shipped = RecordSchema::load(std::string(SOMDAGMM_SOURCE_DIR) + "/data/schemas/nsl-kdd.schema");
    EXPECT_EQ(shipped, nslkdd_schema());
}

TEST(Schema, HashIgnoresLabelRuleButNotVocabulary) {
    auto a = toy_schema();
    auto b = a;
    b.label_rule = {LabelRule::Kind::inlier_labels, {"ok"}};
    EXPECT_EQ(a.hash(), b.hash());
    b.features[1].vocabulary.push_back("sctp");
    EXPECT_NE(a.hash(), b.hash());
}

TEST(Schema, RejectsMalformedText) {
    EXPECT_THROW(RecordSchema::from_text("continuous a\n"), DataError);
    EXPECT_THROW(RecordSchema::from_text("somdagmm-schema 2\n"), DataError);
    EXPECT_THROW(RecordSchema::from_text("somdagmm-schema 1\nanomaly_labels x\ncontinuous a\ncontinuous a\n"),
                 DataError);
    EXPECT_THROW(RecordSchema::from_text("somdagmm-schema 1\nanomaly_labels x\ncategorical c\n"), DataError);
    EXPECT_THROW(RecordSchema::from_text("somdagmm-schema 1\ncontinuous a\n"), DataError);
}

TEST(ParseNslKdd, LabelConventionAndTrailingField) {
    TempDir dir;
    const auto schema = nslkdd_schema();
    Rng rng(1);
    const auto path = dir.write("a.txt", nslkdd_line(rng, schema, "neptune", 1.0) +
                                             nslkdd_line(rng, schema, "normal", 1.0));
    const auto r = parse_nslkdd(path, schema);
    ASSERT_EQ(r.records.size(), 2u);
    EXPECT_FALSE(schema.label_rule.is_anomaly(r.records[0].label));
    EXPECT_TRUE(schema.label_rule.is_anomaly(r.records[1].label));
    EXPECT_EQ(r.report.anomalies, 1u);
    EXPECT_EQ(r.report.inliers, 1u);
    EXPECT_EQ(r.records[1].line, 2u);
}

TEST(ParseNslKdd, ShortLineIsALineErrorNotACrash) {
    TempDir dir;
    const auto schema = nslkdd_schema();
    Rng rng(2);
    std::string content;
    for (int i = 0; i < 200; ++i) content += nslkdd_line(rng, schema, "smurf", 1.0);
    content += "0,tcp,http,SF,1,2,3,4,5,6,7,8,9,10,11,12,13,14,15,16,17,18,19,20,21,22,23,24,25,26,27,28,29,30,31,32,33,34,35,normal\n";
    const auto path = dir.write("b.txt", content);
    const auto r = parse_nslkdd(path, schema, {0.01});
    EXPECT_EQ(r.records.size(), 200u);
    ASSERT_EQ(r.report.issues.size(), 1u);
    EXPECT_EQ(r.report.issues[0].line, 201u);
    EXPECT_NE(r.report.issues[0].message.find("found 40"), std::string::npos);
    EXPECT_NE(r.report.to_json().find("\"bad_lines\": 1"), std::string::npos);
}

TEST(ParseNslKdd, BadNumericFieldCountsAndRatioIsFatal) {
    TempDir dir;
    const auto schema = nslkdd_schema();
    Rng rng(3);
    auto bad = nslkdd_line(rng, schema, "normal", 1.0);
    bad.replace(0, bad.find(','), "abc");
    const auto path = dir.write("c.txt", nslkdd_line(rng, schema, "normal", 1.0) + bad);
    EXPECT_THROW(parse_nslkdd(path, schema), DataError);
    const auto r = parse_nslkdd(path, schema, {0.5});
    EXPECT_EQ(r.records.size(), 1u);
    EXPECT_NE(r.report.issues[0].message.find("duration"), std::string::npos);
}

TEST(ParseNslKdd, EmptyOrMissingInput) {
    TempDir dir;
    EXPECT_THROW(parse_nslkdd(dir.write("e.txt", "\n\n"), nslkdd_schema()), DataError);
    EXPECT_THROW(parse_nslkdd(dir.file("missing.txt"), nslkdd_schema()), DataError);
}

TEST(ParseCsv, HeaderColumnsByName) {
    TempDir dir;
    const auto path = dir.write("t.csv", "y,extra,label,proto,x\n2.5,zz,ok,udp,1\n3.5,zz,bad.,tcp,2\n");
    const auto r = parse_records(path, toy_schema());
    ASSERT_EQ(r.records.size(), 2u);
    EXPECT_EQ(std::get<double>(r.records[0].values[0]), 1.0);
    EXPECT_EQ(std::get<std::string>(r.records[0].values[1]), "udp");
    EXPECT_EQ(std::get<double>(r.records[0].values[2]), 2.5);
    EXPECT_EQ(r.records[1].label, "bad");
    EXPECT_THROW(parse_csv(dir.write("u.csv", "x,label\n1,ok\n"), toy_schema()), DataError);
}

TEST(FitTransform, MinMaxAndOneHot) {
    const auto s = toy_schema();
    const auto r = fit_transform({rec(0, "tcp", 7), rec(5, "udp", 7), rec(10, "icmp", 7)}, s);
    const Matrix expected{{0.0, 1, 0, 0, 0.0}, {0.5, 0, 1, 0, 0.0}, {1.0, 0, 0, 1, 0.0}};
    EXPECT_EQ(r.dataset.features, expected);  // constant y maps to 0
    EXPECT_EQ(r.stats.encoded_dim(), 5u);
}

TEST(FitTransform, NslKddDimensionIs122) {
    TempDir dir;
    const auto schema = nslkdd_schema();
    Rng rng(4);
    std::string content;
    for (int i = 0; i < 20; ++i) content += nslkdd_line(rng, schema, i % 3 ? "neptune" : "normal", 2.0);
    const auto parsed = parse_nslkdd(dir.write("n.txt", content), schema);
    const auto r = fit_transform(parsed.records, schema);
    EXPECT_EQ(r.dataset.features.cols(), 122u);
    for (std::size_t i = 0; i < r.dataset.size(); ++i) {
        double hot = 0.0;
        for (std::size_t c = 1; c < 1 + 3 + 70 + 11; ++c) hot += r.dataset.features(i, c);
        EXPECT_EQ(hot, 3.0);  // one hot per categorical group
    }
}

TEST(FitTransform, UnknownCategoryPolicies) {
    const auto s = toy_schema();
    const auto st = fit_stats({rec(0, "tcp", 0), rec(1, "udp", 1)}, s);
    TransformReport rep;
    const auto ds = transform({rec(0.5, "sctp", 0.5)}, s, st, UnknownCategoryPolicy::warn_zeros, &rep);
    EXPECT_EQ(ds.features, (Matrix{{0.5, 0, 0, 0, 0.5}}));
    EXPECT_EQ(rep.unknown_categories, 1u);
    EXPECT_THROW(transform({rec(0.5, "sctp", 0.5)}, s, st, UnknownCategoryPolicy::reject), DataError);
    EXPECT_EQ(parse_unknown_policy("warn-zeros"), UnknownCategoryPolicy::warn_zeros);
    EXPECT_THROW(parse_unknown_policy("ignore"), InvalidArgument);
}

TEST(FitTransform, IdempotentAndTestValuesClipped) {
    const auto s = toy_schema();
    Rng rng(5);
    std::vector<RawRecord> train, test;
    for (int i = 0; i < 50; ++i) train.push_back(rec(rng.uniform(0, 10), "tcp", rng.uniform(-3, 3)));
    for (int i = 0; i < 50; ++i) test.push_back(rec(rng.uniform(-20, 30), "udp", rng.uniform(-9, 9)));
    const auto fit = fit_transform(train, s);
    const auto again = transform(train, s, fit.stats);
    EXPECT_LE(max_abs_diff(fit.dataset.features, again.features), 1e-15);
    TransformReport rep;
    const auto t = transform(test, s, fit.stats, UnknownCategoryPolicy::warn_zeros, &rep);
    for (double v : t.features.data()) {
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, 1.0);
    }
    EXPECT_GT(rep.clipped_values, 0u);
}

TEST(FitTransform, StatsBoundToSchemaHash) {
    auto s = toy_schema();
    const auto st = fit_stats({rec(0, "tcp", 0)}, s);
    s.features[1].vocabulary.push_back("sctp");
    EXPECT_THROW(transform({rec(0, "tcp", 0)}, s, st), DataError);
}

TEST(SplitIdeal, ArithmeticOfTheRule) {
    const auto s = split_ideal(flags(10, 3), 7);
    EXPECT_EQ(s.train.size(), 5u);
    EXPECT_EQ(s.test.size(), 8u);
    for (auto i : s.train) EXPECT_LT(i, 10u);
    for (std::size_t a = 10; a < 13; ++a) EXPECT_TRUE(std::count(s.test.begin(), s.test.end(), a));
}

TEST(SplitIdeal, SeededPartition) {
    Rng rng(6);
    for (int t = 0; t < 50; ++t) {
        std::vector<std::uint8_t> f(20 + rng.uniform_index(200));
        for (auto& v : f) v = rng.uniform() < 0.3;
        f[0] = 0;
        f[1] = 0;
        f[2] = 1;
        const auto a = split_ideal(f, t);
        const auto b = split_ideal(f, t);
        EXPECT_EQ(a.train, b.train);
        EXPECT_EQ(a.test, b.test);
        std::set<std::size_t> all(a.train.begin(), a.train.end());
        for (auto i : a.test) EXPECT_TRUE(all.insert(i).second);
        EXPECT_EQ(all.size(), f.size());
        for (auto i : a.train) EXPECT_EQ(f[i], 0);
    }
}

TEST(SplitIdeal, NeedsTwoInliers) {
    EXPECT_THROW(split_ideal(flags(1, 5), 0), DataError);
}

TEST(Contamination, RatioZeroIsIdentity) {
    Rng rng(7);
    const Matrix train = random_matrix(rng, 30, 4);
    const auto out = mix_contamination(train, random_matrix(rng, 5, 4), 0.0, 1);
    EXPECT_EQ(out.features(), train);
    EXPECT_EQ(out.audit_anomaly_count(), 0u);
}

TEST(Contamination, OnePercentOf990) {
    EXPECT_EQ(contamination_count(990, 0.01), 10u);
    Rng rng(8);
    const auto out = mix_contamination(random_matrix(rng, 990, 2), random_matrix(rng, 50, 2), 0.01, 3);
    EXPECT_EQ(out.size(), 1000u);
    EXPECT_EQ(out.audit_anomaly_count(), 10u);
}

TEST(Contamination, FractionOfFinalSetHoldsForManySizes) {
    for (std::size_t n = 1; n < 3000; n += 37)
        for (double r : {0.01, 0.05, 0.1, 0.25, 0.49}) {
            const auto a = contamination_count(n, r);
            EXPECT_EQ(static_cast<double>(a), std::round(r * static_cast<double>(n + a))) << n << ' ' << r;
        }
    EXPECT_THROW(contamination_count(10, 0.5), InvalidArgument);
    EXPECT_THROW(contamination_count(10, -0.1), InvalidArgument);
}

TEST(Contamination, InsufficientPool) {
    Rng rng(9);
    EXPECT_THROW(mix_contamination(random_matrix(rng, 100, 2), random_matrix(rng, 3, 2), 0.1, 0), DataError);
}

TEST(SplitMixed, PoolDisjointFromTest) {
    const auto f = flags(400, 200);
    const auto s = split_mixed(f, 0.1, 4);
    EXPECT_EQ(s.train.size(), 200u);
    EXPECT_EQ(s.pool.size(), contamination_count(200, 0.1));
    std::set<std::size_t> test(s.test.begin(), s.test.end());
    for (auto p : s.pool) {
        EXPECT_EQ(f[p], 1);
        EXPECT_EQ(test.count(p), 0u);
    }
    EXPECT_EQ(s.train.size() + s.pool.size() + s.test.size(), f.size());
}

TEST(Subsample, SeededAndOrderPreserving) {
    std::vector<int> v(100);
    for (int i = 0; i < 100; ++i) v[i] = i;
    const auto a = subsample(v, 10, 5);
    EXPECT_EQ(a, subsample(v, 10, 5));
    EXPECT_TRUE(std::is_sorted(a.begin(), a.end()));
    EXPECT_EQ(subsample(v, 500, 5), v);
}
