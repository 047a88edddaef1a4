#include "ecll/learners.hpp"
#include "oracles.hpp"
#include "test_support.hpp"

#include <gtest/gtest.h>

#include <numeric>

namespace ecll {
namespace {

using testing::make_sample;

std::shared_ptr<const DatasetSchema> line(std::size_t classes = 2, std::size_t features = 1)
{
    DatasetSchema s = testing::line_schema(classes);
    s.features.clear();
    for (std::size_t i = 0; i < features; ++i) {
        s.features.push_back("x" + std::to_string(i));
    }
    return std::make_shared<const DatasetSchema>(s);
}

Dataset labeled(const std::shared_ptr<const DatasetSchema>& schema, const std::vector<std::pair<double, std::size_t>>& rows)
{
    Dataset d(schema);
    for (const auto& [x, y] : rows) {
        d.add(make_sample({x}, y, {std::string("A")}));
    }
    return d;
}

Dataset random_classification(Rng& rng, std::size_t n, std::size_t classes, std::size_t features, bool integer_grid)
{
    Dataset d(line(classes, features));
    for (std::size_t i = 0; i < n; ++i) {
        FeatureVector f;
        for (std::size_t j = 0; j < features; ++j) {
            f.push_back(integer_grid ? static_cast<double>(rng.index(8)) : rng.uniform(-10, 10));
        }
        // labels loosely follow the first feature so splits are informative
        std::size_t y = f[0] > 0 ? 1 % classes : 0;
        if (rng.bernoulli(0.35)) {
            y = rng.index(classes);
        }
        d.add(make_sample(std::move(f), y, {std::string("A")}));
    }
    return d;
}

EstimatorSpec spec(std::string kind, std::map<std::string, double> h = {})
{
    return EstimatorSpec{std::move(kind), std::move(h)};
}

TEST(Majority, PredictsMostFrequentClass)
{
    const auto d = labeled(line(), {{0, 0}, {1, 0}, {2, 1}});
    const auto m = fit(spec("majority"), d, 1);
    EXPECT_EQ(class_of(predict(m, FeatureVector{123.0})), 0u);
    EXPECT_EQ(m.trained_on, 3u);
    EXPECT_EQ(m.class_histogram, (std::vector<std::uint64_t>{2, 1}));
}

TEST(Majority, TiesResolveToLowestClass)
{
    const auto d = labeled(line(3), {{0, 2}, {1, 1}});
    EXPECT_EQ(class_of(predict(fit(spec("majority"), d, 1), FeatureVector{0.0})), 1u);
}

TEST(Majority, DegenerateDistribution)
{
    const auto d = labeled(line(3), {{0, 2}, {1, 2}, {1, 0}});
    const auto p = predict_proba(fit(spec("majority"), d, 1), FeatureVector{5.0});
    EXPECT_EQ(p, (std::vector<double>{0.0, 0.0, 1.0}));
}

TEST(Majority, TrainAccuracyEqualsMaxClassFrequency)
{
    Rng rng(5);
    for (int t = 0; t < 20; ++t) {
        const auto d = random_classification(rng, 5 + rng.index(40), 3, 1, false);
        const auto m = fit(spec("majority"), d, 1);
        const auto h = m.class_histogram;
        const double freq = static_cast<double>(*std::max_element(h.begin(), h.end())) / static_cast<double>(d.size());
        EXPECT_EQ(evaluate(m, d).accuracy, freq);
    }
}

ModelArtifact separable_logistic()
{
    const auto d = labeled(line(), {{0, 0}, {10, 1}});
    return fit(spec("logistic", {{"epochs", 500}, {"learning_rate", 0.1}}), d, 1);
}

TEST(Logistic, SeparatesTwoPoints)
{
    const auto m = separable_logistic();
    EXPECT_EQ(class_of(predict(m, FeatureVector{0.0})), 0u);
    EXPECT_EQ(class_of(predict(m, FeatureVector{10.0})), 1u);
    EXPECT_GT(predict_proba(m, FeatureVector{0.0})[0], 0.5);
}

TEST(Logistic, MidpointMatchesIndependentSoftmax)
{
    const auto m = separable_logistic();
    const auto& lm = dynamic_cast<const LogisticModel&>(*m.model);
    const std::vector<double> x{5.0};
    const auto p = oracle::softmax_scores(lm.weights, lm.bias, lm.mean, lm.scale, x);
    const auto got = class_of(predict(m, x));
    EXPECT_GE(p[got], *std::max_element(p.begin(), p.end()) - 1e-12);
    const auto mine = predict_proba(m, x);
    for (std::size_t c = 0; c < p.size(); ++c) {
        EXPECT_NEAR(mine[c], p[c], 1e-12);
    }
}

TEST(Logistic, LossNeverIncreases)
{
    Rng rng(9);
    for (int t = 0; t < 25; ++t) {
        const auto d = random_classification(rng, 10 + rng.index(60), 2 + rng.index(3), 1 + rng.index(3), false);
        std::map<std::string, double> h{{"epochs", 60.0},
                                        {"learning_rate", std::pow(10.0, rng.uniform(-2, 2))},
                                        {"l2", rng.bernoulli(0.5) ? rng.uniform(0, 0.5) : 0.0}};
        std::vector<double> trace;
        LogisticLearner::train_model(h, d, &trace);
        ASSERT_GE(trace.size(), 2u);
        for (std::size_t e = 1; e < trace.size(); ++e) {
            EXPECT_LE(trace[e], trace[e - 1]) << "epoch " << e;
        }
    }
}

TEST(Logistic, ProbabilitiesSumToOne)
{
    Rng rng(13);
    for (int t = 0; t < 20; ++t) {
        const auto d = random_classification(rng, 30, 4, 2, false);
        const auto m = fit(spec("logistic", {{"epochs", 30}}), d, 1);
        for (int q = 0; q < 20; ++q) {
            const auto p = predict_proba(m, FeatureVector{rng.uniform(-100, 100), rng.uniform(-100, 100)});
            double sum = 0;
            for (double v : p) {
                EXPECT_GE(v, 0.0);
                EXPECT_LE(v, 1.0);
                sum += v;
            }
            EXPECT_NEAR(sum, 1.0, 1e-9);
        }
    }
}

TEST(Tree, DepthOneThresholdSeparatesSides)
{
    Rng rng(1);
    std::vector<std::pair<double, std::size_t>> rows;
    double max_a = -1e9, min_b = 1e9;
    for (int i = 0; i < 20; ++i) {
        const double x = rng.uniform(0, 10);
        const std::size_t y = x < 5 ? 0 : 1;
        rows.emplace_back(x, y);
        (y == 0 ? max_a : min_b) = y == 0 ? std::max(max_a, x) : std::min(min_b, x);
    }
    const auto d = labeled(line(), rows);
    const auto m = fit(spec("tree", {{"max_depth", 1}}), d, 1);
    const auto& tree = dynamic_cast<const TreeModel&>(*m.model);
    ASSERT_FALSE(tree.nodes[0].leaf);
    EXPECT_GT(tree.nodes[0].threshold, max_a);
    EXPECT_LT(tree.nodes[0].threshold, min_b);

    // brute-force oracle agrees
    const auto cands = oracle::all_gini_splits(d, 1);
    const auto best = std::min_element(cands.begin(), cands.end(), [](auto& a, auto& b) {
        return a.weighted_impurity < b.weighted_impurity;
    });
    EXPECT_EQ(best->threshold, tree.nodes[0].threshold);
    EXPECT_EQ(best->weighted_impurity, 0.0);
}

// Shared with the acceptance suite through the same generator shape.
TEST(Tree, RootSplitMatchesExhaustiveGiniSearch)
{
    Rng rng(2024);
    int checked = 0;
    for (int t = 0; t < 400; ++t) {
        const auto n = 2 + rng.index(49);
        const auto d = random_classification(rng, n, 2 + rng.index(3), 1 + rng.index(3), rng.bernoulli(0.5));
        const auto min_leaf = 1 + rng.index(3);
        const auto got = TreeLearner::best_split(d, std::vector<std::size_t>([&] {
                                                     std::vector<std::size_t> v(d.size());
                                                     std::iota(v.begin(), v.end(), 0u);
                                                     return v;
                                                 }()),
                                                 min_leaf);
        const auto cands = oracle::all_gini_splits(d, min_leaf);
        const double parent = oracle::parent_gini(d);
        double best = std::numeric_limits<double>::infinity();
        for (const auto& c : cands) best = std::min(best, c.weighted_impurity);
        if (cands.empty() || best > parent - 1e-9) {
            EXPECT_FALSE(got.has_value()) << "trial " << t;
            continue;
        }
        ASSERT_TRUE(got.has_value()) << "trial " << t;
        // first candidate (feature order, then threshold order) attaining the minimum
        const auto first = std::find_if(cands.begin(), cands.end(),
                                        [&](const auto& c) { return c.weighted_impurity <= best + 1e-9; });
        EXPECT_EQ(got->feature, first->feature) << "trial " << t;
        EXPECT_EQ(got->threshold, first->threshold) << "trial " << t;
        ++checked;
    }
    EXPECT_GT(checked, 300);
}

TEST(Tree, RegressionUsesMeanLeaves)
{
    DatasetSchema s = testing::line_schema();
    s.label.regression = true;
    s.label.classes.clear();
    Dataset d(s);
    for (int i = 0; i < 10; ++i) {
        d.add(make_sample({static_cast<double>(i)}, i < 5 ? 1.0 : 3.0 + (i % 2), {std::string("A")}));
    }
    const auto m = fit(spec("tree", {{"max_depth", 1}}), d, 1);
    EXPECT_DOUBLE_EQ(value_of(predict(m, FeatureVector{0.0})), 1.0);
    EXPECT_DOUBLE_EQ(value_of(predict(m, FeatureVector{9.0})), 3.6);
    EXPECT_THROW(predict_proba(m, FeatureVector{0.0}), Error);
    const auto e = evaluate(m, d);
    EXPECT_TRUE(e.rmse.has_value());
    EXPECT_TRUE(e.confusion.empty());
    EXPECT_THROW(fit(spec("logistic"), d, 1), Error);
}

TEST(AllLearners, ProbaArgmaxEqualsPredict)
{
    Rng rng(77);
    for (const char* kind : {"majority", "logistic", "tree"}) {
        for (int t = 0; t < 15; ++t) {
            const auto d = random_classification(rng, 5 + rng.index(50), 2 + rng.index(3), 2, rng.bernoulli(0.5));
            const auto m = fit(spec(kind, std::string(kind) == "logistic" ? std::map<std::string, double>{{"epochs", 40}}
                                                                          : std::map<std::string, double>{}),
                               d, 1);
            for (int q = 0; q < 30; ++q) {
                const FeatureVector f{rng.uniform(-12, 12), rng.uniform(-12, 12)};
                const auto p = predict_proba(m, f);
                const auto arg = static_cast<std::size_t>(std::max_element(p.begin(), p.end()) - p.begin());
                EXPECT_EQ(arg, class_of(predict(m, f))) << kind;
            }
        }
    }
}

TEST(Evaluate, CountsAccuracy)
{
    const auto train = labeled(line(), {{0, 0}, {0, 0}, {0, 1}});
    const auto m = fit(spec("majority"), train, 1);
    const auto e = evaluate(m, train);
    EXPECT_DOUBLE_EQ(e.accuracy, 2.0 / 3.0);
    EXPECT_EQ(e.n, 3u);
    EXPECT_EQ(e.confusion, (std::vector<std::vector<std::uint64_t>>{{2, 0}, {1, 0}}));
}

TEST(Evaluate, MatchesSecondCountingPass)
{
    Rng rng(21);
    for (int t = 0; t < 30; ++t) {
        const auto train = random_classification(rng, 40, 3, 2, false);
        const auto test = random_classification(rng, 1 + rng.index(50), 3, 2, false);
        const auto m = fit(spec("tree", {{"max_depth", 1 + static_cast<double>(rng.index(4))}}), train, 1);
        const auto e = evaluate(m, test);
        double hits = 0;
        std::uint64_t total = 0;
        for (const auto& s : test.samples()) {
            hits += class_of(m.model->predict(s.features)) == std::get<std::size_t>(*s.label) ? 1.0 : 0.0;
        }
        for (const auto& row : e.confusion) total += std::accumulate(row.begin(), row.end(), std::uint64_t{0});
        EXPECT_EQ(total, e.n);
        EXPECT_EQ(e.accuracy, hits / static_cast<double>(test.size()));
    }
}

TEST(Evaluate, RejectsEmptyOrUnlabeled)
{
    const auto train = labeled(line(), {{0, 0}});
    const auto m = fit(spec("majority"), train, 1);
    EXPECT_THROW(evaluate(m, Dataset(line())), Error);
    Dataset unl(line());
    unl.add(make_sample({1}, std::nullopt, {std::string("A")}));
    EXPECT_THROW(evaluate(m, unl), Error);
}

TEST(Fit, ContractErrors)
{
    auto code = [](auto fn) {
        try {
            fn();
        } catch (const Error& e) {
            return e.code();
        }
        return ErrorCode::invalid_argument;
    };
    const auto d = labeled(line(), {{0, 0}, {1, 1}});
    EXPECT_EQ(code([&] { fit(spec("majority"), Dataset(line()), 1); }), ErrorCode::empty_dataset);
    Dataset unl = d;
    unl.add(make_sample({1}, std::nullopt, {std::string("A")}));
    EXPECT_EQ(code([&] { fit(spec("majority"), unl, 1); }), ErrorCode::unlabeled_sample);
    EXPECT_EQ(code([&] { fit(spec("forest"), d, 1); }), ErrorCode::unknown_kind);
    EXPECT_EQ(code([&] { fit(spec("tree", {{"depth", 2}}), d, 1); }), ErrorCode::unknown_hyperparameter);
    EXPECT_EQ(code([&] { fit(spec("tree", {{"max_depth", 1.5}}), d, 1); }), ErrorCode::bad_hyperparameter);
    EXPECT_EQ(code([&] { fit(spec("logistic", {{"learning_rate", 0}}), d, 1); }), ErrorCode::bad_hyperparameter);
    EXPECT_EQ(code([&] { fit(spec("logistic", {{"l2", -1}}), d, 1); }), ErrorCode::bad_hyperparameter);
    EXPECT_EQ(code([&] { fit(spec("logistic", {{"epochs", 0}}), d, 1); }), ErrorCode::bad_hyperparameter);
    const auto m = fit(spec("majority"), d, 1);
    EXPECT_EQ(code([&] { predict(m, FeatureVector{1.0, 2.0}); }), ErrorCode::feature_mismatch);
}

TEST(Serialization, MajorityRoundTripPredictsIdentically)
{
    Rng rng(4);
    const auto m = fit(spec("majority"), random_classification(rng, 30, 3, 1, false), 1);
    const auto back = deserialize_model(serialize_model(m));
    for (int i = 0; i < 100; ++i) {
        const FeatureVector f{rng.uniform(-1e3, 1e3)};
        EXPECT_EQ(predict(back, f), predict(m, f));
    }
}

TEST(Serialization, LogisticParametersBitIdentical)
{
    Rng rng(8);
    const auto m = fit(spec("logistic", {{"epochs", 50}}), random_classification(rng, 40, 3, 2, false), 3);
    const auto back = deserialize_model(serialize_model(m));
    const auto& a = dynamic_cast<const LogisticModel&>(*m.model);
    const auto& b = dynamic_cast<const LogisticModel&>(*back.model);
    auto bits = [](const std::vector<double>& v) {
        std::vector<std::uint64_t> o;
        for (double x : v) o.push_back(std::bit_cast<std::uint64_t>(x));
        return o;
    };
    EXPECT_EQ(bits(a.weights), bits(b.weights));
    EXPECT_EQ(bits(a.bias), bits(b.bias));
    EXPECT_EQ(bits(a.mean), bits(b.mean));
    EXPECT_EQ(bits(a.scale), bits(b.scale));
    EXPECT_EQ(back.spec, m.spec);
    EXPECT_EQ(back.seed, 3u);
    EXPECT_EQ(serialize_model(back), serialize_model(m));
}

TEST(Serialization, TreeRoundTrip)
{
    Rng rng(10);
    const auto m = fit(spec("tree"), random_classification(rng, 50, 3, 2, false), 1);
    const auto back = deserialize_model(serialize_model(m));
    EXPECT_EQ(dynamic_cast<const TreeModel&>(*back.model).nodes, dynamic_cast<const TreeModel&>(*m.model).nodes);
}

TEST(Serialization, TruncatedPayloadIsCorrupt)
{
    Rng rng(12);
    const auto bytes = serialize_model(fit(spec("tree"), random_classification(rng, 20, 2, 1, false), 1));
    for (std::size_t cut : {std::size_t{0}, std::size_t{3}, std::size_t{11}, bytes.size() / 2, bytes.size() - 1}) {
        try {
            deserialize_model(std::span(bytes).first(cut));
            ADD_FAILURE() << "accepted truncated payload of " << cut << " bytes";
        } catch (const Error& e) {
            EXPECT_EQ(e.code(), ErrorCode::corrupt_payload);
        }
    }
}

TEST(Serialization, UnknownKindIsAForwardCompatError)
{
    Rng rng(14);
    auto bytes = serialize_model(fit(spec("majority"), random_classification(rng, 20, 2, 1, false), 1));
    // kind string starts after magic(4) + version(4) + length(4)
    ASSERT_EQ(std::string(bytes.begin() + 12, bytes.begin() + 20), "majority");
    const std::string fresh = "futurekd";
    std::copy(fresh.begin(), fresh.end(), bytes.begin() + 12);
    bytes.resize(bytes.size() - 4);
    const auto crc = crc32_of(bytes);
    for (int i = 0; i < 4; ++i) bytes.push_back(static_cast<std::uint8_t>(crc >> (8 * i)));
    try {
        deserialize_model(bytes);
        FAIL() << "accepted unknown kind";
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::unknown_kind);
    }
}

TEST(Determinism, FitTwiceGivesIdenticalBytes)
{
    Rng rng(99);
    for (const char* kind : {"majority", "logistic", "tree"}) {
        const auto d = random_classification(rng, 60, 3, 2, false);
        EXPECT_EQ(serialize_model(fit(spec(kind), d, 5)), serialize_model(fit(spec(kind), d, 5))) << kind;
    }
}

} // namespace
} // namespace ecll
