#include "ecll/lifelong_job.hpp"
#include "plugin_learner.hpp"
#include "test_support.hpp"

#include <gtest/gtest.h>

namespace ecll {
namespace {

using testing::make_sample;
using testing::TempDir;
using testing::threshold_task;

std::shared_ptr<const DatasetSchema> line() { return std::make_shared<const DatasetSchema>(testing::line_schema()); }

Dataset cities(const std::vector<std::pair<std::string, double>>& spec, std::size_t n, std::uint64_t seed)
{
    const auto schema = line();
    Rng rng(seed);
    Dataset d(schema);
    for (const auto& [city, threshold] : spec) {
        d.append(threshold_task(schema, city, threshold, n, rng));
    }
    return d;
}

/// `counts[i]` samples of class i for `city`, x = 0.
Dataset labeled(const std::string& city, std::vector<std::size_t> counts)
{
    Dataset d(line());
    for (std::size_t c = 0; c < counts.size(); ++c) {
        for (std::size_t i = 0; i < counts[c]; ++i) {
            d.add(make_sample({0.0}, c, {city}));
        }
    }
    return d;
}

JobConfig majority_cfg(double delta = 0.0, std::size_t q = 1)
{
    JobConfig c;
    c.learner = EstimatorSpec{"majority", {}};
    c.eval_policy = {delta, q};
    return c;
}

TEST(JobConfig, JsonRoundTripAndValidation)
{
    const auto c = JobConfig::from_json(json::parse(R"({
        "learner": {"kind": "logistic", "hyperparameters": {"epochs": 50}},
        "bucketing": {"band": [10, 20]},
        "eval_policy": {"min_accuracy": 0.6, "min_eval_samples": 3},
        "transfer": {"min_samples": 20, "cap": 100},
        "trigger": {"unseen_threshold": 10},
        "fallback_enabled": false,
        "seed": 9})"));
    EXPECT_EQ(c.learner.kind, "logistic");
    EXPECT_EQ(c.eval_policy.min_eval_samples, 3u);
    EXPECT_EQ(c.transfer.cap, 100u);
    EXPECT_FALSE(c.fallback_enabled);
    const auto again = JobConfig::from_json(c.to_json());
    EXPECT_EQ(again.to_json(), c.to_json());

    const auto defaults = JobConfig::from_json(json::object());
    EXPECT_EQ(defaults.eval_policy.min_accuracy, 0.0);
    EXPECT_EQ(defaults.eval_policy.min_eval_samples, 1u);
    EXPECT_TRUE(defaults.fallback_enabled);
    EXPECT_EQ(defaults.learner.kind, "tree");

    for (const char* bad : {R"({"eval_policy": {"min_accuracy": 1.5}})", R"({"eval_policy": {"min_eval_samples": 0}})",
                            R"({"trigger": {"unseen_threshold": 0}})", R"({"learner": {"kind": "svm"}})",
                            R"({"learner": {"kind": "tree", "hyperparameters": {"depth": 2}}})", R"({"sed": 1})"}) {
        EXPECT_THROW(JobConfig::from_json(json::parse(bad)), Error) << bad;
    }
}

TEST(LifelongJob, TrainTwoCitiesAddsTwoRecordsAndFallback)
{
    KnowledgeBase kb;
    LifelongJob job(JobConfig{}, kb);
    const auto records = job.run_train(cities({{"Athens", 20}, {"Tokyo", 30}}, 60, 1));
    ASSERT_EQ(records.size(), 2u);
    EXPECT_EQ(kb.version(), 3u);
    EXPECT_NE(kb.fallback(), nullptr);
    EXPECT_EQ(job.phase(), JobPhase::evaluating);
    const auto athens = kb.lookup(TaskKey{"Athens"});
    ASSERT_NE(athens, nullptr);
    EXPECT_EQ(athens->status, TaskStatus::trained);
    EXPECT_EQ(athens->stats.count, 60u);
    EXPECT_TRUE(athens->relations.empty()); // categorical mismatch only
}

TEST(LifelongJob, RetrainWithSameDataKeepsModelBytes)
{
    const auto data = cities({{"Athens", 20}, {"Tokyo", 30}}, 50, 2);
    KnowledgeBase kb;
    LifelongJob job(JobConfig{}, kb);
    job.run_train(data);
    job.run_eval(data);
    job.run_deploy();
    const auto before = kb.model_bytes(TaskKey{"Athens"});
    const auto v = kb.lookup(TaskKey{"Athens"})->version;
    job.run_train(data);
    EXPECT_GT(kb.lookup(TaskKey{"Athens"})->version, v);
    EXPECT_EQ(kb.model_bytes(TaskKey{"Athens"}), before);
}

TEST(LifelongJob, SingleTaskModelEqualsFallback)
{
    KnowledgeBase kb;
    LifelongJob job(JobConfig{}, kb);
    job.run_train(cities({{"Athens", 20}}, 80, 3));
    EXPECT_EQ(kb.model_bytes(TaskKey{"Athens"}), serialize_model(*kb.fallback()));
}

TEST(LifelongJob, EvalGateThresholds)
{
    KnowledgeBase kb;
    LifelongJob job(majority_cfg(0.8), kb);
    job.run_train(labeled("A", {10}));
    const auto report = job.run_eval(labeled("A", {9, 1}));
    ASSERT_EQ(report.tasks.size(), 1u);
    EXPECT_DOUBLE_EQ(report.tasks[0].metrics->accuracy, 0.9);
    EXPECT_TRUE(report.tasks[0].passed);
    EXPECT_EQ(kb.lookup(TaskKey{"A"})->status, TaskStatus::deployable);
    ASSERT_TRUE(report.fallback);
}

TEST(LifelongJob, TaskWithoutEvalSamplesFailsTooFew)
{
    KnowledgeBase kb;
    LifelongJob job(majority_cfg(0.0, 1), kb);
    Dataset train = labeled("A", {5});
    train.append(labeled("B", {5}));
    job.run_train(train);
    const auto report = job.run_eval(labeled("A", {3}));
    ASSERT_EQ(report.tasks.size(), 2u);
    EXPECT_TRUE(report.tasks[0].passed);
    EXPECT_FALSE(report.tasks[1].passed);
    EXPECT_EQ(report.tasks[1].reason, "too-few-eval-samples");
    EXPECT_EQ(report.tasks[1].n, 0u);
    EXPECT_EQ(kb.lookup(TaskKey{"B"})->status, TaskStatus::eval_failed);
}

TEST(LifelongJob, VacuousGatePassesEveryEvaluatedTask)
{
    KnowledgeBase kb;
    LifelongJob job(majority_cfg(0.0, 1), kb);
    Dataset d = labeled("A", {5, 1});
    d.append(labeled("B", {0, 4}));
    d.append(labeled("C", {2, 2}));
    job.run_train(d);
    Dataset wrong = labeled("A", {0, 3});
    wrong.append(labeled("B", {3}));
    wrong.append(labeled("C", {0, 1}));
    for (const auto& t : job.run_eval(wrong).tasks) {
        EXPECT_TRUE(t.passed) << t.key.str();
    }
}

TEST(LifelongJob, DeployShipsPassingTasksAndFallback)
{
    KnowledgeBase kb;
    LifelongJob job(majority_cfg(0.8), kb);
    Dataset train = labeled("A", {4});
    train.append(labeled("B", {4}));
    train.append(labeled("C", {4}));
    job.run_train(train);
    Dataset eval = labeled("A", {2});
    eval.append(labeled("B", {2}));
    eval.append(labeled("C", {0, 2}));
    job.run_eval(eval);
    const auto snap = job.run_deploy();
    EXPECT_EQ(snap.tasks.size(), 2u);
    EXPECT_EQ(snap.tasks.count(TaskKey{"C"}), 0u);
    EXPECT_NE(snap.fallback, nullptr);
    EXPECT_EQ(job.state().snapshot_version, snap.version);
    EXPECT_EQ(job.phase(), JobPhase::deployed);
}

TEST(LifelongJob, AllFailingTasks)
{
    {
        KnowledgeBase kb;
        LifelongJob job(majority_cfg(1.0), kb);
        job.run_train(labeled("A", {4}));
        job.run_eval(labeled("A", {0, 3}));
        const auto snap = job.run_deploy();
        EXPECT_TRUE(snap.tasks.empty());
        EXPECT_NE(snap.fallback, nullptr);
    }
    {
        auto cfg = majority_cfg(1.0);
        cfg.fallback_enabled = false;
        KnowledgeBase kb;
        LifelongJob job(cfg, kb);
        job.run_train(labeled("A", {4}));
        job.run_eval(labeled("A", {0, 3}));
        try {
            job.run_deploy();
            FAIL();
        } catch (const Error& e) {
            EXPECT_EQ(e.code(), ErrorCode::nothing_deployable);
        }
    }
}

TEST(LifelongJob, PhaseMachineRejectsOutOfOrderCalls)
{
    KnowledgeBase kb;
    LifelongJob job(majority_cfg(), kb);
    const auto d = labeled("A", {3, 2});
    auto expect_illegal = [](auto&& f) {
        try {
            f();
            ADD_FAILURE() << "accepted";
        } catch (const Error& e) {
            EXPECT_EQ(e.code(), ErrorCode::illegal_phase);
        }
    };
    expect_illegal([&] { job.run_eval(d); });
    expect_illegal([&] { job.run_deploy(); });
    expect_illegal([&] { job.run_update_cycle(d); });
    job.run_train(d);
    expect_illegal([&] { job.run_train(d); });
    expect_illegal([&] { job.run_deploy(); });
    job.run_eval(d);
    expect_illegal([&] { job.run_eval(d); });
    job.run_deploy();
    job.run_update_cycle(d);
    const auto& h = job.state().history;
    ASSERT_EQ(h.size(), 8u);
    EXPECT_EQ(h.front().from, JobPhase::idle);
    EXPECT_EQ(h.back().to, JobPhase::deployed);
    EXPECT_EQ(JobState::from_json(job.state().to_json()), job.state());

    // resuming from persisted state continues the same machine
    LifelongJob resumed(majority_cfg(), kb, JobState::from_json(job.state().to_json()));
    EXPECT_EQ(resumed.phase(), JobPhase::deployed);
    expect_illegal([&] { resumed.run_eval(d); });

    auto broken = job.state().to_json();
    broken["history"][2]["to"] = "Deployed";
    EXPECT_THROW(JobState::from_json(broken), Error);
}

TEST(LifelongJob, UpdateCycleLearnsNewTask)
{
    KnowledgeBase kb;
    LifelongJob job(JobConfig{}, kb);
    job.run_cycle(cities({{"Athens", 20}}, 100, 4));
    EXPECT_EQ(kb.keys(), std::vector<TaskKey>{TaskKey{"Athens"}});
    const auto snap = job.run_update_cycle(cities({{"Tokyo", 30}}, 100, 5));
    EXPECT_EQ(kb.keys(), (std::vector<TaskKey>{TaskKey{"Athens"}, TaskKey{"Tokyo"}}));
    EXPECT_EQ(snap.tasks.count(TaskKey{"Tokyo"}), 1u);
    EXPECT_EQ(snap.tasks.count(TaskKey{"Athens"}), 1u);
}

TEST(LifelongJob, UpdateCycleLeavesAbsentTasksAlone)
{
    KnowledgeBase kb;
    LifelongJob job(JobConfig{}, kb);
    job.run_cycle(cities({{"Athens", 20}, {"Tokyo", 30}}, 100, 6));
    const auto tokyo = kb.lookup(TaskKey{"Tokyo"});
    const auto athens_version = kb.lookup(TaskKey{"Athens"})->version;
    job.run_update_cycle(cities({{"Athens", 22}}, 100, 7));
    EXPECT_GT(kb.lookup(TaskKey{"Athens"})->version, athens_version);
    EXPECT_EQ(kb.lookup(TaskKey{"Tokyo"}), tokyo);
}

TEST(LifelongJob, IdenticalUpdateCyclesGiveIdenticalPredictions)
{
    const auto base = cities({{"Athens", 20}}, 80, 8);
    const auto update = cities({{"Athens", 25}, {"Tokyo", 12}}, 80, 9);
    auto run = [&] {
        KnowledgeBase kb;
        LifelongJob job(JobConfig{}, kb);
        job.run_cycle(base);
        job.run_update_cycle(update);
        return job.run_update_cycle(update);
    };
    const auto a = run();
    const auto b = run();
    EXPECT_EQ(a.serialize(), b.serialize());
    for (double x = 0; x < 40; x += 0.25) {
        for (const auto& [key, e] : a.tasks) {
            EXPECT_EQ(predict(*e.model, std::vector<double>{x}), predict(*b.tasks.at(key).model, std::vector<double>{x}));
        }
    }
}

TEST(LifelongJob, SmallTaskBorrowsFromSimilarTasks)
{
    DatasetSchema s = testing::line_schema();
    s.attributes = {AttributeColumn{"band", AttributeKind::numeric, {10, 20, 30}}};
    const auto schema = std::make_shared<const DatasetSchema>(s);
    Dataset d(schema);
    for (int i = 0; i < 30; ++i) d.add(make_sample({1.0 * i}, std::size_t{1}, {5.0}));
    for (int i = 0; i < 3; ++i) d.add(make_sample({1.0 * i}, std::size_t{0}, {15.0}));
    JobConfig cfg = majority_cfg();
    cfg.transfer = {20, 1000};
    KnowledgeBase kb;
    LifelongJob job(cfg, kb);
    job.run_train(d);
    const auto small = kb.lookup(TaskKey{"1"});
    ASSERT_NE(small, nullptr);
    EXPECT_EQ(small->stats.count, 3u);                                   // own data only
    EXPECT_EQ(predict(*small->model, std::vector<double>{0}), Label{std::size_t{1}}); // borrowed majority
    ASSERT_EQ(small->relations.size(), 1u);
    EXPECT_EQ(small->relations[0].key, TaskKey{"0"});
}

TEST(LifelongJob, PluginLearnerRunsFullPipeline)
{
    testing::register_tagger();
    JobConfig cfg;
    cfg.learner = EstimatorSpec{"tagger", {{"salt", 3}}};
    TempDir tmp;
    auto kb = KnowledgeBase::open(tmp / "kb");
    LifelongJob job(cfg, kb);
    const auto data = cities({{"Athens", 20}, {"Tokyo", 30}, {"Lima", 10}}, 40, 10);
    const auto cycle = job.run_cycle(data);
    EXPECT_EQ(cycle.trained.size(), 3u);
    for (const auto& [key, e] : cycle.snapshot.tasks) {
        EXPECT_EQ(e.model->spec.kind, "tagger");
    }
    const auto bytes = cycle.snapshot.serialize();
    const auto back = DeploySnapshot::deserialize(bytes);
    EXPECT_EQ(back.serialize(), bytes);
    const auto reopened = KnowledgeBase::open(tmp / "kb");
    EXPECT_EQ(reopened.content_digest(), kb.content_digest());
}

TEST(LifelongJob, EndToEndSnapshotsAreByteIdentical)
{
    const auto data = cities({{"Athens", 20}, {"Tokyo", 30}, {"Lima", 10}}, 70, 11);
    std::vector<Bytes> runs;
    for (int i = 0; i < 2; ++i) {
        for (const char* kind : {"tree", "logistic", "majority"}) {
            JobConfig cfg;
            cfg.learner = EstimatorSpec{kind, {}};
            cfg.seed = 5;
            KnowledgeBase kb;
            LifelongJob job(cfg, kb);
            runs.push_back(job.run_cycle(data).snapshot.serialize());
        }
    }
    for (std::size_t i = 0; i < 3; ++i) {
        EXPECT_EQ(runs[i], runs[i + 3]);
    }
}

TEST(LifelongJob, GateSoundnessSmallScale)
{
    Rng rng(1234);
    for (int run = 0; run < 150; ++run) {
        JobConfig cfg = majority_cfg(rng.uniform(0, 1), 1 + rng.index(4));
        cfg.fallback_enabled = rng.bernoulli(0.7);
        KnowledgeBase kb;
        LifelongJob job(cfg, kb);
        Dataset d(line());
        for (std::size_t t = 0; t < 1 + rng.index(5); ++t) {
            const std::string city(1, static_cast<char>('A' + t));
            for (std::size_t i = 0; i < 2 + rng.index(12); ++i) {
                d.add(make_sample({rng.unit()}, std::size_t(rng.bernoulli(0.3 + 0.1 * t)), {city}));
            }
        }
        try {
            const auto snap = job.run_cycle(d).snapshot;
            for (const auto& [key, e] : snap.tasks) {
                const auto rec = kb.lookup(key);
                ASSERT_NE(rec, nullptr);
                EXPECT_EQ(rec->status, TaskStatus::deployable);
                EXPECT_EQ(serialize_model(*e.model), kb.model_bytes(key));
            }
        } catch (const Error& e) {
            EXPECT_EQ(e.code(), ErrorCode::nothing_deployable);
            EXPECT_FALSE(cfg.fallback_enabled);
        }
    }
}

} // namespace
} // namespace ecll
