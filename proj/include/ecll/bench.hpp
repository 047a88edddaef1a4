#pragma once

// Benchmark harness: synthetic label-shift data, the closed / incremental /
// lifelong comparison and its report files.

#include "ecll/domain.hpp"
#include "ecll/edge_runtime.hpp"
#include "ecll/error.hpp"
#include "ecll/knowledge_base.hpp"
#include "ecll/learners.hpp"
#include "ecll/lifelong_job.hpp"
#include "ecll/rng.hpp"
#include "ecll/task_mining.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace ecll {

struct FeatureRange {
    std::string name;
    double min = 0.0;
    double max = 1.0;
};

/// One task: fixed attributes, labels by thresholds on feature 0.
/// Region r (number of thresholds strictly below x0) gets region_classes[r].
struct SyntheticTask {
    std::vector<AttributeValue> attributes;
    std::vector<double> thresholds;
    std::vector<std::string> region_classes;
    double noise = 0.0;
    std::size_t n_samples = 0;
    std::vector<std::optional<std::pair<double, double>>> ranges; // per-feature override, may be empty
};

struct SyntheticSpec {
    std::vector<FeatureRange> features;
    std::string label = "label";
    std::vector<std::string> classes;
    std::vector<AttributeColumn> attributes;
    std::vector<SyntheticTask> tasks;
    std::uint64_t seed = 0;

    DatasetSchema schema() const
    {
        DatasetSchema s;
        for (const auto& f : features) {
            s.features.push_back(f.name);
        }
        s.label.name = label;
        s.label.classes = classes;
        s.attributes = attributes;
        s.validate();
        return s;
    }

    std::pair<double, double> range(const SyntheticTask& t, std::size_t f) const
    {
        if (f < t.ranges.size() && t.ranges[f]) {
            return *t.ranges[f];
        }
        return {features[f].min, features[f].max};
    }

    void validate() const
    {
        const auto s = schema();
        if (features.empty()) {
            fail(ErrorCode::invalid_config, "synthetic spec needs at least one feature");
        }
        for (const auto& f : features) {
            if (!(std::isfinite(f.min) && std::isfinite(f.max) && f.min < f.max)) {
                fail(ErrorCode::invalid_config, "feature '" + f.name + "' needs finite min < max");
            }
        }
        if (tasks.empty()) {
            fail(ErrorCode::invalid_config, "synthetic spec needs at least one task");
        }
        for (std::size_t i = 0; i < tasks.size(); ++i) {
            const auto& t = tasks[i];
            const auto where = "task " + std::to_string(i);
            if (auto why = s.check_attributes(TaskAttributes{t.attributes})) {
                fail(ErrorCode::invalid_config, where + ": " + *why);
            }
            for (std::size_t j = 0; j < t.thresholds.size(); ++j) {
                if (!std::isfinite(t.thresholds[j]) || (j > 0 && !(t.thresholds[j - 1] < t.thresholds[j]))) {
                    fail(ErrorCode::invalid_config, where + ": thresholds must be finite and strictly increasing");
                }
            }
            if (t.region_classes.size() != t.thresholds.size() + 1) {
                fail(ErrorCode::invalid_config, where + ": need one class per region (thresholds + 1)");
            }
            for (const auto& c : t.region_classes) {
                if (!s.label.class_index(c)) {
                    fail(ErrorCode::invalid_config, where + ": unknown class '" + c + "'");
                }
            }
            if (!(t.noise >= 0.0 && t.noise < 0.5)) {
                fail(ErrorCode::invalid_config, where + ": noise must be in [0, 0.5)");
            }
            if (t.ranges.size() > features.size()) {
                fail(ErrorCode::invalid_config, where + ": more ranges than features");
            }
            for (std::size_t f = 0; f < t.ranges.size(); ++f) {
                if (t.ranges[f] && !(t.ranges[f]->first < t.ranges[f]->second)) {
                    fail(ErrorCode::invalid_config, where + ": range must have min < max");
                }
            }
        }
    }

    static SyntheticSpec from_json(const json& j)
    {
        SyntheticSpec s;
        try {
            for (const auto& f : j.at("features")) {
                s.features.push_back({f.at("name").get<std::string>(), f.at("min").get<double>(), f.at("max").get<double>()});
            }
            s.label = j.value("label", std::string("label"));
            s.classes = j.at("classes").get<std::vector<std::string>>();
            for (const auto& a : j.value("attributes", json::array())) {
                const auto kind = a.value("kind", std::string("categorical"));
                if (kind != "categorical" && kind != "numeric") {
                    fail(ErrorCode::invalid_config, "attribute kind must be categorical or numeric");
                }
                s.attributes.push_back({a.at("name").get<std::string>(),
                                        kind == "numeric" ? AttributeKind::numeric : AttributeKind::categorical,
                                        a.value("edges", std::vector<double>{})});
            }
            for (const auto& t : j.at("tasks")) {
                SyntheticTask task;
                task.attributes = attributes_from_json(t.value("attributes", json::array())).values;
                task.thresholds = t.value("thresholds", std::vector<double>{});
                task.region_classes = t.at("region_classes").get<std::vector<std::string>>();
                task.noise = t.value("noise", 0.0);
                task.n_samples = t.at("n_samples").get<std::size_t>();
                for (const auto& r : t.value("ranges", json::array())) {
                    if (r.is_null()) {
                        task.ranges.emplace_back();
                    } else {
                        task.ranges.emplace_back(std::pair{r.at(0).get<double>(), r.at(1).get<double>()});
                    }
                }
                s.tasks.push_back(std::move(task));
            }
            s.seed = j.value("seed", std::uint64_t{0});
        } catch (const json::exception& e) {
            fail(ErrorCode::invalid_config, std::string("synthetic spec: ") + e.what());
        }
        s.validate();
        return s;
    }
};

/// Class of feature value x0 under `t`, before noise.
inline std::string synthetic_rule(const SyntheticTask& t, double x0)
{
    const auto region = std::lower_bound(t.thresholds.begin(), t.thresholds.end(), x0) - t.thresholds.begin();
    return t.region_classes[static_cast<std::size_t>(region)];
}

/// Tasks in spec order; each label is flipped to a uniformly chosen other
/// class with probability `noise`, independently.
inline Dataset gen_synthetic(const SyntheticSpec& spec)
{
    spec.validate();
    const auto schema = std::make_shared<const DatasetSchema>(spec.schema());
    Dataset d(schema);
    Rng rng(spec.seed);
    const auto k = spec.classes.size();
    for (const auto& t : spec.tasks) {
        for (std::size_t i = 0; i < t.n_samples; ++i) {
            FeatureVector f;
            for (std::size_t j = 0; j < spec.features.size(); ++j) {
                const auto [lo, hi] = spec.range(t, j);
                f.push_back(rng.uniform(lo, hi));
            }
            auto cls = *schema->label.class_index(synthetic_rule(t, f[0]));
            if (rng.bernoulli(t.noise)) {
                const auto other = rng.index(k - 1);
                cls = other >= cls ? other + 1 : other;
            }
            d.add(Sample{std::move(f), Label{cls}, TaskAttributes{t.attributes}});
        }
    }
    return d;
}

inline double relative_improvement(double a, double b)
{
    if (!(b > 0.0)) {
        fail(ErrorCode::zero_baseline, "relative improvement needs a positive baseline accuracy");
    }
    return 100.0 * (a - b) / b;
}

struct TaskScore {
    TaskKey key;
    std::uint64_t n = 0;
    std::uint64_t correct = 0;
    double accuracy = 0.0;

    bool operator==(const TaskScore&) const = default;
};

struct MethodResult {
    std::string method;
    std::vector<TaskScore> tasks; // key order
    double overall = 0.0;        // sum(accuracy * n) / sum(n) over tasks in key order
    std::uint64_t n = 0;

    bool operator==(const MethodResult&) const = default;

    const TaskScore* find(const TaskKey& k) const
    {
        for (const auto& t : tasks) {
            if (t.key == k) {
                return &t;
            }
        }
        return nullptr;
    }
};

inline MethodResult make_method_result(std::string method, std::map<TaskKey, TaskScore> scores)
{
    MethodResult r;
    r.method = std::move(method);
    double weighted = 0.0;
    for (auto& [key, s] : scores) {
        s.accuracy = s.n ? static_cast<double>(s.correct) / static_cast<double>(s.n) : 0.0;
        weighted += s.accuracy * static_cast<double>(s.n);
        r.n += s.n;
        r.tasks.push_back(s);
    }
    if (r.n == 0) {
        fail(ErrorCode::empty_dataset, "no test samples to score");
    }
    r.overall = weighted / static_cast<double>(r.n);
    return r;
}

struct BenchResult {
    std::vector<MethodResult> methods; // closed, incremental, lifelong

    bool operator==(const BenchResult&) const = default;

    const MethodResult& method(const std::string& name) const
    {
        for (const auto& m : methods) {
            if (m.method == name) {
                return m;
            }
        }
        fail(ErrorCode::key_not_found, "no method '" + name + "' in bench result");
    }

    /// Per-task lifelong improvement over the incremental baseline, best first;
    /// tasks whose baseline scored 0 come last without a value.
    std::vector<std::pair<TaskKey, std::optional<double>>> improvements(const std::string& baseline = "incremental") const
    {
        const auto& life = method("lifelong");
        const auto& base = method(baseline);
        std::vector<std::pair<TaskKey, std::optional<double>>> out;
        for (const auto& t : life.tasks) {
            const auto* b = base.find(t.key);
            std::optional<double> v;
            if (b && b->accuracy > 0.0) {
                v = relative_improvement(t.accuracy, b->accuracy);
            }
            out.emplace_back(t.key, v);
        }
        std::stable_sort(out.begin(), out.end(), [](const auto& x, const auto& y) {
            if (x.second.has_value() != y.second.has_value()) {
                return x.second.has_value();
            }
            return x.second && *x.second > *y.second;
        });
        return out;
    }

    json to_json() const
    {
        json j;
        j["methods"] = json::array();
        for (const auto& m : methods) {
            json tasks = json::array();
            for (const auto& t : m.tasks) {
                tasks.push_back({{"key", t.key.str()}, {"n", t.n}, {"correct", t.correct}, {"accuracy", t.accuracy}});
            }
            j["methods"].push_back({{"method", m.method}, {"overall", m.overall}, {"n", m.n}, {"tasks", tasks}});
        }
        const auto& life = method("lifelong").overall;
        for (const char* base : {"closed", "incremental"}) {
            const auto b = method(base).overall;
            j[std::string("improvement_vs_") + base + "_pct"] = b > 0 ? json(relative_improvement(life, b)) : json();
        }
        return j;
    }

    static BenchResult from_json(const json& j)
    {
        BenchResult r;
        try {
            for (const auto& m : j.at("methods")) {
                MethodResult mr;
                mr.method = m.at("method").get<std::string>();
                mr.overall = m.at("overall").get<double>();
                mr.n = m.at("n").get<std::uint64_t>();
                for (const auto& t : m.at("tasks")) {
                    mr.tasks.push_back({TaskKey{t.at("key").get<std::string>()}, t.at("n").get<std::uint64_t>(),
                                        t.at("correct").get<std::uint64_t>(), t.at("accuracy").get<double>()});
                }
                r.methods.push_back(std::move(mr));
            }
        } catch (const json::exception& e) {
            fail(ErrorCode::invalid_config, std::string("bench summary: ") + e.what());
        }
        return r;
    }
};

namespace detail {

inline std::map<TaskKey, TaskScore> score_parts(const ModelArtifact& m, const TaskPartition& test)
{
    std::map<TaskKey, TaskScore> out;
    for (const auto& [key, part] : test) {
        const auto e = evaluate(m, part.data);
        out[key] = TaskScore{key, e.n, e.correct, 0.0};
    }
    return out;
}

inline TaskPartition test_partition(const Dataset& test, const BucketingConfig& b)
{
    if (test.empty()) {
        fail(ErrorCode::empty_dataset, "test set is empty");
    }
    test.require_labeled("test set");
    return partition_by_task(test, b);
}

} // namespace detail

/// One model on all training data, blind to task attributes.
inline MethodResult baseline_closed(const Dataset& train, const Dataset& test, const BucketingConfig& b,
                                    const EstimatorSpec& learner, std::uint64_t seed)
{
    const auto parts = detail::test_partition(test, b);
    const auto model = fit(learner, train, seed);
    return make_method_result("closed", detail::score_parts(model, parts));
}

struct StreamTask {
    TaskKey key;
    Dataset train;
    Dataset test;
};

/// Test-then-train over the task stream with one model refit on everything
/// seen so far. The first task has no prior model, so it is fit first.
inline MethodResult baseline_incremental(const std::vector<StreamTask>& stream, const EstimatorSpec& learner,
                                         std::uint64_t seed)
{
    if (stream.empty()) {
        fail(ErrorCode::empty_dataset, "task stream is empty");
    }
    std::map<TaskKey, TaskScore> scores;
    Dataset pool(stream.front().train.schema_ptr());
    std::optional<ModelArtifact> model;
    for (const auto& t : stream) {
        if (!model) {
            pool.append(t.train);
            model = fit(learner, pool, seed);
        }
        if (!t.test.empty()) {
            const auto e = evaluate(*model, t.test);
            scores[t.key] = TaskScore{t.key, e.n, e.correct, 0.0};
        }
        if (&t != &stream.front()) {
            pool.append(t.train);
            model = fit(learner, pool, seed);
        }
    }
    return make_method_result("incremental", std::move(scores));
}

struct LifelongOutcome {
    MethodResult result;
    DeploySnapshot snapshot;
    std::map<std::string, std::uint64_t> routes; // known / similar / fallback counts
};

/// Train, gate on the test partition, deploy, then score every test sample
/// through an edge runtime holding the snapshot.
inline LifelongOutcome run_lifelong_bench(const Dataset& train, const Dataset& test, const JobConfig& cfg,
                                          const EdgeConfig& edge_cfg = {})
{
    KnowledgeBase kb;
    LifelongJob job(cfg, kb);
    job.run_train(train);
    (void)detail::test_partition(test, cfg.bucketing_for(train.schema()));
    job.run_eval(test);
    LifelongOutcome out;
    out.snapshot = job.run_deploy();
    EdgeRuntime edge(edge_cfg);
    edge.apply_snapshot(out.snapshot);
    std::map<TaskKey, TaskScore> scores;
    for (const auto& s : test.samples()) {
        Sample q = s;
        q.label.reset();
        const auto p = edge.infer(q);
        ++out.routes[std::string(to_string(p.route))];
        const auto key = task_key_for(s.attributes, out.snapshot.space.bucketing);
        auto& sc = scores[key];
        sc.key = key;
        ++sc.n;
        if (test.schema().label.is_classification() ? class_of(p.label) == class_of(*s.label)
                                                    : std::abs(value_of(p.label) - value_of(*s.label)) <= 0.5) {
            ++sc.correct;
        }
    }
    out.result = make_method_result("lifelong", std::move(scores));
    return out;
}

struct BenchConfig {
    JobConfig job;             // learner, bucketing and gate for every arm
    double train_fraction = 0.7;
    std::uint64_t seed = 42;   // split and fits
};

struct BenchRun {
    BenchResult result;
    LifelongOutcome lifelong;
    Dataset train;
    Dataset test;
    std::vector<TaskKey> order; // incremental stream order
};

/// Splits `data`, then runs the three arms. The incremental stream follows
/// each task's first appearance in `data`.
inline BenchRun run_bench(const Dataset& data, BenchConfig cfg)
{
    cfg.job.seed = cfg.seed;
    auto [train, test] = split_dataset(data, cfg.train_fraction, cfg.seed);
    const auto b = cfg.job.bucketing_for(data.schema());

    BenchRun run{{}, {}, train, test, {}};
    std::map<TaskKey, StreamTask> by_key;
    for (const auto& s : data.samples()) {
        const auto key = task_key_for(s.attributes, b);
        if (by_key.emplace(key, StreamTask{key, Dataset(data.schema_ptr()), Dataset(data.schema_ptr())}).second) {
            run.order.push_back(key);
        }
    }
    for (const auto& s : train.samples()) {
        by_key.at(task_key_for(s.attributes, b)).train.add(s);
    }
    for (const auto& s : test.samples()) {
        by_key.at(task_key_for(s.attributes, b)).test.add(s);
    }
    std::vector<StreamTask> stream;
    for (const auto& k : run.order) {
        stream.push_back(std::move(by_key.at(k)));
    }

    run.result.methods.push_back(baseline_closed(train, test, b, cfg.job.learner, cfg.seed));
    run.result.methods.push_back(baseline_incremental(stream, cfg.job.learner, cfg.seed));
    run.lifelong = run_lifelong_bench(train, test, cfg.job);
    run.result.methods.push_back(run.lifelong.result);
    return run;
}

/// accuracy.csv (task_key,method,accuracy,n), improvement.csv
/// (task_key,improvement_pct; lifelong over incremental, best first) and summary.json.
inline void emit_report(const BenchResult& r, const fs::path& dir)
{
    std::error_code ec;
    fs::create_directories(dir, ec);
    auto put = [&](const std::string& name, const std::string& text) {
        std::ofstream out(dir / name, std::ios::binary);
        out << text;
        out.flush();
        if (!out) {
            fail(ErrorCode::io_failure, "cannot write '" + (dir / name).string() + "'");
        }
    };
    std::string acc = "task_key,method,accuracy,n\n";
    const auto& keys = r.method("lifelong").tasks;
    for (const auto& k : keys) {
        for (const auto& m : r.methods) {
            if (const auto* t = m.find(k.key)) {
                acc += csv::quote(k.key.str()) + "," + m.method + "," + format_double(t->accuracy) + "," +
                       std::to_string(t->n) + "\n";
            }
        }
    }
    std::string imp = "task_key,improvement_pct\n";
    for (const auto& [key, v] : r.improvements()) {
        imp += csv::quote(key.str()) + "," + (v ? format_double(*v) : "") + "\n";
    }
    put("accuracy.csv", acc);
    put("improvement.csv", imp);
    put("summary.json", r.to_json().dump(2) + "\n");
}

} // namespace ecll
