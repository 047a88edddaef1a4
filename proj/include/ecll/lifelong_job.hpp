#pragma once

// Lifelong job: train -> evaluate -> deploy over a knowledge base, and the
// update cycle that folds newly labeled data back into it.

#include "ecll/domain.hpp"
#include "ecll/error.hpp"
#include "ecll/knowledge_base.hpp"
#include "ecll/learners.hpp"
#include "ecll/task_mining.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace ecll {

struct EvalPolicy {
    double min_accuracy = 0.0;          // delta
    std::size_t min_eval_samples = 1;   // q
};

struct TriggerPolicy {
    std::size_t unseen_threshold = 10; // K, compared against the labeled feedback buffer
};

struct JobConfig {
    EstimatorSpec learner{"tree", {{"max_depth", 4}}};
    json bucketing = json::object(); // per-column edge overrides on top of the schema
    EvalPolicy eval_policy;
    TransferParams transfer{0, static_cast<std::size_t>(-1)};
    TriggerPolicy trigger;
    bool fallback_enabled = true;
    std::uint64_t seed = 0;

    BucketingConfig bucketing_for(const DatasetSchema& schema) const
    {
        return BucketingConfig::from_json(schema, bucketing);
    }

    void validate() const
    {
        (void)resolve_spec(learner);
        if (!(eval_policy.min_accuracy >= 0.0 && eval_policy.min_accuracy <= 1.0)) {
            fail(ErrorCode::invalid_config, "eval_policy.min_accuracy must be in [0,1]");
        }
        if (eval_policy.min_eval_samples < 1) {
            fail(ErrorCode::invalid_config, "eval_policy.min_eval_samples must be >= 1");
        }
        if (trigger.unseen_threshold < 1) {
            fail(ErrorCode::invalid_config, "trigger.unseen_threshold must be >= 1");
        }
        if (!bucketing.is_object()) {
            fail(ErrorCode::invalid_config, "bucketing must be an object");
        }
    }

    json to_json() const
    {
        json j;
        j["learner"] = learner.to_json();
        j["bucketing"] = bucketing;
        j["eval_policy"] = {{"min_accuracy", eval_policy.min_accuracy},
                            {"min_eval_samples", eval_policy.min_eval_samples}};
        json transfer_j = {{"min_samples", transfer.min_samples}};
        if (transfer.cap != static_cast<std::size_t>(-1)) {
            transfer_j["cap"] = transfer.cap;
        }
        j["transfer"] = transfer_j;
        j["trigger"] = {{"unseen_threshold", trigger.unseen_threshold}};
        j["fallback_enabled"] = fallback_enabled;
        j["seed"] = seed;
        return j;
    }

    /// Every key is optional; absent keys keep their defaults.
    static JobConfig from_json(const json& j)
    {
        if (!j.is_object()) {
            fail(ErrorCode::invalid_config, "job config must be an object");
        }
        static const std::vector<std::string> known{"learner", "bucketing", "eval_policy", "transfer",
                                                    "trigger", "fallback_enabled", "seed"};
        for (const auto& [k, _] : j.items()) {
            if (std::find(known.begin(), known.end(), k) == known.end()) {
                fail(ErrorCode::invalid_config, "job config: unknown key '" + k + "'");
            }
        }
        JobConfig c;
        try {
            if (j.contains("learner")) {
                c.learner = EstimatorSpec::from_json(j["learner"]);
            }
            if (j.contains("bucketing")) {
                c.bucketing = j["bucketing"];
            }
            if (j.contains("eval_policy")) {
                const auto& e = j["eval_policy"];
                c.eval_policy.min_accuracy = e.value("min_accuracy", c.eval_policy.min_accuracy);
                if (e.contains("min_eval_samples")) {
                    const auto q = e["min_eval_samples"].get<std::int64_t>();
                    if (q < 1) {
                        fail(ErrorCode::invalid_config, "eval_policy.min_eval_samples must be >= 1");
                    }
                    c.eval_policy.min_eval_samples = static_cast<std::size_t>(q);
                }
            }
            if (j.contains("transfer")) {
                const auto& t = j["transfer"];
                c.transfer.min_samples = t.value("min_samples", std::size_t{0});
                if (t.contains("cap")) {
                    c.transfer.cap = t["cap"].get<std::size_t>();
                }
            }
            if (j.contains("trigger")) {
                const auto k = j["trigger"].value("unseen_threshold", std::int64_t{10});
                if (k < 1) {
                    fail(ErrorCode::invalid_config, "trigger.unseen_threshold must be >= 1");
                }
                c.trigger.unseen_threshold = static_cast<std::size_t>(k);
            }
            c.fallback_enabled = j.value("fallback_enabled", true);
            c.seed = j.value("seed", std::uint64_t{0});
        } catch (const json::exception& e) {
            fail(ErrorCode::invalid_config, std::string("job config: ") + e.what());
        }
        c.validate();
        return c;
    }
};

enum class JobPhase { idle, training, evaluating, deploying, deployed };

inline std::string_view to_string(JobPhase p)
{
    switch (p) {
    case JobPhase::idle: return "Idle";
    case JobPhase::training: return "Training";
    case JobPhase::evaluating: return "Evaluating";
    case JobPhase::deploying: return "Deploying";
    case JobPhase::deployed: return "Deployed";
    }
    return "Idle";
}

inline JobPhase parse_phase(std::string_view s)
{
    for (auto p : {JobPhase::idle, JobPhase::training, JobPhase::evaluating, JobPhase::deploying, JobPhase::deployed}) {
        if (to_string(p) == s) {
            return p;
        }
    }
    fail(ErrorCode::invalid_config, "unknown job phase '" + std::string(s) + "'");
}

inline bool legal_transition(JobPhase from, JobPhase to)
{
    switch (from) {
    case JobPhase::idle: return to == JobPhase::training;
    case JobPhase::training: return to == JobPhase::evaluating;
    case JobPhase::evaluating: return to == JobPhase::deploying;
    case JobPhase::deploying: return to == JobPhase::deployed;
    case JobPhase::deployed: return to == JobPhase::training;
    }
    return false;
}

struct PhaseTransition {
    JobPhase from;
    JobPhase to;
    std::uint64_t step; // logical clock, one tick per transition

    bool operator==(const PhaseTransition&) const = default;
};

struct JobState {
    JobPhase phase = JobPhase::idle;
    std::uint64_t snapshot_version = 0;
    std::vector<PhaseTransition> history;

    bool operator==(const JobState&) const = default;

    json to_json() const
    {
        json h = json::array();
        for (const auto& t : history) {
            h.push_back({{"from", to_string(t.from)}, {"to", to_string(t.to)}, {"step", t.step}});
        }
        return json{{"phase", to_string(phase)}, {"snapshot_version", snapshot_version}, {"history", h}};
    }

    /// Rejects histories that are not a legal walk ending in `phase`.
    static JobState from_json(const json& j)
    {
        JobState s;
        try {
            s.phase = parse_phase(j.at("phase").get<std::string>());
            s.snapshot_version = j.at("snapshot_version").get<std::uint64_t>();
            for (const auto& t : j.at("history")) {
                s.history.push_back({parse_phase(t.at("from").get<std::string>()),
                                     parse_phase(t.at("to").get<std::string>()), t.at("step").get<std::uint64_t>()});
            }
        } catch (const json::exception& e) {
            fail(ErrorCode::invalid_config, std::string("job state: ") + e.what());
        }
        JobPhase at = JobPhase::idle;
        for (std::size_t i = 0; i < s.history.size(); ++i) {
            const auto& t = s.history[i];
            if (t.from != at || !legal_transition(t.from, t.to) || t.step != i + 1) {
                fail(ErrorCode::invalid_config, "job state: history is not a legal transition sequence");
            }
            at = t.to;
        }
        if (at != s.phase) {
            fail(ErrorCode::invalid_config, "job state: phase does not match history");
        }
        return s;
    }
};

struct TaskEvalResult {
    TaskKey key;
    std::optional<EvalMetrics> metrics; // absent when there were no eval samples
    std::size_t n = 0;
    bool passed = false;
    std::string reason; // "", "too-few-eval-samples" or "below-min-accuracy"
};

struct EvalReport {
    std::vector<TaskEvalResult> tasks; // key order
    std::optional<EvalMetrics> fallback;

    json to_json() const
    {
        json j;
        j["tasks"] = json::array();
        for (const auto& t : tasks) {
            j["tasks"].push_back({{"key", t.key.str()},
                                  {"n", t.n},
                                  {"passed", t.passed},
                                  {"reason", t.reason},
                                  {"metrics", t.metrics ? t.metrics->to_json() : json()}});
        }
        j["fallback"] = fallback ? fallback->to_json() : json();
        return j;
    }
};

struct CycleResult {
    std::vector<std::shared_ptr<const TaskRecord>> trained;
    EvalReport report;
    DeploySnapshot snapshot;
};

class LifelongJob {
public:
    LifelongJob(JobConfig cfg, KnowledgeBase& kb, JobState state = {})
        : cfg_(std::move(cfg)), kb_(&kb), state_(std::move(state))
    {
        cfg_.validate();
    }

    const JobConfig& config() const { return cfg_; }
    const JobState& state() const { return state_; }
    JobPhase phase() const { return state_.phase; }

    /// Mines `train` into tasks, fits one model per task (small tasks borrow
    /// samples from similar ones) plus the fallback, and upserts everything.
    std::vector<std::shared_ptr<const TaskRecord>> run_train(const Dataset& train)
    {
        require_phase({JobPhase::idle, JobPhase::deployed}, "train");
        if (train.empty()) {
            fail(ErrorCode::empty_dataset, "training set is empty");
        }
        train.require_labeled("training set");
        const auto bucketing = cfg_.bucketing_for(train.schema());
        kb_->bind(TaskSpace{train.schema(), bucketing});
        transition(JobPhase::training);

        const auto partition = mine_tasks(train, bucketing);
        std::vector<TaskRecord> records;
        for (const auto& [key, part] : partition) {
            const auto transfer = sample_transfer(key, partition, bucketing, cfg_.transfer);
            TaskRecord r;
            r.key = key;
            r.attributes = part.attributes;
            r.spec = cfg_.learner;
            r.model = std::make_shared<const ModelArtifact>(fit(cfg_.learner, transfer.augmented, cfg_.seed));
            r.stats = SampleStats::of(part.data);
            r.relations = relations_for(key, part.attributes, partition, bucketing);
            r.status = TaskStatus::trained;
            records.push_back(std::move(r));
        }
        std::optional<ModelArtifact> fallback;
        if (cfg_.fallback_enabled) {
            fallback = fit(cfg_.learner, train, cfg_.seed);
        }
        std::vector<std::shared_ptr<const TaskRecord>> out;
        for (auto& r : records) {
            const auto key = r.key;
            kb_->upsert_task(std::move(r));
            out.push_back(kb_->lookup(key));
        }
        if (fallback) {
            kb_->set_fallback(*fallback);
        }
        transition(JobPhase::evaluating);
        return out;
    }

    /// Evaluates every task still in status `trained` on its own slice of
    /// `eval_set` and gates it; the fallback is scored on the whole set.
    EvalReport run_eval(const Dataset& eval_set)
    {
        require_phase({JobPhase::evaluating}, "eval");
        if (eval_set.empty()) {
            fail(ErrorCode::empty_dataset, "evaluation set is empty");
        }
        eval_set.require_labeled("evaluation set");
        const auto& space = *kb_->space();
        if (eval_set.schema().fingerprint() != space.fingerprint()) {
            fail(ErrorCode::schema_mismatch, "evaluation set schema does not match the knowledge base");
        }
        const auto partition = partition_by_task(eval_set, space.bucketing);
        EvalReport report;
        std::vector<TaskRecord> updates;
        for (const auto& rec : kb_->records()) {
            if (rec->status != TaskStatus::trained) {
                continue;
            }
            TaskEvalResult t;
            t.key = rec->key;
            auto it = partition.find(rec->key);
            if (it != partition.end()) {
                t.metrics = evaluate(*rec->model, it->second.data);
                t.n = it->second.data.size();
            }
            if (t.n < cfg_.eval_policy.min_eval_samples) {
                t.reason = "too-few-eval-samples";
            } else if (t.metrics->accuracy < cfg_.eval_policy.min_accuracy) {
                t.reason = "below-min-accuracy";
            } else {
                t.passed = true;
            }
            TaskRecord next = *rec;
            next.status = t.passed ? TaskStatus::deployable : TaskStatus::eval_failed;
            next.eval = t.metrics;
            updates.push_back(std::move(next));
            report.tasks.push_back(std::move(t));
        }
        if (const auto fb = kb_->fallback()) {
            report.fallback = evaluate(*fb, eval_set);
        }
        for (auto& r : updates) {
            kb_->upsert_task(std::move(r));
        }
        transition(JobPhase::deploying);
        return report;
    }

    DeploySnapshot run_deploy()
    {
        require_phase({JobPhase::deploying}, "deploy");
        auto snap = kb_->snapshot();
        state_.snapshot_version = snap.version;
        transition(JobPhase::deployed);
        return snap;
    }

    /// train on a split of `data`, evaluate on the held-out rest, deploy.
    CycleResult run_cycle(const Dataset& data)
    {
        require_phase({JobPhase::idle, JobPhase::deployed}, "train");
        if (data.empty()) {
            fail(ErrorCode::empty_dataset, "update data is empty");
        }
        data.require_labeled("update data");
        if (data.size() < 2) {
            fail(ErrorCode::empty_dataset, "need at least 2 samples to hold out an evaluation split");
        }
        // 80/20, but always hold out at least one sample
        const double n = static_cast<double>(data.size());
        auto [train, held_out] = split_dataset(data, std::min(0.8, (n - 1.0) / n), cfg_.seed);
        CycleResult r;
        r.trained = run_train(train);
        r.report = run_eval(held_out);
        r.snapshot = run_deploy();
        return r;
    }

    DeploySnapshot run_update_cycle(const Dataset& new_labeled)
    {
        require_phase({JobPhase::deployed}, "update");
        return run_cycle(new_labeled).snapshot;
    }

private:
    void require_phase(std::initializer_list<JobPhase> allowed, std::string_view op) const
    {
        for (auto p : allowed) {
            if (state_.phase == p) {
                return;
            }
        }
        fail(ErrorCode::illegal_phase,
             std::string(op) + " is not allowed in phase " + std::string(to_string(state_.phase)));
    }

    void transition(JobPhase to)
    {
        if (!legal_transition(state_.phase, to)) {
            fail(ErrorCode::illegal_phase, "illegal transition " + std::string(to_string(state_.phase)) + " -> " +
                                               std::string(to_string(to)));
        }
        state_.history.push_back({state_.phase, to, state_.history.size() + 1});
        state_.phase = to;
    }

    /// Positive similarities to the other mined tasks and to stored tasks, by key.
    std::vector<Relation> relations_for(const TaskKey& self, const TaskAttributes& attrs,
                                        const TaskPartition& partition, const BucketingConfig& b) const
    {
        std::map<TaskKey, double> sims;
        for (const auto& [key, part] : partition) {
            if (key != self) {
                sims[key] = task_similarity(attrs, part.attributes, b);
            }
        }
        for (const auto& rec : kb_->records()) {
            if (rec->key != self) {
                sims[rec->key] = task_similarity(attrs, rec->attributes, b);
            }
        }
        std::vector<Relation> out;
        for (const auto& [key, s] : sims) {
            if (s > 0.0) {
                out.push_back({key, s});
            }
        }
        return out;
    }

    JobConfig cfg_;
    KnowledgeBase* kb_;
    JobState state_;
};

} // namespace ecll
