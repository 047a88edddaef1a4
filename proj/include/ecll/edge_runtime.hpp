#pragma once

// Edge node: routes samples to deployed task models, detects unknown tasks,
// buffers unseen and labeled samples for upload and decides when to ask the
// cloud for retraining. Never talks to the cloud itself.

#include "ecll/domain.hpp"
#include "ecll/error.hpp"
#include "ecll/knowledge_base.hpp"
#include "ecll/learners.hpp"
#include "ecll/lifelong_job.hpp"
#include "ecll/task_mining.hpp"

#include <deque>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace ecll {

/// The bucketed key when it is in the snapshot's task map, nullopt (unknown) otherwise.
inline std::optional<TaskKey> allocate_task(const DeploySnapshot& s, const TaskAttributes& attrs)
{
    if (auto why = s.space.schema.check_attributes(attrs)) {
        fail(ErrorCode::schema_mismatch, *why);
    }
    auto key = task_key_for(attrs, s.space.bucketing);
    if (s.tasks.count(key) == 0) {
        return std::nullopt;
    }
    return key;
}

enum class RouteKind { known, similar, fallback };

inline std::string_view to_string(RouteKind r)
{
    switch (r) {
    case RouteKind::known: return "known";
    case RouteKind::similar: return "similar";
    case RouteKind::fallback: return "fallback";
    }
    return "known";
}

struct Prediction {
    Label label;
    RouteKind route = RouteKind::fallback;
    TaskKey key;               // empty for fallback
    double similarity = 0.0;   // 1 for known
    std::uint64_t snapshot_version = 0;
};

struct EdgeConfig {
    double similarity_threshold = 0.75; // sigma
    std::size_t unseen_cap = 10000;
};

struct EdgeCounters {
    std::uint64_t inferences = 0;
    std::uint64_t known_hits = 0;
    std::uint64_t unknown_hits = 0;
    std::uint64_t similar_hits = 0;
    std::uint64_t fallback_hits = 0;
    std::uint64_t no_model_errors = 0;
    std::uint64_t triggers_fired = 0;
    std::uint64_t unseen_dropped = 0;
    std::uint64_t feedback_accepted = 0;
    std::uint64_t feedback_rejected = 0;
    std::uint64_t snapshots_applied = 0;
    std::uint64_t snapshots_stale = 0;

    bool operator==(const EdgeCounters&) const = default;

    json to_json() const
    {
        return json{{"inferences", inferences},       {"known_hits", known_hits},
                    {"unknown_hits", unknown_hits},   {"similar_hits", similar_hits},
                    {"fallback_hits", fallback_hits}, {"no_model_errors", no_model_errors},
                    {"triggers_fired", triggers_fired}, {"unseen_dropped", unseen_dropped},
                    {"feedback_accepted", feedback_accepted}, {"feedback_rejected", feedback_rejected},
                    {"snapshots_applied", snapshots_applied}, {"snapshots_stale", snapshots_stale}};
    }
};

struct FeedbackResult {
    std::size_t accepted = 0;
    std::vector<std::pair<std::size_t, std::string>> rejected; // (index in input, reason)
};

struct TriggerDecision {
    bool fire = false;
    std::string reason; // "count-threshold" when firing
};

struct UploadBatch {
    std::vector<Sample> labeled;
    std::vector<Sample> unseen;
};

class EdgeRuntime {
public:
    explicit EdgeRuntime(EdgeConfig cfg = {}) : cfg_(cfg)
    {
        if (!(cfg_.similarity_threshold >= 0.0 && cfg_.similarity_threshold <= 1.0)) {
            fail(ErrorCode::invalid_config, "similarity threshold must be in [0,1]");
        }
        if (cfg_.unseen_cap == 0) {
            fail(ErrorCode::invalid_config, "unseen buffer cap must be >= 1");
        }
    }

    const EdgeConfig& config() const { return cfg_; }

    /// Installs `s` only when it is strictly newer than the active snapshot.
    bool apply_snapshot(std::shared_ptr<const DeploySnapshot> s)
    {
        std::lock_guard lock(mu_);
        if (active_ && s->version <= active_->version) {
            ++counters_.snapshots_stale;
            return false;
        }
        if (active_ && !(active_->space == s->space)) {
            fail(ErrorCode::schema_mismatch, "snapshot task space differs from the active one");
        }
        active_ = std::move(s);
        ++counters_.snapshots_applied;
        return true;
    }

    bool apply_snapshot(DeploySnapshot s) { return apply_snapshot(std::make_shared<const DeploySnapshot>(std::move(s))); }

    std::shared_ptr<const DeploySnapshot> active() const
    {
        std::lock_guard lock(mu_);
        return active_;
    }

    std::uint64_t active_version() const
    {
        std::lock_guard lock(mu_);
        return active_ ? active_->version : 0;
    }

    /// Known key -> its model. Unknown -> most similar task at or above the
    /// threshold, else the fallback. Unknown samples are buffered for upload.
    Prediction infer(const Sample& sample)
    {
        std::shared_ptr<const DeploySnapshot> snap;
        {
            std::lock_guard lock(mu_);
            snap = active_;
            if (!snap) {
                ++counters_.no_model_errors;
                fail(ErrorCode::no_model, "edge has no deployed snapshot");
            }
        }
        const auto& schema = snap->space.schema;
        if (sample.features.size() != schema.feature_count()) {
            fail(ErrorCode::feature_mismatch, "expected " + std::to_string(schema.feature_count()) +
                                                  " features, got " + std::to_string(sample.features.size()));
        }
        for (double v : sample.features) {
            if (!std::isfinite(v)) {
                fail(ErrorCode::feature_mismatch, "feature values must be finite");
            }
        }
        const auto bucketed = [&] {
            if (auto why = schema.check_attributes(sample.attributes)) {
                fail(ErrorCode::schema_mismatch, *why);
            }
            return bucket_attributes(sample.attributes, snap->space.bucketing);
        }();
        const auto key = make_task_key(bucketed);

        Prediction p;
        p.snapshot_version = snap->version;
        const ModelArtifact* model = nullptr;
        if (auto it = snap->tasks.find(key); it != snap->tasks.end()) {
            p.route = RouteKind::known;
            p.key = key;
            p.similarity = 1.0;
            model = it->second.model.get();
        } else {
            double best = -1.0;
            const std::pair<const TaskKey, DeploySnapshot::Entry>* best_entry = nullptr;
            for (const auto& entry : snap->tasks) { // key order: first maximum wins ties
                const double sim = task_similarity(bucketed, entry.second.attributes, snap->space.bucketing);
                if (sim > best) {
                    best = sim;
                    best_entry = &entry;
                }
            }
            if (best_entry && best > 0.0 && best >= cfg_.similarity_threshold) {
                p.route = RouteKind::similar;
                p.key = best_entry->first;
                p.similarity = best;
                model = best_entry->second.model.get();
            } else if (snap->fallback) {
                p.route = RouteKind::fallback;
                model = snap->fallback.get();
            }
        }
        if (model) {
            p.label = predict(*model, sample.features);
        }

        std::lock_guard lock(mu_);
        ++counters_.inferences;
        if (p.route == RouteKind::known && model) {
            ++counters_.known_hits;
            return p;
        }
        ++counters_.unknown_hits;
        Sample unseen = sample;
        unseen.label.reset();
        unseen_.push_back(std::move(unseen));
        if (unseen_.size() > cfg_.unseen_cap) {
            unseen_.pop_front();
            ++counters_.unseen_dropped;
        }
        if (!model) {
            ++counters_.no_model_errors;
            fail(ErrorCode::no_model, "no similar task and no fallback model for task '" + key.str() + "'");
        }
        ++(p.route == RouteKind::similar ? counters_.similar_hits : counters_.fallback_hits);
        return p;
    }

    /// Buffers labeled, schema-conformant samples; rejects the rest one by one.
    FeedbackResult ingest_feedback(const std::vector<Sample>& samples, const DatasetSchema& schema)
    {
        FeedbackResult r;
        std::vector<Sample> ok;
        for (std::size_t i = 0; i < samples.size(); ++i) {
            if (!samples[i].label) {
                r.rejected.emplace_back(i, "unlabeled");
            } else if (auto why = schema.check(samples[i])) {
                r.rejected.emplace_back(i, *why);
            } else {
                ok.push_back(samples[i]);
            }
        }
        r.accepted = ok.size();
        std::lock_guard lock(mu_);
        feedback_.insert(feedback_.end(), std::make_move_iterator(ok.begin()), std::make_move_iterator(ok.end()));
        counters_.feedback_accepted += r.accepted;
        counters_.feedback_rejected += r.rejected.size();
        return r;
    }

    /// Checks against the active snapshot's schema.
    FeedbackResult ingest_feedback(const std::vector<Sample>& samples)
    {
        const auto snap = active();
        if (!snap) {
            fail(ErrorCode::no_model, "edge has no deployed snapshot to validate feedback against");
        }
        return ingest_feedback(samples, snap->space.schema);
    }

    TriggerDecision should_trigger(const TriggerPolicy& policy) const
    {
        std::lock_guard lock(mu_);
        if (feedback_.size() >= policy.unseen_threshold && !feedback_.empty()) {
            return {true, "count-threshold"};
        }
        return {false, ""};
    }

    void note_trigger()
    {
        std::lock_guard lock(mu_);
        ++counters_.triggers_fired;
    }

    /// Takes and clears both buffers in one step.
    UploadBatch drain_for_upload()
    {
        std::lock_guard lock(mu_);
        UploadBatch b;
        b.labeled = std::move(feedback_);
        b.unseen.assign(std::make_move_iterator(unseen_.begin()), std::make_move_iterator(unseen_.end()));
        feedback_.clear();
        unseen_.clear();
        return b;
    }

    std::size_t feedback_size() const
    {
        std::lock_guard lock(mu_);
        return feedback_.size();
    }

    std::size_t unseen_size() const
    {
        std::lock_guard lock(mu_);
        return unseen_.size();
    }

    EdgeCounters counters() const
    {
        std::lock_guard lock(mu_);
        return counters_;
    }

    json status() const
    {
        std::lock_guard lock(mu_);
        json j = counters_.to_json();
        j["snapshot_version"] = active_ ? active_->version : 0;
        j["feedback_buffer"] = feedback_.size();
        j["unseen_buffer"] = unseen_.size();
        return j;
    }

private:
    EdgeConfig cfg_;
    mutable std::mutex mu_;
    std::shared_ptr<const DeploySnapshot> active_;
    std::vector<Sample> feedback_;
    std::deque<Sample> unseen_;
    EdgeCounters counters_;
};

} // namespace ecll
