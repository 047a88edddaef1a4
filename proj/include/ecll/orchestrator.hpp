#pragma once

// Discrete-tick edge-cloud simulation. One cloud node owns the knowledge base
// and the lifelong job; edge nodes run EdgeRuntime. Every node pair has an
// uplink and a downlink FIFO that hold messages while the link is down.
//
// Tick order:
//   1. apply the link schedule for this tick
//   2. flush: deliver uplinks (cloud handles), run due training, deliver downlinks
//   3. replay the samples scheduled for this tick through each edge
//   4. edges whose trigger fires drain their buffers and send UploadBatch +
//      TriggerTrain; uplinks that are up are delivered at once and due
//      training runs, so the resulting push lands on the next tick's flush
//
// Handlers are idempotent by message id, so redelivery is harmless.

#include "ecll/domain.hpp"
#include "ecll/edge_runtime.hpp"
#include "ecll/error.hpp"
#include "ecll/knowledge_base.hpp"
#include "ecll/lifelong_job.hpp"

#include <deque>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace ecll {

enum class ReplayMode { infer, feedback, both };

inline ReplayMode parse_replay_mode(std::string_view s)
{
    if (s == "infer") return ReplayMode::infer;
    if (s == "feedback") return ReplayMode::feedback;
    if (s == "both") return ReplayMode::both;
    fail(ErrorCode::invalid_config, "replay mode must be infer, feedback or both, got '" + std::string(s) + "'");
}

struct ReplayBatch {
    std::uint64_t tick = 0;
    std::size_t edge = 0;
    Dataset samples;
    ReplayMode mode = ReplayMode::both;
};

struct LinkChange {
    std::uint64_t tick = 0;
    std::size_t edge = 0;
    bool up = true;
};

struct SimConfig {
    std::size_t edges = 1;
    std::uint64_t max_ticks = 1;
    JobConfig job;
    EdgeConfig edge;
    Dataset initial;
    std::vector<ReplayBatch> replay; // ticks non-decreasing
    std::vector<LinkChange> links;   // ticks non-decreasing
    std::uint64_t training_delay_ticks = 0;
    std::uint64_t train_interval_ticks = 0; // 0: train when due; N: only on multiples of N
    bool duplicate_uploads = false;

    void validate() const
    {
        if (edges < 1) {
            fail(ErrorCode::invalid_config, "simulation needs at least one edge");
        }
        job.validate();
        for (std::size_t i = 0; i < replay.size(); ++i) {
            if (replay[i].edge >= edges) {
                fail(ErrorCode::invalid_config, "replay entry " + std::to_string(i) + " names unknown edge");
            }
            if (i > 0 && replay[i].tick < replay[i - 1].tick) {
                fail(ErrorCode::invalid_config, "replay schedule is not sorted by tick");
            }
            if (!(replay[i].samples.schema() == initial.schema())) {
                fail(ErrorCode::schema_mismatch, "replay entry " + std::to_string(i) + " has a different schema");
            }
        }
        for (std::size_t i = 0; i < links.size(); ++i) {
            if (links[i].edge >= edges) {
                fail(ErrorCode::invalid_config, "link entry " + std::to_string(i) + " names unknown edge");
            }
            if (i > 0 && links[i].tick < links[i - 1].tick) {
                fail(ErrorCode::invalid_config, "link schedule is not sorted by tick");
            }
        }
    }

    /// Paths inside `j` are resolved against `base`. "schema" and "job" may be
    /// inline objects or file names; data entries name CSV files, optionally
    /// with a half-open "rows" range.
    static SimConfig from_json(const json& j, const fs::path& base)
    {
        auto resolve = [&](const json& v, const char* what) -> json {
            if (v.is_string()) {
                return detail::parse_json_text(detail::read_file((base / v.get<std::string>()).string()), what);
            }
            return v;
        };
        auto load_rows = [&](const json& entry, const DatasetSchema& schema) {
            const auto path = (base / detail::json_get<std::string>(entry, "data", "simulation data")).string();
            auto d = load_csv(path, schema);
            if (entry.contains("rows")) {
                const auto r = entry.at("rows").get<std::vector<std::size_t>>();
                if (r.size() != 2 || r[0] > r[1] || r[1] > d.size()) {
                    fail(ErrorCode::invalid_config, "bad rows range for '" + path + "'");
                }
                std::vector<std::size_t> idx;
                for (auto i = r[0]; i < r[1]; ++i) {
                    idx.push_back(i);
                }
                d = d.subset(idx);
            }
            return d;
        };
        SimConfig c;
        try {
            const auto schema = std::make_shared<const DatasetSchema>(
                DatasetSchema::from_json(resolve(j.at("schema"), "schema")));
            c.edges = j.value("edges", std::size_t{1});
            c.max_ticks = detail::json_get<std::uint64_t>(j, "max_ticks", "simulation config");
            c.job = JobConfig::from_json(j.contains("job") ? resolve(j.at("job"), "job config") : json::object());
            if (j.contains("seed")) {
                c.job.seed = j.at("seed").get<std::uint64_t>();
            }
            if (j.contains("edge")) {
                c.edge.similarity_threshold = j["edge"].value("similarity_threshold", c.edge.similarity_threshold);
                c.edge.unseen_cap = j["edge"].value("unseen_cap", c.edge.unseen_cap);
            }
            c.initial = load_rows(json{{"data", j.at("initial_data")}}, *schema);
            for (const auto& r : j.value("replay", json::array())) {
                ReplayBatch b;
                b.tick = detail::json_get<std::uint64_t>(r, "tick", "replay entry");
                b.edge = r.value("edge", std::size_t{0});
                b.mode = parse_replay_mode(r.value("mode", std::string("both")));
                b.samples = load_rows(r, *schema);
                c.replay.push_back(std::move(b));
            }
            for (const auto& l : j.value("links", json::array())) {
                const auto state = detail::json_get<std::string>(l, "state", "link entry");
                if (state != "up" && state != "down") {
                    fail(ErrorCode::invalid_config, "link state must be up or down");
                }
                c.links.push_back({detail::json_get<std::uint64_t>(l, "tick", "link entry"), l.value("edge", std::size_t{0}),
                                   state == "up"});
            }
            c.training_delay_ticks = j.value("training_delay_ticks", std::uint64_t{0});
            c.train_interval_ticks = j.value("train_interval_ticks", std::uint64_t{0});
            c.duplicate_uploads = j.value("duplicate_uploads", false);
        } catch (const json::exception& e) {
            fail(ErrorCode::invalid_config, std::string("simulation config: ") + e.what());
        }
        c.validate();
        return c;
    }
};

enum class MessageKind { snapshot_push, upload_batch, trigger_train, ack };

inline std::string_view to_string(MessageKind k)
{
    switch (k) {
    case MessageKind::snapshot_push: return "SnapshotPush";
    case MessageKind::upload_batch: return "UploadBatch";
    case MessageKind::trigger_train: return "TriggerTrain";
    case MessageKind::ack: return "Ack";
    }
    return "Ack";
}

struct Message {
    std::uint64_t id = 0;
    MessageKind kind = MessageKind::ack;
    std::string source;
    std::string destination;
    std::shared_ptr<const DeploySnapshot> snapshot;
    std::shared_ptr<const UploadBatch> batch;
    std::string reason;
    std::uint64_t ack_of = 0;
};

struct SimEvent {
    std::uint64_t tick = 0;
    std::uint64_t seq = 0;
    std::string node;
    std::string kind;
    std::string detail;
};

struct PredictionRecord {
    std::uint64_t tick = 0;
    std::size_t edge = 0;
    std::uint64_t seq = 0; // per edge
    std::string route;     // known | similar | fallback | error
    std::string key;
    std::string label;
    std::string truth; // empty when the replayed sample was unlabeled
    std::uint64_t snapshot_version = 0;
};

struct MessageStats {
    std::uint64_t sent = 0;
    std::uint64_t delivered = 0;
    std::uint64_t duplicate_deliveries = 0;
    std::uint64_t duplicates_ignored = 0;
    std::uint64_t uploads_applied = 0;
    std::uint64_t triggers_applied = 0;
    std::uint64_t acks_received = 0;
    std::uint64_t unseen_received = 0;
    std::uint64_t queued_at_end = 0;

    json to_json() const
    {
        return json{{"sent", sent},
                    {"delivered", delivered},
                    {"duplicate_deliveries", duplicate_deliveries},
                    {"duplicates_ignored", duplicates_ignored},
                    {"uploads_applied", uploads_applied},
                    {"triggers_applied", triggers_applied},
                    {"acks_received", acks_received},
                    {"unseen_received", unseen_received},
                    {"queued_at_end", queued_at_end}};
    }
};

struct SimReport {
    std::uint64_t ticks = 0;
    std::vector<EdgeCounters> edges;
    std::vector<SimEvent> events;
    std::vector<PredictionRecord> predictions;
    json kb_summary;
    std::uint64_t kb_digest = 0;
    std::uint64_t training_cycles = 0;
    MessageStats messages;

    std::string event_log() const
    {
        std::string out = "tick,node,event_kind,detail\n";
        for (const auto& e : events) {
            out += std::to_string(e.tick) + "," + csv::quote(e.node) + "," + csv::quote(e.kind) + "," +
                   csv::quote(e.detail) + "\n";
        }
        return out;
    }

    std::string prediction_log() const
    {
        std::string out = "tick,edge,seq,route,task_key,label,truth,snapshot_version\n";
        for (const auto& p : predictions) {
            out += std::to_string(p.tick) + "," + std::to_string(p.edge) + "," + std::to_string(p.seq) + "," + p.route +
                   "," + csv::quote(p.key) + "," + csv::quote(p.label) + "," + csv::quote(p.truth) + "," +
                   std::to_string(p.snapshot_version) + "\n";
        }
        return out;
    }

    /// Predictions of one edge only, for comparing runs edge by edge.
    std::string prediction_log(std::size_t edge) const
    {
        SimReport only;
        for (const auto& p : predictions) {
            if (p.edge == edge) {
                only.predictions.push_back(p);
            }
        }
        return only.prediction_log();
    }

    json to_json() const
    {
        json j;
        j["ticks"] = ticks;
        j["edges"] = json::array();
        for (const auto& c : edges) {
            j["edges"].push_back(c.to_json());
        }
        j["kb"] = kb_summary;
        j["kb_digest"] = to_hex(kb_digest);
        j["training_cycles"] = training_cycles;
        j["messages"] = messages.to_json();
        j["events"] = events.size();
        j["predictions"] = predictions.size();
        return j;
    }

    /// report.json, events.csv and predictions.csv under `dir`.
    void write(const fs::path& dir) const
    {
        std::error_code ec;
        fs::create_directories(dir, ec);
        auto put = [&](const std::string& name, const std::string& text) {
            std::ofstream out(dir / name, std::ios::binary);
            out << text;
            if (!out) {
                fail(ErrorCode::io_failure, "cannot write '" + (dir / name).string() + "'");
            }
        };
        put("report.json", to_json().dump(2) + "\n");
        put("events.csv", event_log());
        put("predictions.csv", prediction_log());
    }
};

class Simulation {
public:
    /// Builds the nodes, trains the initial job on `cfg.initial` and pushes the
    /// first snapshot. Link changes scheduled for tick 0 take effect first.
    Simulation(SimConfig cfg, std::optional<fs::path> kb_dir = std::nullopt) : cfg_(std::move(cfg))
    {
        cfg_.validate();
        kb_ = kb_dir ? KnowledgeBase::open(*kb_dir) : KnowledgeBase();
        job_ = std::make_unique<LifelongJob>(cfg_.job, kb_);
        for (std::size_t i = 0; i < cfg_.edges; ++i) {
            edges_.push_back(std::make_unique<EdgeNode>(cfg_.edge));
        }
        apply_links(0);
        const auto cycle = job_->run_cycle(cfg_.initial);
        ++training_cycles_;
        log("cloud", "bootstrap", "version=" + std::to_string(cycle.snapshot.version) +
                                      " tasks=" + std::to_string(cycle.snapshot.tasks.size()));
        broadcast(std::make_shared<const DeploySnapshot>(cycle.snapshot));
        for (std::size_t e = 0; e < edges_.size(); ++e) {
            deliver_downlink(e);
        }
    }

    Simulation(const Simulation&) = delete;
    Simulation& operator=(const Simulation&) = delete;

    std::uint64_t now() const { return tick_; }
    bool finished() const { return tick_ >= cfg_.max_ticks; }
    const KnowledgeBase& kb() const { return kb_; }
    const LifelongJob& job() const { return *job_; }
    const EdgeRuntime& edge(std::size_t i) const { return edges_.at(i)->runtime; }
    bool link_up(std::size_t i) const { return edges_.at(i)->up; }

    void set_link(std::size_t edge, bool up)
    {
        if (edge >= edges_.size()) {
            fail(ErrorCode::invalid_argument, "unknown edge id " + std::to_string(edge));
        }
        auto& n = *edges_[edge];
        if (n.up == up) {
            return;
        }
        n.up = up;
        log(edge_name(edge), up ? "link_up" : "link_down", "");
    }

    /// Runs one tick and returns the events it produced.
    std::vector<SimEvent> tick()
    {
        if (finished()) {
            fail(ErrorCode::illegal_phase, "simulation already finished");
        }
        const auto first = events_.size();
        apply_links(tick_);
        flush();
        replay();
        triggers();
        ++tick_;
        return {events_.begin() + static_cast<std::ptrdiff_t>(first), events_.end()};
    }

    SimReport run_to_completion()
    {
        while (!finished()) {
            tick();
        }
        return report();
    }

    SimReport report() const
    {
        SimReport r;
        r.ticks = tick_;
        for (const auto& e : edges_) {
            r.edges.push_back(e->runtime.counters());
        }
        r.events = events_;
        r.predictions = predictions_;
        r.kb_summary = kb_.summary();
        r.kb_digest = kb_.content_digest();
        r.training_cycles = training_cycles_;
        r.messages = stats_;
        for (const auto& e : edges_) {
            r.messages.queued_at_end += e->uplink.size() + e->downlink.size();
        }
        return r;
    }

private:
    struct EdgeNode {
        explicit EdgeNode(const EdgeConfig& c) : runtime(c) {}
        EdgeRuntime runtime;
        bool up = true;
        std::deque<Message> uplink;   // edge -> cloud
        std::deque<Message> downlink; // cloud -> edge
        std::set<std::uint64_t> seen;
        std::uint64_t prediction_seq = 0;
    };

    static std::string edge_name(std::size_t i) { return "edge-" + std::to_string(i); }

    void log(std::string node, std::string kind, std::string detail)
    {
        events_.push_back({tick_, events_.size(), std::move(node), std::move(kind), std::move(detail)});
    }

    Message make(MessageKind kind, std::string source, std::string destination)
    {
        Message m;
        m.id = ++next_id_;
        m.kind = kind;
        m.source = std::move(source);
        m.destination = std::move(destination);
        ++stats_.sent;
        log(m.source, "send", std::string(to_string(kind)) + " id=" + std::to_string(m.id) + " to=" + m.destination);
        return m;
    }

    void apply_links(std::uint64_t t)
    {
        while (link_cursor_ < cfg_.links.size() && cfg_.links[link_cursor_].tick <= t) {
            const auto& l = cfg_.links[link_cursor_++];
            set_link(l.edge, l.up);
        }
    }

    void broadcast(std::shared_ptr<const DeploySnapshot> snap)
    {
        for (std::size_t e = 0; e < edges_.size(); ++e) {
            auto m = make(MessageKind::snapshot_push, "cloud", edge_name(e));
            m.snapshot = snap;
            edges_[e]->downlink.push_back(std::move(m));
        }
    }

    void flush()
    {
        for (std::size_t e = 0; e < edges_.size(); ++e) {
            deliver_uplink(e);
        }
        run_due_training();
        for (std::size_t e = 0; e < edges_.size(); ++e) {
            deliver_downlink(e);
        }
    }

    void deliver_uplink(std::size_t e)
    {
        auto& n = *edges_[e];
        if (!n.up) {
            return;
        }
        while (!n.uplink.empty()) {
            auto m = std::move(n.uplink.front());
            n.uplink.pop_front();
            cloud_receive(e, m);
            if (cfg_.duplicate_uploads && m.kind == MessageKind::upload_batch) {
                ++stats_.duplicate_deliveries;
                cloud_receive(e, m);
            }
        }
    }

    void deliver_downlink(std::size_t e)
    {
        auto& n = *edges_[e];
        if (!n.up) {
            return;
        }
        while (!n.downlink.empty()) {
            auto m = std::move(n.downlink.front());
            n.downlink.pop_front();
            edge_receive(e, m);
        }
    }

    void cloud_receive(std::size_t e, const Message& m)
    {
        ++stats_.delivered;
        log("cloud", "deliver", std::string(to_string(m.kind)) + " id=" + std::to_string(m.id) + " from=" + m.source);
        if (m.kind == MessageKind::ack) {
            ++stats_.acks_received;
            return;
        }
        if (!cloud_seen_.insert(m.id).second) {
            ++stats_.duplicates_ignored;
            log("cloud", "duplicate_ignored", "id=" + std::to_string(m.id));
            return;
        }
        if (m.kind == MessageKind::upload_batch) {
            ++stats_.uploads_applied;
            pool_.emplace(m.id, m.batch);
            stats_.unseen_received += m.batch->unseen.size();
        } else if (m.kind == MessageKind::trigger_train) {
            ++stats_.triggers_applied;
            auto due = tick_ + cfg_.training_delay_ticks;
            if (cfg_.train_interval_ticks > 0) {
                due = (due + cfg_.train_interval_ticks - 1) / cfg_.train_interval_ticks * cfg_.train_interval_ticks;
            }
            if (!train_due_ || due < *train_due_) {
                train_due_ = due;
            }
            log("cloud", "train_scheduled", "due=" + std::to_string(*train_due_) + " reason=" + m.reason);
        }
        auto ack = make(MessageKind::ack, "cloud", edge_name(e));
        ack.ack_of = m.id;
        edges_[e]->downlink.push_back(std::move(ack));
    }

    void edge_receive(std::size_t e, const Message& m)
    {
        auto& n = *edges_[e];
        ++stats_.delivered;
        log(edge_name(e), "deliver", std::string(to_string(m.kind)) + " id=" + std::to_string(m.id));
        if (m.kind == MessageKind::ack) {
            ++stats_.acks_received;
            return;
        }
        if (!n.seen.insert(m.id).second) {
            ++stats_.duplicates_ignored;
            return;
        }
        if (m.kind == MessageKind::snapshot_push) {
            const bool applied = n.runtime.apply_snapshot(m.snapshot);
            log(edge_name(e), applied ? "snapshot_applied" : "snapshot_stale",
                "version=" + std::to_string(m.snapshot->version));
            auto ack = make(MessageKind::ack, edge_name(e), "cloud");
            ack.ack_of = m.id;
            n.uplink.push_back(std::move(ack));
        }
    }

    /// Pools every labeled upload received so far, in message-id order, and runs one update cycle.
    void run_due_training()
    {
        if (!train_due_ || *train_due_ > tick_) {
            return;
        }
        train_due_.reset();
        Dataset pooled(cfg_.initial.schema_ptr());
        for (const auto& [id, batch] : pool_) {
            for (const auto& s : batch->labeled) {
                pooled.add(s);
            }
        }
        pool_.clear();
        if (pooled.size() < 2) {
            log("cloud", "train_skipped", "labeled=" + std::to_string(pooled.size()));
            return;
        }
        log("cloud", "train_start", "labeled=" + std::to_string(pooled.size()));
        try {
            const auto snap = job_->run_update_cycle(pooled);
            ++training_cycles_;
            log("cloud", "train_done", "version=" + std::to_string(snap.version) +
                                           " tasks=" + std::to_string(snap.tasks.size()));
            broadcast(std::make_shared<const DeploySnapshot>(snap));
        } catch (const Error& err) {
            log("cloud", "train_error", err.what());
        }
    }

    void replay()
    {
        while (replay_cursor_ < cfg_.replay.size() && cfg_.replay[replay_cursor_].tick < tick_) {
            ++replay_cursor_; // scheduled before the current tick (only possible for tick 0 schedules)
        }
        for (; replay_cursor_ < cfg_.replay.size() && cfg_.replay[replay_cursor_].tick == tick_; ++replay_cursor_) {
            const auto& b = cfg_.replay[replay_cursor_];
            auto& n = *edges_[b.edge];
            const auto& schema = b.samples.schema();
            std::size_t known = 0, similar = 0, fallback = 0, errors = 0;
            if (b.mode != ReplayMode::feedback) {
                for (const auto& s : b.samples.samples()) {
                    PredictionRecord rec;
                    rec.tick = tick_;
                    rec.edge = b.edge;
                    rec.seq = n.prediction_seq++;
                    rec.truth = s.label ? format_label(schema, *s.label) : "";
                    Sample unlabeled = s;
                    unlabeled.label.reset();
                    try {
                        const auto p = n.runtime.infer(unlabeled);
                        rec.route = std::string(to_string(p.route));
                        rec.key = p.key.str();
                        rec.label = format_label(schema, p.label);
                        rec.snapshot_version = p.snapshot_version;
                        ++(p.route == RouteKind::known ? known : p.route == RouteKind::similar ? similar : fallback);
                    } catch (const Error& err) {
                        rec.route = "error";
                        rec.label = std::string(to_string(err.code()));
                        rec.snapshot_version = n.runtime.active_version();
                        ++errors;
                    }
                    predictions_.push_back(std::move(rec));
                }
            }
            std::size_t accepted = 0;
            if (b.mode != ReplayMode::infer) {
                accepted = n.runtime.ingest_feedback(b.samples.samples(), schema).accepted;
            }
            log(edge_name(b.edge), "replay",
                "mode=" + std::string(b.mode == ReplayMode::infer ? "infer" : b.mode == ReplayMode::feedback ? "feedback" : "both") +
                    " n=" + std::to_string(b.samples.size()) + " known=" + std::to_string(known) +
                    " similar=" + std::to_string(similar) + " fallback=" + std::to_string(fallback) +
                    " errors=" + std::to_string(errors) + " feedback=" + std::to_string(accepted));
        }
    }

    void triggers()
    {
        for (std::size_t e = 0; e < edges_.size(); ++e) {
            auto& n = *edges_[e];
            const auto d = n.runtime.should_trigger(cfg_.job.trigger);
            if (!d.fire) {
                continue;
            }
            n.runtime.note_trigger();
            auto batch = std::make_shared<const UploadBatch>(n.runtime.drain_for_upload());
            log(edge_name(e), "trigger", d.reason + " labeled=" + std::to_string(batch->labeled.size()) +
                                             " unseen=" + std::to_string(batch->unseen.size()));
            auto up = make(MessageKind::upload_batch, edge_name(e), "cloud");
            up.batch = batch;
            n.uplink.push_back(std::move(up));
            auto tr = make(MessageKind::trigger_train, edge_name(e), "cloud");
            tr.reason = d.reason;
            n.uplink.push_back(std::move(tr));
            deliver_uplink(e);
        }
        run_due_training();
    }

    SimConfig cfg_;
    KnowledgeBase kb_;
    std::unique_ptr<LifelongJob> job_;
    std::vector<std::unique_ptr<EdgeNode>> edges_;
    std::uint64_t tick_ = 0;
    std::uint64_t next_id_ = 0;
    std::size_t link_cursor_ = 0;
    std::size_t replay_cursor_ = 0;
    std::set<std::uint64_t> cloud_seen_;
    std::map<std::uint64_t, std::shared_ptr<const UploadBatch>> pool_;
    std::optional<std::uint64_t> train_due_;
    std::uint64_t training_cycles_ = 0;
    std::vector<SimEvent> events_;
    std::vector<PredictionRecord> predictions_;
    MessageStats stats_;
};

} // namespace ecll
