#pragma once

// Versioned task knowledge store.
//
// On disk a store directory holds
//   index.json                   {"body": {...}, "checksum": crc32(body)}
//   models/t_<key>.<version>.bin one serialized model per task revision
//   models/fallback.<n>.bin      the unknown-task model
// Every file is written to "<name>.tmp" and renamed into place; the index is
// renamed last, so a crash at any point leaves the previous index and all the
// files it references intact. Superseded model files stay on disk unreferenced.

#include "ecll/bytes.hpp"
#include "ecll/domain.hpp"
#include "ecll/error.hpp"
#include "ecll/learners.hpp"
#include "ecll/task_mining.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cstring>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace ecll {

namespace fs = std::filesystem;

enum class TaskStatus { trained, deployable, eval_failed };

inline std::string_view to_string(TaskStatus s)
{
    switch (s) {
    case TaskStatus::trained: return "trained";
    case TaskStatus::deployable: return "deployable";
    case TaskStatus::eval_failed: return "eval_failed";
    }
    return "trained";
}

inline TaskStatus parse_status(std::string_view s)
{
    if (s == "trained") return TaskStatus::trained;
    if (s == "deployable") return TaskStatus::deployable;
    if (s == "eval_failed") return TaskStatus::eval_failed;
    fail(ErrorCode::invalid_config, "unknown task status '" + std::string(s) + "'");
}

struct SampleStats {
    std::uint64_t count = 0;
    std::vector<std::uint64_t> class_histogram;
    std::vector<double> feature_mean;
    std::vector<double> feature_min;
    std::vector<double> feature_max;

    bool operator==(const SampleStats&) const = default;

    static SampleStats of(const Dataset& d)
    {
        SampleStats s;
        s.count = d.size();
        s.class_histogram = detail::class_histogram(d);
        const auto nf = d.schema().feature_count();
        s.feature_mean.assign(nf, 0.0);
        s.feature_min.assign(nf, 0.0);
        s.feature_max.assign(nf, 0.0);
        for (std::size_t i = 0; i < d.size(); ++i) {
            for (std::size_t j = 0; j < nf; ++j) {
                const double v = d[i].features[j];
                s.feature_mean[j] += v;
                s.feature_min[j] = i == 0 ? v : std::min(s.feature_min[j], v);
                s.feature_max[j] = i == 0 ? v : std::max(s.feature_max[j], v);
            }
        }
        if (s.count > 0) {
            for (auto& m : s.feature_mean) {
                m /= static_cast<double>(s.count);
            }
        }
        return s;
    }

    json to_json() const
    {
        return json{{"count", count},
                    {"class_histogram", class_histogram},
                    {"feature_mean", feature_mean},
                    {"feature_min", feature_min},
                    {"feature_max", feature_max}};
    }

    static SampleStats from_json(const json& j)
    {
        SampleStats s;
        s.count = j.at("count").get<std::uint64_t>();
        s.class_histogram = j.at("class_histogram").get<std::vector<std::uint64_t>>();
        s.feature_mean = j.at("feature_mean").get<std::vector<double>>();
        s.feature_min = j.at("feature_min").get<std::vector<double>>();
        s.feature_max = j.at("feature_max").get<std::vector<double>>();
        return s;
    }
};

struct Relation {
    TaskKey key;
    double similarity = 0.0;

    bool operator==(const Relation&) const = default;
};

struct TaskRecord {
    TaskKey key;
    TaskAttributes attributes; // bucketed
    std::shared_ptr<const ModelArtifact> model;
    EstimatorSpec spec;
    SampleStats stats;
    std::vector<Relation> relations;
    TaskStatus status = TaskStatus::trained;
    std::uint64_t version = 0; // assigned by the knowledge base
    std::optional<EvalMetrics> eval;
};

/// Schema plus bucketing: everything needed to map raw attributes to task keys.
struct TaskSpace {
    DatasetSchema schema;
    BucketingConfig bucketing;

    std::uint64_t fingerprint() const { return schema.fingerprint(); }

    json to_json() const { return json{{"schema", schema.to_json()}, {"bucketing", bucketing.to_json()}}; }

    static TaskSpace from_json(const json& j)
    {
        TaskSpace s;
        s.schema = DatasetSchema::from_json(j.at("schema"));
        s.bucketing = BucketingConfig::from_json(s.schema, j.at("bucketing"));
        return s;
    }

    bool operator==(const TaskSpace&) const = default;
};

inline json attributes_to_json(const TaskAttributes& a)
{
    json j = json::array();
    for (const auto& v : a.values) {
        if (const auto* s = std::get_if<std::string>(&v)) {
            j.push_back(*s);
        } else {
            j.push_back(std::get<double>(v));
        }
    }
    return j;
}

inline TaskAttributes attributes_from_json(const json& j)
{
    TaskAttributes a;
    for (const auto& v : j) {
        if (v.is_string()) {
            a.values.emplace_back(v.get<std::string>());
        } else if (v.is_number()) {
            a.values.emplace_back(v.get<double>());
        } else {
            fail(ErrorCode::invalid_config, "attribute values must be strings or numbers");
        }
    }
    return a;
}

/// Immutable, eval-gated set of task models shipped to edges.
class DeploySnapshot {
public:
    struct Entry {
        TaskAttributes attributes; // bucketed
        std::shared_ptr<const ModelArtifact> model;
    };

    TaskSpace space;
    std::map<TaskKey, Entry> tasks;
    std::shared_ptr<const ModelArtifact> fallback;
    std::uint64_t version = 0;

    // Layout: "ECLS" | u32 format | str space json | u64 version | u32 n
    //   { str key | str attributes json | blob model } | u8 has_fallback
    //   [ blob model ] | u32 crc32(all preceding bytes)
    Bytes serialize() const
    {
        ByteWriter w;
        w.raw(std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>("ECLS"), 4));
        w.u32(1);
        w.str(space.to_json().dump());
        w.u64(version);
        w.u32(static_cast<std::uint32_t>(tasks.size()));
        for (const auto& [key, e] : tasks) {
            w.str(key.str());
            w.str(attributes_to_json(e.attributes).dump());
            w.blob(serialize_model(*e.model));
        }
        w.u8(fallback ? 1 : 0);
        if (fallback) {
            w.blob(serialize_model(*fallback));
        }
        w.u32(crc32_of(w.bytes()));
        return std::move(w).take();
    }

    static DeploySnapshot deserialize(std::span<const std::uint8_t> bytes)
    {
        if (bytes.size() < 12 || std::memcmp(bytes.data(), "ECLS", 4) != 0) {
            fail(ErrorCode::corrupt_payload, "not a snapshot payload");
        }
        const auto body = bytes.first(bytes.size() - 4);
        ByteReader tail(bytes.last(4));
        if (crc32_of(body) != tail.u32()) {
            fail(ErrorCode::corrupt_payload, "snapshot checksum mismatch");
        }
        ByteReader r(body.subspan(4));
        if (r.u32() != 1) {
            fail(ErrorCode::corrupt_payload, "unsupported snapshot format");
        }
        DeploySnapshot s;
        try {
            s.space = TaskSpace::from_json(json::parse(r.str()));
        } catch (const json::exception& e) {
            fail(ErrorCode::corrupt_payload, std::string("snapshot task space: ") + e.what());
        }
        s.version = r.u64();
        const auto n = r.count(16);
        for (std::size_t i = 0; i < n; ++i) {
            TaskKey key{r.str()};
            Entry e;
            try {
                e.attributes = attributes_from_json(json::parse(r.str()));
            } catch (const json::exception& ex) {
                fail(ErrorCode::corrupt_payload, std::string("snapshot attributes: ") + ex.what());
            }
            const auto mb = r.blob();
            e.model = std::make_shared<const ModelArtifact>(deserialize_model(mb));
            s.tasks.emplace(std::move(key), std::move(e));
        }
        if (r.u8() != 0) {
            const auto mb = r.blob();
            s.fallback = std::make_shared<const ModelArtifact>(deserialize_model(mb));
        }
        if (!r.done()) {
            fail(ErrorCode::corrupt_payload, "trailing bytes in snapshot");
        }
        return s;
    }
};

namespace detail {

inline std::string encode_key_for_filename(const TaskKey& key)
{
    static constexpr char hex[] = "0123456789ABCDEF";
    std::string out = "t_";
    for (unsigned char c : key.str()) {
        if (std::isalnum(c) || c == '-' || c == '_') {
            out.push_back(static_cast<char>(c));
        } else {
            out.push_back('%');
            out.push_back(hex[c >> 4]);
            out.push_back(hex[c & 0xf]);
        }
    }
    return out;
}

inline void write_all(int fd, const std::uint8_t* data, std::size_t size, const std::string& path)
{
    while (size > 0) {
        const auto n = ::write(fd, data, size);
        if (n < 0) {
            if (errno == EINTR) {
                continue;
            }
            fail(ErrorCode::io_failure, "write to '" + path + "' failed");
        }
        data += n;
        size -= static_cast<std::size_t>(n);
    }
}

inline Bytes read_bytes(const fs::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        fail(ErrorCode::io_failure, "cannot open '" + path.string() + "'");
    }
    return Bytes(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

} // namespace detail

/// Called with a stage name ("<file>:after-temp-write", "<file>:before-rename")
/// during persistence. Throwing from it simulates a crash at that point.
using FaultHook = std::function<void(std::string_view stage)>;

class KnowledgeBase {
public:
    using Clock = std::uint64_t;

    /// In-memory store; nothing is persisted.
    KnowledgeBase() = default;

    /// Loads the store at `dir`, creating an empty one if absent.
    static KnowledgeBase open(const fs::path& dir)
    {
        KnowledgeBase kb;
        kb.dir_ = dir;
        std::error_code ec;
        fs::create_directories(dir / "models", ec);
        if (ec) {
            fail(ErrorCode::io_failure, "cannot create store directory '" + dir.string() + "': " + ec.message());
        }
        for (const auto& entry : fs::directory_iterator(dir / "models")) {
            if (entry.path().extension() == ".tmp") {
                fs::remove(entry.path(), ec);
            }
        }
        fs::remove(dir / "index.json.tmp", ec);
        const auto index = dir / "index.json";
        if (fs::exists(index)) {
            kb.state_ = load_index(dir);
        }
        return kb;
    }

    bool persistent() const { return dir_.has_value(); }
    const std::optional<fs::path>& directory() const { return dir_; }

    std::uint64_t version() const { return state_.kb_version; }
    const std::optional<TaskSpace>& space() const { return state_.space; }
    std::optional<std::uint64_t> schema_fingerprint() const
    {
        if (!state_.space) {
            return std::nullopt;
        }
        return state_.space->fingerprint();
    }
    std::size_t size() const { return state_.records.size(); }
    std::shared_ptr<const ModelArtifact> fallback() const { return state_.fallback; }

    void set_fault_hook(FaultHook hook) { hook_ = std::move(hook); }

    /// Fixes schema and bucketing for the store. Rebinding to the same space is
    /// a no-op; a different schema is rejected.
    void bind(const TaskSpace& space)
    {
        if (state_.space) {
            if (!(*state_.space == space)) {
                fail(ErrorCode::schema_mismatch, "knowledge base is bound to a different schema or bucketing");
            }
            return;
        }
        auto next = state_;
        next.space = space;
        commit(std::move(next), {});
    }

    std::vector<TaskKey> keys() const
    {
        std::vector<TaskKey> out;
        for (const auto& [k, _] : state_.records) {
            out.push_back(k);
        }
        return out;
    }

    std::vector<std::shared_ptr<const TaskRecord>> records() const
    {
        std::vector<std::shared_ptr<const TaskRecord>> out;
        for (const auto& [_, r] : state_.records) {
            out.push_back(r.record);
        }
        return out;
    }

    /// Exact-match retrieval; nullptr when the key is unknown.
    std::shared_ptr<const TaskRecord> lookup(const TaskKey& key) const
    {
        auto it = state_.records.find(key);
        return it == state_.records.end() ? nullptr : it->second.record;
    }

    /// Stores `record` under its key. The record version is assigned here; a
    /// record identical to the stored one leaves every version unchanged.
    std::uint64_t upsert_task(TaskRecord record)
    {
        require_space();
        if (!record.model || record.model->schema_fingerprint != state_.space->fingerprint()) {
            fail(ErrorCode::schema_mismatch, "task '" + record.key.str() + "' model does not match the store schema");
        }
        if (auto why = check_bucketed(record.attributes)) {
            fail(ErrorCode::schema_mismatch, "task '" + record.key.str() + "': " + *why);
        }
        if (make_task_key(record.attributes) != record.key) {
            fail(ErrorCode::invalid_argument, "task key does not match its attributes");
        }
        for (const auto& rel : record.relations) {
            if (rel.key == record.key) {
                fail(ErrorCode::invalid_argument, "task '" + record.key.str() + "' lists itself as a relation");
            }
            if (!(rel.similarity >= 0.0 && rel.similarity <= 1.0)) {
                fail(ErrorCode::invalid_argument, "relation similarity out of [0,1]");
            }
        }
        if (record.status == TaskStatus::deployable && !record.eval) {
            fail(ErrorCode::invalid_argument, "deployable task '" + record.key.str() + "' has no evaluation");
        }
        Stored incoming{nullptr, serialize_model(*record.model), 0};
        auto it = state_.records.find(record.key);
        if (it != state_.records.end() && same_content(*it->second.record, it->second.model_bytes, record,
                                                       incoming.model_bytes)) {
            return state_.kb_version;
        }
        record.version = it == state_.records.end() ? 1 : it->second.record->version + 1;
        incoming.crc = crc32_of(incoming.model_bytes);
        const auto key = record.key;
        incoming.record = std::make_shared<const TaskRecord>(std::move(record));
        auto next = state_;
        next.records[key] = incoming;
        ++next.kb_version;
        std::vector<PendingFile> files;
        files.push_back({model_file_for(*incoming.record), next.records[key].model_bytes});
        commit(std::move(next), files);
        return state_.kb_version;
    }

    std::uint64_t set_fallback(const ModelArtifact& model)
    {
        require_space();
        if (model.schema_fingerprint != state_.space->fingerprint()) {
            fail(ErrorCode::schema_mismatch, "fallback model does not match the store schema");
        }
        auto next = state_;
        next.fallback = std::make_shared<const ModelArtifact>(model);
        next.fallback_bytes = serialize_model(model);
        next.fallback_crc = crc32_of(next.fallback_bytes);
        ++next.fallback_version;
        ++next.kb_version;
        std::vector<PendingFile> files;
        files.push_back({fallback_file(next.fallback_version), next.fallback_bytes});
        commit(std::move(next), files);
        return state_.kb_version;
    }

    /// Top-k tasks by attribute similarity to `attrs` (raw, unbucketed);
    /// descending, ties by key, similarity 0 excluded.
    std::vector<std::pair<std::shared_ptr<const TaskRecord>, double>> query_similar(const TaskAttributes& attrs,
                                                                                    std::size_t k) const
    {
        std::vector<std::pair<std::shared_ptr<const TaskRecord>, double>> out;
        if (!state_.space || k == 0) {
            return out;
        }
        if (auto why = state_.space->schema.check_attributes(attrs)) {
            fail(ErrorCode::schema_mismatch, *why);
        }
        const auto bucketed = bucket_attributes(attrs, state_.space->bucketing);
        for (const auto& [key, s] : state_.records) {
            const double sim = task_similarity(bucketed, s.record->attributes, state_.space->bucketing);
            if (sim > 0.0) {
                out.emplace_back(s.record, sim);
            }
        }
        // records iterate in key order, so a stable sort on similarity keeps key ties ordered
        std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
        if (out.size() > k) {
            out.resize(k);
        }
        return out;
    }

    DeploySnapshot snapshot() const
    {
        DeploySnapshot s;
        if (state_.space) {
            s.space = *state_.space;
        }
        s.version = state_.kb_version;
        s.fallback = state_.fallback;
        for (const auto& [key, st] : state_.records) {
            if (st.record->status == TaskStatus::deployable) {
                s.tasks.emplace(key, DeploySnapshot::Entry{st.record->attributes, st.record->model});
            }
        }
        if (s.tasks.empty() && !s.fallback) {
            fail(ErrorCode::nothing_deployable, "no deployable task and no fallback model");
        }
        return s;
    }

    /// Rewrites every referenced file and the index. Idempotent: two saves with
    /// no mutation in between produce identical bytes.
    void save()
    {
        if (!dir_) {
            return;
        }
        std::vector<PendingFile> files;
        for (auto& [_, s] : state_.records) {
            files.push_back({model_file_for(*s.record), s.model_bytes});
        }
        if (state_.fallback) {
            files.push_back({fallback_file(state_.fallback_version), state_.fallback_bytes});
        }
        persist(state_, files);
    }

    /// Digest of the logical store content (index plus model bytes), independent of location.
    std::uint64_t content_digest() const
    {
        Fnv1a h;
        h.add(index_body(state_).dump());
        for (const auto& [_, s] : state_.records) {
            h.add(std::string_view(reinterpret_cast<const char*>(s.model_bytes.data()), s.model_bytes.size()));
        }
        h.add(std::string_view(reinterpret_cast<const char*>(state_.fallback_bytes.data()), state_.fallback_bytes.size()));
        return h.value();
    }

    Bytes model_bytes(const TaskKey& key) const
    {
        auto it = state_.records.find(key);
        if (it == state_.records.end()) {
            fail(ErrorCode::key_not_found, "task '" + key.str() + "' is not in the knowledge base");
        }
        return it->second.model_bytes;
    }

    json summary() const
    {
        json j;
        j["kb_version"] = state_.kb_version;
        j["tasks"] = json::array();
        for (const auto& [key, s] : state_.records) {
            j["tasks"].push_back(json{{"key", key.str()},
                                      {"version", s.record->version},
                                      {"status", to_string(s.record->status)},
                                      {"samples", s.record->stats.count}});
        }
        j["fallback"] = state_.fallback != nullptr;
        return j;
    }

private:
    struct Stored {
        std::shared_ptr<const TaskRecord> record;
        Bytes model_bytes;
        std::uint32_t crc = 0;
    };

    struct State {
        std::optional<TaskSpace> space;
        std::map<TaskKey, Stored> records;
        std::shared_ptr<const ModelArtifact> fallback;
        Bytes fallback_bytes;
        std::uint32_t fallback_crc = 0;
        std::uint64_t fallback_version = 0;
        std::uint64_t kb_version = 0;
    };

    struct PendingFile {
        std::string relative;
        Bytes bytes;
    };

    void require_space() const
    {
        if (!state_.space) {
            fail(ErrorCode::schema_mismatch, "knowledge base has no bound schema");
        }
    }

    std::optional<std::string> check_bucketed(const TaskAttributes& a) const
    {
        const auto& b = state_.space->bucketing;
        if (a.values.size() != b.columns.size()) {
            return "attribute count does not match the schema";
        }
        for (std::size_t i = 0; i < a.values.size(); ++i) {
            const bool numeric = std::holds_alternative<double>(a.values[i]);
            if (numeric != (b.kinds[i] == AttributeKind::numeric)) {
                return "attribute '" + b.columns[i] + "' has the wrong kind";
            }
            if (numeric) {
                const double v = std::get<double>(a.values[i]);
                if (v < 0 || v != std::floor(v) || v >= static_cast<double>(b.bucket_count(i))) {
                    return "attribute '" + b.columns[i] + "' is not a bucket index";
                }
            }
        }
        return std::nullopt;
    }

    static bool same_content(const TaskRecord& a, const Bytes& a_bytes, const TaskRecord& b, const Bytes& b_bytes)
    {
        return a_bytes == b_bytes && a.attributes == b.attributes && a.spec == b.spec && a.stats == b.stats &&
               a.relations == b.relations && a.status == b.status && a.eval == b.eval;
    }

    static std::string model_file_for(const TaskRecord& r)
    {
        return "models/" + detail::encode_key_for_filename(r.key) + "." + std::to_string(r.version) + ".bin";
    }

    static std::string fallback_file(std::uint64_t n) { return "models/fallback." + std::to_string(n) + ".bin"; }

    static json index_body(const State& s)
    {
        json body;
        body["format_version"] = 1;
        body["kb_version"] = s.kb_version;
        body["schema_fingerprint"] = s.space ? to_hex(s.space->fingerprint()) : "";
        body["space"] = s.space ? s.space->to_json() : json();
        if (s.fallback) {
            body["fallback"] = json{{"model_file", fallback_file(s.fallback_version)},
                                    {"version", s.fallback_version},
                                    {"checksum", to_hex(s.fallback_crc, 8)}};
        } else {
            body["fallback"] = nullptr;
        }
        body["tasks"] = json::array();
        for (const auto& [key, st] : s.records) {
            const auto& r = *st.record;
            json t;
            t["key"] = key.str();
            t["attributes"] = attributes_to_json(r.attributes);
            t["version"] = r.version;
            t["status"] = to_string(r.status);
            t["spec"] = r.spec.to_json();
            t["stats"] = r.stats.to_json();
            t["relations"] = json::array();
            for (const auto& rel : r.relations) {
                t["relations"].push_back(json{{"key", rel.key.str()}, {"similarity", rel.similarity}});
            }
            t["eval"] = r.eval ? r.eval->to_json() : json();
            t["model_file"] = model_file_for(r);
            t["checksum"] = to_hex(st.crc, 8);
            body["tasks"].push_back(std::move(t));
        }
        return body;
    }

    void write_atomic(const std::string& relative, std::span<const std::uint8_t> bytes) const
    {
        const auto target = *dir_ / relative;
        const auto tmp = fs::path(target.string() + ".tmp");
        const int fd = ::open(tmp.c_str(), O_WRONLY | O_CREAT | O_TRUNC | O_CLOEXEC, 0644);
        if (fd < 0) {
            fail(ErrorCode::io_failure, "cannot create '" + tmp.string() + "'");
        }
        try {
            detail::write_all(fd, bytes.data(), bytes.size(), tmp.string());
            if (::fsync(fd) != 0) {
                fail(ErrorCode::io_failure, "fsync of '" + tmp.string() + "' failed");
            }
        } catch (...) {
            ::close(fd);
            throw;
        }
        ::close(fd);
        if (hook_) {
            hook_(relative + ":after-temp-write");
            hook_(relative + ":before-rename");
        }
        std::error_code ec;
        fs::rename(tmp, target, ec);
        if (ec) {
            fail(ErrorCode::io_failure, "cannot rename '" + tmp.string() + "': " + ec.message());
        }
    }

    void persist(const State& s, const std::vector<PendingFile>& files) const
    {
        if (!dir_) {
            return;
        }
        for (const auto& f : files) {
            write_atomic(f.relative, f.bytes);
        }
        const auto body = index_body(s);
        const auto body_text = body.dump(2);
        json doc;
        doc["body"] = body;
        doc["checksum"] = to_hex(crc32_of(body_text), 8);
        const auto text = doc.dump(2) + "\n";
        write_atomic("index.json", std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
    }

    /// Persists `next` and only then makes it the in-memory state.
    void commit(State next, const std::vector<PendingFile>& files)
    {
        persist(next, files);
        state_ = std::move(next);
    }

    static State load_index(const fs::path& dir)
    {
        const auto index_path = dir / "index.json";
        auto corrupt = [&](const std::string& file, const std::string& why) -> Error {
            return Error(ErrorCode::corrupt_store, "'" + file + "': " + why);
        };
        const auto raw = detail::read_bytes(index_path);
        json doc;
        try {
            doc = json::parse(raw.begin(), raw.end());
        } catch (const json::exception& e) {
            throw corrupt(index_path.string(), std::string("unparseable index: ") + e.what());
        }
        if (!doc.is_object() || !doc.contains("body") || !doc.contains("checksum") || !doc["checksum"].is_string()) {
            throw corrupt(index_path.string(), "missing body or checksum");
        }
        const auto& body = doc["body"];
        const auto body_text = body.dump(2);
        // Byte-level check too: the stored text must be exactly what we would write.
        const auto expected_text = doc.dump(2) + "\n";
        if (to_hex(crc32_of(body_text), 8) != doc["checksum"].get<std::string>() ||
            std::string(raw.begin(), raw.end()) != expected_text) {
            throw corrupt(index_path.string(), "checksum mismatch");
        }
        State s;
        try {
            s.kb_version = body.at("kb_version").get<std::uint64_t>();
            if (!body.at("space").is_null()) {
                s.space = TaskSpace::from_json(body.at("space"));
            }
            const auto& fb = body.at("fallback");
            if (!fb.is_null()) {
                s.fallback_version = fb.at("version").get<std::uint64_t>();
                const auto file = fb.at("model_file").get<std::string>();
                s.fallback_bytes = load_model_file(dir, file, fb.at("checksum").get<std::string>());
                s.fallback_crc = crc32_of(s.fallback_bytes);
                s.fallback = std::make_shared<const ModelArtifact>(decode_model(dir, file, s.fallback_bytes));
            }
            for (const auto& t : body.at("tasks")) {
                TaskRecord r;
                r.key = TaskKey{t.at("key").get<std::string>()};
                r.attributes = attributes_from_json(t.at("attributes"));
                r.version = t.at("version").get<std::uint64_t>();
                r.status = parse_status(t.at("status").get<std::string>());
                r.spec = EstimatorSpec::from_json(t.at("spec"));
                r.stats = SampleStats::from_json(t.at("stats"));
                for (const auto& rel : t.at("relations")) {
                    r.relations.push_back(Relation{TaskKey{rel.at("key").get<std::string>()},
                                                   rel.at("similarity").get<double>()});
                }
                if (!t.at("eval").is_null()) {
                    r.eval = EvalMetrics::from_json(t.at("eval"));
                }
                const auto file = t.at("model_file").get<std::string>();
                Stored st;
                st.model_bytes = load_model_file(dir, file, t.at("checksum").get<std::string>());
                st.crc = crc32_of(st.model_bytes);
                r.model = std::make_shared<const ModelArtifact>(decode_model(dir, file, st.model_bytes));
                auto key = r.key;
                st.record = std::make_shared<const TaskRecord>(std::move(r));
                s.records.emplace(std::move(key), std::move(st));
            }
        } catch (const Error& e) {
            if (e.code() == ErrorCode::corrupt_store) {
                throw;
            }
            throw corrupt(index_path.string(), e.what());
        } catch (const json::exception& e) {
            throw corrupt(index_path.string(), e.what());
        }
        return s;
    }

    static Bytes load_model_file(const fs::path& dir, const std::string& file, const std::string& checksum)
    {
        const auto path = dir / file;
        if (!fs::exists(path)) {
            throw Error(ErrorCode::corrupt_store, "'" + path.string() + "': referenced model file is missing");
        }
        auto bytes = detail::read_bytes(path);
        if (to_hex(crc32_of(bytes), 8) != checksum) {
            throw Error(ErrorCode::corrupt_store, "'" + path.string() + "': checksum mismatch");
        }
        return bytes;
    }

    static ModelArtifact decode_model(const fs::path& dir, const std::string& file, const Bytes& bytes)
    {
        try {
            return deserialize_model(bytes);
        } catch (const Error& e) {
            throw Error(ErrorCode::corrupt_store, "'" + (dir / file).string() + "': " + e.what());
        }
    }

    std::optional<fs::path> dir_;
    State state_;
    FaultHook hook_;
};

} // namespace ecll
