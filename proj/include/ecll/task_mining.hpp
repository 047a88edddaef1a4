#pragma once

// Task identity and task-level operations: attribute bucketing, grouping a
// heterogeneous dataset into per-task parts, attribute similarity between
// tasks and whole-task sample borrowing for small tasks.

#include "ecll/domain.hpp"
#include "ecll/error.hpp"

#include <algorithm>
#include <cmath>
#include <compare>
#include <map>
#include <string>
#include <utility>
#include <vector>

namespace ecll {

/// Canonical task identity: bucketed attribute values in schema order joined
/// by '|'. '\' and '|' inside categorical values are backslash-escaped.
struct TaskKey {
    std::string value;

    auto operator<=>(const TaskKey&) const = default;
    bool operator==(const TaskKey&) const = default;

    const std::string& str() const { return value; }
};

inline constexpr char task_key_separator = '|';

struct BucketingConfig {
    std::vector<std::string> columns;
    std::vector<AttributeKind> kinds;
    std::vector<std::vector<double>> edges; // one list per column; empty for categorical

    static BucketingConfig from_schema(const DatasetSchema& schema)
    {
        BucketingConfig b;
        for (const auto& a : schema.attributes) {
            b.columns.push_back(a.name);
            b.kinds.push_back(a.kind);
            b.edges.push_back(a.edges);
        }
        return b;
    }

    /// Schema defaults with per-column edge overrides, e.g. {"age": [30, 50]}.
    static BucketingConfig from_json(const DatasetSchema& schema, const json& overrides)
    {
        auto b = from_schema(schema);
        if (overrides.is_null()) {
            return b;
        }
        if (!overrides.is_object()) {
            fail(ErrorCode::invalid_config, "bucketing must map column names to edge lists");
        }
        for (const auto& [name, edges] : overrides.items()) {
            auto it = std::find(b.columns.begin(), b.columns.end(), name);
            if (it == b.columns.end()) {
                fail(ErrorCode::invalid_config, "bucketing names unknown attribute column '" + name + "'");
            }
            const auto i = static_cast<std::size_t>(it - b.columns.begin());
            try {
                b.edges[i] = edges.get<std::vector<double>>();
            } catch (const json::exception&) {
                fail(ErrorCode::invalid_config, "bucketing for '" + name + "' must be a list of numbers");
            }
        }
        b.validate();
        return b;
    }

    json to_json() const
    {
        json j = json::object();
        for (std::size_t i = 0; i < columns.size(); ++i) {
            if (kinds[i] == AttributeKind::numeric) {
                j[columns[i]] = edges[i];
            }
        }
        return j;
    }

    void validate() const
    {
        for (std::size_t i = 0; i < columns.size(); ++i) {
            const auto& e = edges[i];
            if (kinds[i] == AttributeKind::categorical && !e.empty()) {
                fail(ErrorCode::bad_bucket_edges, "categorical attribute '" + columns[i] + "' cannot be bucketed");
            }
            for (std::size_t j = 0; j < e.size(); ++j) {
                if (!std::isfinite(e[j]) || (j > 0 && !(e[j - 1] < e[j]))) {
                    fail(ErrorCode::bad_bucket_edges,
                         "attribute '" + columns[i] + "' bucket edges must be finite and strictly increasing");
                }
            }
        }
    }

    std::size_t bucket_count(std::size_t column) const { return edges[column].size() + 1; }

    bool operator==(const BucketingConfig&) const = default;
};

/// Number of edges <= v: edges are the inclusive lower bounds of the next bucket.
inline std::size_t bucket_index(double v, const std::vector<double>& edges)
{
    return static_cast<std::size_t>(std::upper_bound(edges.begin(), edges.end(), v) - edges.begin());
}

/// Numeric values become their bucket index (held as a double); categorical
/// values pass through.
inline TaskAttributes bucket_attributes(const TaskAttributes& attrs, const BucketingConfig& b)
{
    if (attrs.values.size() != b.columns.size()) {
        fail(ErrorCode::schema_mismatch, "expected " + std::to_string(b.columns.size()) + " attributes, got " +
                                             std::to_string(attrs.values.size()));
    }
    TaskAttributes out;
    out.values.reserve(attrs.values.size());
    for (std::size_t i = 0; i < attrs.values.size(); ++i) {
        const auto& v = attrs.values[i];
        if (b.kinds[i] == AttributeKind::numeric) {
            const auto* d = std::get_if<double>(&v);
            if (d == nullptr) {
                fail(ErrorCode::schema_mismatch, "attribute '" + b.columns[i] + "' must be numeric");
            }
            out.values.emplace_back(static_cast<double>(bucket_index(*d, b.edges[i])));
        } else {
            const auto* s = std::get_if<std::string>(&v);
            if (s == nullptr) {
                fail(ErrorCode::schema_mismatch, "attribute '" + b.columns[i] + "' must be categorical");
            }
            out.values.emplace_back(*s);
        }
    }
    return out;
}

/// Key for already-bucketed attributes.
inline TaskKey make_task_key(const TaskAttributes& bucketed)
{
    std::string key;
    for (std::size_t i = 0; i < bucketed.values.size(); ++i) {
        if (i > 0) {
            key.push_back(task_key_separator);
        }
        if (const auto* s = std::get_if<std::string>(&bucketed.values[i])) {
            for (char c : *s) {
                if (c == '\\' || c == task_key_separator) {
                    key.push_back('\\');
                }
                key.push_back(c);
            }
        } else {
            key += std::to_string(static_cast<long long>(std::get<double>(bucketed.values[i])));
        }
    }
    return TaskKey{std::move(key)};
}

inline TaskKey task_key_for(const TaskAttributes& raw, const BucketingConfig& b)
{
    return make_task_key(bucket_attributes(raw, b));
}

/// Mean per-column score. Categorical: 1 if equal else 0. Numeric buckets
/// i, j out of B: max(0, 1 - |i-j|/(B-1)), and 1 when B == 1.
inline double task_similarity(const TaskAttributes& a, const TaskAttributes& b, const BucketingConfig& cfg)
{
    if (a.values.size() != cfg.columns.size() || b.values.size() != cfg.columns.size()) {
        fail(ErrorCode::schema_mismatch, "similarity needs attribute tuples matching the bucketing columns");
    }
    if (cfg.columns.empty()) {
        return 1.0;
    }
    double total = 0.0;
    for (std::size_t i = 0; i < cfg.columns.size(); ++i) {
        if (cfg.kinds[i] == AttributeKind::categorical) {
            const auto* x = std::get_if<std::string>(&a.values[i]);
            const auto* y = std::get_if<std::string>(&b.values[i]);
            if (x == nullptr || y == nullptr) {
                fail(ErrorCode::schema_mismatch, "attribute '" + cfg.columns[i] + "' must be categorical");
            }
            total += *x == *y ? 1.0 : 0.0;
        } else {
            const auto* x = std::get_if<double>(&a.values[i]);
            const auto* y = std::get_if<double>(&b.values[i]);
            if (x == nullptr || y == nullptr) {
                fail(ErrorCode::schema_mismatch, "attribute '" + cfg.columns[i] + "' must be numeric");
            }
            const auto buckets = cfg.bucket_count(i);
            if (buckets == 1) {
                total += 1.0;
            } else {
                const double gap = std::abs(*x - *y) / static_cast<double>(buckets - 1);
                total += std::max(0.0, 1.0 - gap);
            }
        }
    }
    return total / static_cast<double>(cfg.columns.size());
}

struct TaskPart {
    TaskAttributes attributes; // bucketed
    Dataset data;
};

/// Disjoint, exhaustive grouping of a dataset by task key; ordered by key.
using TaskPartition = std::map<TaskKey, TaskPart>;

/// Groups samples by bucketed-attribute key. Requires labels unless
/// `allow_unlabeled` is set.
inline TaskPartition partition_by_task(const Dataset& d, const BucketingConfig& b, bool allow_unlabeled = false)
{
    TaskPartition out;
    for (std::size_t i = 0; i < d.size(); ++i) {
        const auto& s = d[i];
        if (!allow_unlabeled && !s.label) {
            fail(ErrorCode::unlabeled_sample, "task mining: sample " + std::to_string(i) + " has no label");
        }
        auto bucketed = bucket_attributes(s.attributes, b);
        auto key = make_task_key(bucketed);
        auto it = out.find(key);
        if (it == out.end()) {
            it = out.emplace(key, TaskPart{std::move(bucketed), Dataset(d.schema_ptr())}).first;
        }
        it->second.data.add(s);
    }
    return out;
}

inline TaskPartition mine_tasks(const Dataset& d, const BucketingConfig& b)
{
    if (d.empty()) {
        fail(ErrorCode::empty_dataset, "cannot mine tasks from an empty dataset");
    }
    return partition_by_task(d, b, false);
}

struct TransferParams {
    std::size_t min_samples = 0;
    std::size_t cap = static_cast<std::size_t>(-1); // maximum borrowed samples
};

struct TransferResult {
    Dataset augmented;
    std::vector<std::pair<TaskKey, std::size_t>> provenance;
    bool small_task = false; // still below min_samples after borrowing
};

/// Tops up a small task with whole donor tasks in descending similarity
/// (ties by key). Donors with similarity 0 are never used. The last donor is
/// truncated to its first samples when the borrow cap would be exceeded.
inline TransferResult sample_transfer(const TaskKey& target_key, const TaskPartition& partition,
                                      const BucketingConfig& b, const TransferParams& params)
{
    auto it = partition.find(target_key);
    if (it == partition.end()) {
        fail(ErrorCode::key_not_found, "task '" + target_key.str() + "' is not in the partition");
    }
    const auto& target = it->second;
    TransferResult r{target.data, {}, false};
    if (target.data.size() >= params.min_samples) {
        return r;
    }
    std::vector<std::pair<double, const std::pair<const TaskKey, TaskPart>*>> donors;
    for (const auto& entry : partition) {
        if (entry.first == target_key) {
            continue;
        }
        const double sim = task_similarity(target.attributes, entry.second.attributes, b);
        if (sim > 0.0) {
            donors.emplace_back(sim, &entry);
        }
    }
    std::stable_sort(donors.begin(), donors.end(), [](const auto& x, const auto& y) {
        if (x.first != y.first) {
            return x.first > y.first;
        }
        return x.second->first < y.second->first;
    });
    std::size_t borrowed = 0;
    for (const auto& [sim, donor] : donors) {
        if (r.augmented.size() >= params.min_samples || borrowed >= params.cap) {
            break;
        }
        const auto& samples = donor->second.data.samples();
        const std::size_t take = std::min(samples.size(), params.cap - borrowed);
        for (std::size_t i = 0; i < take; ++i) {
            r.augmented.add(samples[i]);
        }
        borrowed += take;
        r.provenance.emplace_back(donor->first, take);
    }
    r.small_task = r.augmented.size() < params.min_samples;
    return r;
}

} // namespace ecll
