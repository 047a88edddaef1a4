#pragma once

// Tabular data model: schemas, samples, datasets and their CSV form.

#include "ecll/bytes.hpp"
#include "ecll/error.hpp"
#include "ecll/rng.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <memory>
#include <numeric>
#include <optional>
#include <ostream>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <variant>
#include <vector>

namespace ecll {

using json = nlohmann::json;

enum class AttributeKind { categorical, numeric };

struct AttributeColumn {
    std::string name;
    AttributeKind kind = AttributeKind::categorical;
    std::vector<double> edges; // numeric only; strictly increasing

    bool operator==(const AttributeColumn&) const = default;
};

struct LabelSpec {
    std::string name;
    bool regression = false;
    std::vector<std::string> classes; // classification only

    bool is_classification() const { return !regression; }
    std::size_t class_count() const { return regression ? 0 : classes.size(); }

    std::optional<std::size_t> class_index(std::string_view label) const
    {
        for (std::size_t i = 0; i < classes.size(); ++i) {
            if (classes[i] == label) {
                return i;
            }
        }
        return std::nullopt;
    }

    bool operator==(const LabelSpec&) const = default;
};

/// Class index for classification, real value for regression.
using Label = std::variant<std::size_t, double>;

inline std::size_t class_of(const Label& l)
{
    if (const auto* c = std::get_if<std::size_t>(&l)) {
        return *c;
    }
    fail(ErrorCode::unsupported_label_kind, "expected a class label");
}

inline double value_of(const Label& l)
{
    if (const auto* v = std::get_if<double>(&l)) {
        return *v;
    }
    return static_cast<double>(std::get<std::size_t>(l));
}

using AttributeValue = std::variant<std::string, double>;

struct TaskAttributes {
    std::vector<AttributeValue> values;

    bool operator==(const TaskAttributes&) const = default;
    auto operator<=>(const TaskAttributes&) const = default;
};

using FeatureVector = std::vector<double>;

struct Sample {
    FeatureVector features;
    std::optional<Label> label;
    TaskAttributes attributes;

    bool operator==(const Sample&) const = default;
};

class DatasetSchema {
public:
    std::vector<std::string> features;
    LabelSpec label;
    std::vector<AttributeColumn> attributes;

    std::size_t feature_count() const { return features.size(); }
    std::size_t attribute_count() const { return attributes.size(); }

    /// Throws on any violated invariant, naming the offending column.
    void validate() const
    {
        std::set<std::string> seen;
        auto claim = [&](const std::string& name) {
            if (name.empty()) {
                fail(ErrorCode::invalid_config, "empty column name");
            }
            if (!seen.insert(name).second) {
                fail(ErrorCode::duplicate_column, "column '" + name + "' declared twice");
            }
        };
        for (const auto& f : features) {
            claim(f);
        }
        claim(label.name);
        for (const auto& a : attributes) {
            claim(a.name);
        }
        if (label.is_classification()) {
            if (label.classes.empty()) {
                fail(ErrorCode::empty_class_list, "label '" + label.name + "' has no classes");
            }
            std::set<std::string> cls;
            for (const auto& c : label.classes) {
                if (!cls.insert(c).second) {
                    fail(ErrorCode::duplicate_class,
                         "label '" + label.name + "' lists class '" + c + "' twice");
                }
            }
            if (label.classes.size() < 2) {
                fail(ErrorCode::empty_class_list,
                     "label '" + label.name + "' needs at least two classes");
            }
        }
        for (const auto& a : attributes) {
            for (std::size_t i = 0; i < a.edges.size(); ++i) {
                if (!std::isfinite(a.edges[i]) || (i > 0 && !(a.edges[i - 1] < a.edges[i]))) {
                    fail(ErrorCode::bad_bucket_edges,
                         "attribute '" + a.name + "' bucket edges must be finite and strictly increasing");
                }
            }
            if (a.kind == AttributeKind::categorical && !a.edges.empty()) {
                fail(ErrorCode::bad_bucket_edges,
                     "categorical attribute '" + a.name + "' cannot declare bucket edges");
            }
        }
    }

    /// Identity of what a model consumes and produces: feature columns and label kind.
    std::uint64_t fingerprint() const
    {
        Fnv1a h;
        h.add("features");
        h.add_u64(features.size());
        for (const auto& f : features) {
            h.add(f);
            h.add_u64(f.size());
        }
        h.add(label.regression ? "regression" : "classification");
        h.add_u64(label.classes.size());
        for (const auto& c : label.classes) {
            h.add(c);
            h.add_u64(c.size());
        }
        return h.value();
    }

    /// nullopt when the sample conforms, otherwise a human-readable reason.
    std::optional<std::string> check(const Sample& s) const
    {
        if (s.features.size() != features.size()) {
            return "expected " + std::to_string(features.size()) + " features, got " +
                   std::to_string(s.features.size());
        }
        for (std::size_t i = 0; i < s.features.size(); ++i) {
            if (!std::isfinite(s.features[i])) {
                return "feature '" + features[i] + "' is not finite";
            }
        }
        if (auto why = check_attributes(s.attributes)) {
            return why;
        }
        if (s.label) {
            if (label.is_classification()) {
                const auto* c = std::get_if<std::size_t>(&*s.label);
                if (c == nullptr || *c >= label.classes.size()) {
                    return "label is not a declared class";
                }
            } else {
                const auto* v = std::get_if<double>(&*s.label);
                if (v == nullptr || !std::isfinite(*v)) {
                    return "regression label is not a finite real";
                }
            }
        }
        return std::nullopt;
    }

    std::optional<std::string> check_attributes(const TaskAttributes& attrs) const
    {
        if (attrs.values.size() != attributes.size()) {
            return "expected " + std::to_string(attributes.size()) + " attributes, got " +
                   std::to_string(attrs.values.size());
        }
        for (std::size_t i = 0; i < attributes.size(); ++i) {
            const auto& v = attrs.values[i];
            if (attributes[i].kind == AttributeKind::categorical) {
                const auto* s = std::get_if<std::string>(&v);
                if (s == nullptr || s->empty()) {
                    return "attribute '" + attributes[i].name + "' must be a non-empty string";
                }
            } else {
                const auto* d = std::get_if<double>(&v);
                if (d == nullptr || !std::isfinite(*d)) {
                    return "attribute '" + attributes[i].name + "' must be a finite number";
                }
            }
        }
        return std::nullopt;
    }

    json to_json() const
    {
        json j;
        j["features"] = features;
        json l;
        l["name"] = label.name;
        l["kind"] = label.regression ? "regression" : "classification";
        if (!label.regression) {
            l["classes"] = label.classes;
        }
        j["label"] = l;
        j["attributes"] = json::array();
        for (const auto& a : attributes) {
            json c;
            c["name"] = a.name;
            c["kind"] = a.kind == AttributeKind::numeric ? "numeric" : "categorical";
            if (a.kind == AttributeKind::numeric) {
                c["edges"] = a.edges;
            }
            j["attributes"].push_back(c);
        }
        return j;
    }

    static DatasetSchema from_json(const json& j);

    bool operator==(const DatasetSchema&) const = default;
};

namespace detail {

template <class T>
T json_get(const json& j, const char* key, const char* where)
{
    if (!j.is_object() || !j.contains(key)) {
        fail(ErrorCode::invalid_config, std::string(where) + ": missing key '" + key + "'");
    }
    try {
        return j.at(key).get<T>();
    } catch (const json::exception& e) {
        fail(ErrorCode::invalid_config, std::string(where) + ": bad value for '" + key + "': " + e.what());
    }
}

inline json parse_json_text(std::string_view text, const char* what)
{
    try {
        return json::parse(text);
    } catch (const json::parse_error& e) {
        fail(ErrorCode::invalid_config, std::string(what) + " is not well-formed: " + e.what());
    }
}

inline std::string read_file(const std::string& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        fail(ErrorCode::io_failure, "cannot open '" + path + "'");
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

} // namespace detail

inline DatasetSchema DatasetSchema::from_json(const json& j)
{
    DatasetSchema s;
    s.features = detail::json_get<std::vector<std::string>>(j, "features", "schema");
    const auto& l = j.contains("label") ? j.at("label") : json();
    s.label.name = detail::json_get<std::string>(l, "name", "schema.label");
    const auto kind = detail::json_get<std::string>(l, "kind", "schema.label");
    if (kind == "classification") {
        s.label.regression = false;
        s.label.classes = l.contains("classes")
                              ? detail::json_get<std::vector<std::string>>(l, "classes", "schema.label")
                              : std::vector<std::string>{};
    } else if (kind == "regression") {
        s.label.regression = true;
    } else {
        fail(ErrorCode::invalid_config, "label '" + s.label.name + "' has unknown kind '" + kind + "'");
    }
    if (j.contains("attributes")) {
        for (const auto& c : j.at("attributes")) {
            AttributeColumn col;
            col.name = detail::json_get<std::string>(c, "name", "schema.attributes");
            const auto k = c.contains("kind") ? c.at("kind").get<std::string>() : "categorical";
            if (k == "categorical") {
                col.kind = AttributeKind::categorical;
            } else if (k == "numeric") {
                col.kind = AttributeKind::numeric;
            } else {
                fail(ErrorCode::invalid_config, "attribute '" + col.name + "' has unknown kind '" + k + "'");
            }
            if (c.contains("edges")) {
                col.edges = detail::json_get<std::vector<double>>(c, "edges", "schema.attributes");
            }
            s.attributes.push_back(std::move(col));
        }
    }
    s.validate();
    return s;
}

/// Parses a JSON schema document and validates it.
inline DatasetSchema parse_schema(std::string_view config_text)
{
    return DatasetSchema::from_json(detail::parse_json_text(config_text, "schema config"));
}

class Dataset {
public:
    Dataset() : schema_(std::make_shared<DatasetSchema>()) {}
    explicit Dataset(DatasetSchema schema)
        : schema_(std::make_shared<const DatasetSchema>(std::move(schema)))
    {
    }
    explicit Dataset(std::shared_ptr<const DatasetSchema> schema) : schema_(std::move(schema)) {}

    const DatasetSchema& schema() const { return *schema_; }
    const std::shared_ptr<const DatasetSchema>& schema_ptr() const { return schema_; }
    const std::vector<Sample>& samples() const { return samples_; }
    const Sample& operator[](std::size_t i) const { return samples_[i]; }
    std::size_t size() const { return samples_.size(); }
    bool empty() const { return samples_.empty(); }

    void add(Sample s)
    {
        if (auto why = schema_->check(s)) {
            fail(ErrorCode::schema_mismatch, *why);
        }
        samples_.push_back(std::move(s));
    }

    void append(const Dataset& other)
    {
        for (const auto& s : other.samples()) {
            add(s);
        }
    }

    bool fully_labeled() const
    {
        return std::all_of(samples_.begin(), samples_.end(), [](const Sample& s) { return s.label.has_value(); });
    }

    void require_labeled(std::string_view what) const
    {
        for (std::size_t i = 0; i < samples_.size(); ++i) {
            if (!samples_[i].label) {
                fail(ErrorCode::unlabeled_sample,
                     std::string(what) + ": sample " + std::to_string(i) + " has no label");
            }
        }
    }

    Dataset subset(std::span<const std::size_t> idx) const
    {
        Dataset out(schema_);
        out.samples_.reserve(idx.size());
        for (auto i : idx) {
            out.samples_.push_back(samples_.at(i));
        }
        return out;
    }

    bool operator==(const Dataset& o) const { return *schema_ == *o.schema_ && samples_ == o.samples_; }

private:
    std::shared_ptr<const DatasetSchema> schema_;
    std::vector<Sample> samples_;
};

// --- CSV ------------------------------------------------------------------

namespace csv {

/// Splits one logical record. Handles RFC 4180 quoting, including embedded newlines.
inline bool read_record(std::istream& in, std::vector<std::string>& fields, std::size_t& line_no)
{
    fields.clear();
    std::string field;
    bool in_quotes = false;
    bool any = false;
    char c;
    while (in.get(c)) {
        any = true;
        if (in_quotes) {
            if (c == '"') {
                if (in.peek() == '"') {
                    in.get(c);
                    field.push_back('"');
                } else {
                    in_quotes = false;
                }
            } else {
                if (c == '\n') {
                    ++line_no;
                }
                field.push_back(c);
            }
            continue;
        }
        if (c == '"' && field.empty()) {
            in_quotes = true;
        } else if (c == ',') {
            fields.push_back(std::move(field));
            field.clear();
        } else if (c == '\n') {
            ++line_no;
            if (!field.empty() && field.back() == '\r') {
                field.pop_back();
            }
            fields.push_back(std::move(field));
            return true;
        } else {
            field.push_back(c);
        }
    }
    if (in_quotes) {
        fail(ErrorCode::malformed_csv, "unterminated quoted field near line " + std::to_string(line_no + 1));
    }
    if (!any) {
        return false;
    }
    if (!field.empty() && field.back() == '\r') {
        field.pop_back();
    }
    ++line_no;
    fields.push_back(std::move(field));
    return true;
}

inline std::string quote(std::string_view s)
{
    if (s.find_first_of(",\"\r\n") == std::string_view::npos) {
        return std::string(s);
    }
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') {
            out.push_back('"');
        }
        out.push_back(c);
    }
    out.push_back('"');
    return out;
}

} // namespace csv

/// Reads a dataset; columns are located by header name, extra columns are ignored.
inline Dataset read_csv(std::istream& in, const DatasetSchema& schema)
{
    schema.validate();
    std::size_t line_no = 0;
    std::vector<std::string> header;
    if (!csv::read_record(in, header, line_no)) {
        fail(ErrorCode::malformed_csv, "missing header row");
    }
    if (!header.empty() && header[0].starts_with("\xEF\xBB\xBF")) {
        header[0].erase(0, 3);
    }
    std::unordered_map<std::string, std::size_t> pos;
    for (std::size_t i = 0; i < header.size(); ++i) {
        pos.emplace(header[i], i);
    }
    auto locate = [&](const std::string& name) {
        auto it = pos.find(name);
        if (it == pos.end()) {
            fail(ErrorCode::missing_column, "missing column(\"" + name + "\")");
        }
        return it->second;
    };
    std::vector<std::size_t> feat_pos;
    for (const auto& f : schema.features) {
        feat_pos.push_back(locate(f));
    }
    const std::size_t label_pos = locate(schema.label.name);
    std::vector<std::size_t> attr_pos;
    for (const auto& a : schema.attributes) {
        attr_pos.push_back(locate(a.name));
    }

    Dataset d(schema);
    std::vector<std::string> row;
    while (true) {
        const std::size_t row_line = line_no + 1;
        if (!csv::read_record(in, row, line_no)) {
            break;
        }
        if (row.size() == 1 && row[0].empty()) {
            continue; // blank line
        }
        const auto where = " at row " + std::to_string(row_line);
        if (row.size() != header.size()) {
            fail(ErrorCode::malformed_csv, "expected " + std::to_string(header.size()) + " cells, got " +
                                               std::to_string(row.size()) + where);
        }
        Sample s;
        s.features.reserve(feat_pos.size());
        for (std::size_t i = 0; i < feat_pos.size(); ++i) {
            double v;
            if (!parse_double(row[feat_pos[i]], v) || !std::isfinite(v)) {
                fail(ErrorCode::bad_numeric, "column '" + schema.features[i] + "' value '" + row[feat_pos[i]] +
                                                 "' is not a finite number" + where);
            }
            s.features.push_back(v);
        }
        const auto& cell = row[label_pos];
        if (!cell.empty()) {
            if (schema.label.is_classification()) {
                auto idx = schema.label.class_index(cell);
                if (!idx) {
                    fail(ErrorCode::unknown_class, "unknown class label '" + cell + "'" + where);
                }
                s.label = *idx;
            } else {
                double v;
                if (!parse_double(cell, v) || !std::isfinite(v)) {
                    fail(ErrorCode::bad_numeric, "label value '" + cell + "' is not a finite number" + where);
                }
                s.label = v;
            }
        }
        for (std::size_t i = 0; i < attr_pos.size(); ++i) {
            const auto& c = row[attr_pos[i]];
            if (schema.attributes[i].kind == AttributeKind::numeric) {
                double v;
                if (!parse_double(c, v) || !std::isfinite(v)) {
                    fail(ErrorCode::bad_numeric, "attribute '" + schema.attributes[i].name + "' value '" + c +
                                                     "' is not a finite number" + where);
                }
                s.attributes.values.emplace_back(v);
            } else {
                if (c.empty()) {
                    fail(ErrorCode::malformed_csv, "attribute '" + schema.attributes[i].name + "' is empty" + where);
                }
                s.attributes.values.emplace_back(c);
            }
        }
        d.add(std::move(s));
    }
    return d;
}

inline Dataset load_csv(const std::string& path, const DatasetSchema& schema)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        fail(ErrorCode::io_failure, "cannot open '" + path + "'");
    }
    return read_csv(in, schema);
}

inline std::string format_attribute(const AttributeValue& v)
{
    if (const auto* s = std::get_if<std::string>(&v)) {
        return *s;
    }
    return format_double(std::get<double>(v));
}

inline std::string format_label(const DatasetSchema& schema, const Label& l)
{
    if (schema.label.is_classification()) {
        return schema.label.classes.at(class_of(l));
    }
    return format_double(value_of(l));
}

/// Header is features, label, attributes in schema order.
inline void write_csv(std::ostream& out, const Dataset& d)
{
    const auto& schema = d.schema();
    bool first = true;
    auto cell = [&](std::string_view s) {
        if (!first) {
            out << ',';
        }
        out << csv::quote(s);
        first = false;
    };
    for (const auto& f : schema.features) {
        cell(f);
    }
    cell(schema.label.name);
    for (const auto& a : schema.attributes) {
        cell(a.name);
    }
    out << '\n';
    for (const auto& s : d.samples()) {
        first = true;
        for (double v : s.features) {
            cell(format_double(v));
        }
        cell(s.label ? format_label(schema, *s.label) : std::string());
        for (const auto& a : s.attributes.values) {
            cell(format_attribute(a));
        }
        out << '\n';
    }
}

inline void write_csv(const std::string& path, const Dataset& d)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        fail(ErrorCode::io_failure, "cannot write '" + path + "'");
    }
    write_csv(out, d);
    if (!out) {
        fail(ErrorCode::io_failure, "write to '" + path + "' failed");
    }
}

/// Seeded partition; the first part holds round(fraction * n) samples. Both
/// parts keep the input order.
inline std::pair<Dataset, Dataset> split_dataset(const Dataset& d, double fraction, std::uint64_t seed)
{
    if (d.empty()) {
        fail(ErrorCode::empty_dataset, "cannot split an empty dataset");
    }
    if (!(fraction > 0.0 && fraction < 1.0)) {
        fail(ErrorCode::invalid_argument, "split fraction must lie in (0,1)");
    }
    const std::size_t n = d.size();
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    Rng rng(seed);
    for (std::size_t i = n - 1; i > 0; --i) {
        std::swap(perm[i], perm[rng.index(i + 1)]);
    }
    const auto k = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
    std::vector<std::size_t> first(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(k));
    std::vector<std::size_t> second(perm.begin() + static_cast<std::ptrdiff_t>(k), perm.end());
    std::sort(first.begin(), first.end());
    std::sort(second.begin(), second.end());
    return {d.subset(first), d.subset(second)};
}

} // namespace ecll
