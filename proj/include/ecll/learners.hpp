#pragma once

// Pluggable estimator contract. A learner kind only has to supply fit,
// predict and a parameter encoding; everything else (artifact metadata,
// serialization framing, evaluation) is shared.

#include "ecll/bytes.hpp"
#include "ecll/domain.hpp"
#include "ecll/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace ecll {

struct EstimatorSpec {
    std::string kind;
    std::map<std::string, double> hyperparameters;

    bool operator==(const EstimatorSpec&) const = default;

    json to_json() const
    {
        json j;
        j["kind"] = kind;
        j["hyperparameters"] = json::object();
        for (const auto& [k, v] : hyperparameters) {
            j["hyperparameters"][k] = v;
        }
        return j;
    }

    static EstimatorSpec from_json(const json& j)
    {
        EstimatorSpec s;
        s.kind = detail::json_get<std::string>(j, "kind", "learner");
        if (j.contains("hyperparameters")) {
            for (const auto& [k, v] : j.at("hyperparameters").items()) {
                if (!v.is_number()) {
                    fail(ErrorCode::bad_hyperparameter, "hyperparameter '" + k + "' must be numeric");
                }
                s.hyperparameters[k] = v.get<double>();
            }
        }
        return s;
    }
};

struct HyperParam {
    std::string name;
    double default_value = 0.0;
    bool integer = false;
    double min = 0.0;
    bool min_exclusive = false;
};

/// Shape information a model needs at prediction time.
struct ModelShape {
    std::size_t n_features = 0;
    std::size_t n_classes = 0; // 0 means regression
};

class Model {
public:
    virtual ~Model() = default;

    virtual Label predict(std::span<const double> f) const = 0;

    /// Empty result means "no native distribution"; callers then use a
    /// degenerate distribution on predict().
    virtual std::vector<double> predict_proba(std::span<const double>) const { return {}; }

    virtual void write(ByteWriter& out) const = 0;
};

class Learner {
public:
    virtual ~Learner() = default;

    virtual std::string kind() const = 0;
    virtual std::vector<HyperParam> hyperparameters() const { return {}; }
    virtual bool supports(const LabelSpec& label) const { return label.is_classification(); }

    /// `train` is non-empty and fully labeled; hyperparameters are resolved
    /// (defaults filled, ranges checked).
    virtual std::shared_ptr<const Model> fit(const std::map<std::string, double>& hyper, const Dataset& train,
                                             std::uint64_t seed) const = 0;

    virtual std::shared_ptr<const Model> read(ByteReader& in, const ModelShape& shape) const = 0;
};

class LearnerRegistry {
public:
    void add(std::shared_ptr<const Learner> learner)
    {
        std::lock_guard lock(mu_);
        auto k = learner->kind();
        learners_[k] = std::move(learner);
    }

    std::shared_ptr<const Learner> find(const std::string& kind) const
    {
        std::lock_guard lock(mu_);
        auto it = learners_.find(kind);
        return it == learners_.end() ? nullptr : it->second;
    }

    std::shared_ptr<const Learner> get(const std::string& kind) const
    {
        auto l = find(kind);
        if (!l) {
            fail(ErrorCode::unknown_kind, "learner kind '" + kind + "' is not registered");
        }
        return l;
    }

    std::vector<std::string> kinds() const
    {
        std::lock_guard lock(mu_);
        std::vector<std::string> out;
        for (const auto& [k, _] : learners_) {
            out.push_back(k);
        }
        return out;
    }

private:
    mutable std::mutex mu_;
    std::map<std::string, std::shared_ptr<const Learner>> learners_;
};

inline LearnerRegistry& registry();

/// Checks names and ranges and fills defaults.
inline std::map<std::string, double> resolve_hyperparameters(const EstimatorSpec& spec)
{
    auto learner = registry().get(spec.kind);
    const auto params = learner->hyperparameters();
    for (const auto& [name, _] : spec.hyperparameters) {
        const bool known = std::any_of(params.begin(), params.end(), [&](const HyperParam& p) { return p.name == name; });
        if (!known) {
            fail(ErrorCode::unknown_hyperparameter, "learner '" + spec.kind + "' has no hyperparameter '" + name + "'");
        }
    }
    std::map<std::string, double> out;
    for (const auto& p : params) {
        auto it = spec.hyperparameters.find(p.name);
        const double v = it == spec.hyperparameters.end() ? p.default_value : it->second;
        const bool below = p.min_exclusive ? !(v > p.min) : !(v >= p.min);
        if (!std::isfinite(v) || below || (p.integer && v != std::floor(v))) {
            fail(ErrorCode::bad_hyperparameter, "hyperparameter '" + p.name + "' = " + format_double(v) +
                                                    " is out of range for '" + spec.kind + "'");
        }
        out[p.name] = v;
    }
    return out;
}

inline EstimatorSpec resolve_spec(const EstimatorSpec& spec)
{
    return EstimatorSpec{spec.kind, resolve_hyperparameters(spec)};
}

struct ModelArtifact {
    EstimatorSpec spec;
    std::shared_ptr<const Model> model;
    std::uint64_t trained_on = 0;
    std::vector<std::uint64_t> class_histogram;
    std::uint64_t seed = 0;
    std::uint64_t schema_fingerprint = 0;
    ModelShape shape;

    bool is_classification() const { return shape.n_classes > 0; }
};

struct EvalMetrics {
    double accuracy = 0.0;
    /// confusion[true][predicted]; empty for regression models.
    std::vector<std::vector<std::uint64_t>> confusion;
    std::uint64_t n = 0;
    std::uint64_t correct = 0;
    std::optional<double> rmse; // regression only

    bool operator==(const EvalMetrics&) const = default;

    json to_json() const
    {
        json j;
        j["accuracy"] = accuracy;
        j["n"] = n;
        j["correct"] = correct;
        j["confusion"] = confusion;
        if (rmse) {
            j["rmse"] = *rmse;
        }
        return j;
    }

    static EvalMetrics from_json(const json& j)
    {
        EvalMetrics m;
        m.accuracy = j.at("accuracy").get<double>();
        m.n = j.at("n").get<std::uint64_t>();
        m.correct = j.at("correct").get<std::uint64_t>();
        m.confusion = j.at("confusion").get<std::vector<std::vector<std::uint64_t>>>();
        if (j.contains("rmse")) {
            m.rmse = j.at("rmse").get<double>();
        }
        return m;
    }
};

namespace detail {

inline std::vector<std::uint64_t> class_histogram(const Dataset& d)
{
    std::vector<std::uint64_t> h(d.schema().label.class_count(), 0);
    if (d.schema().label.is_classification()) {
        for (const auto& s : d.samples()) {
            ++h[class_of(*s.label)];
        }
    }
    return h;
}

/// Index of the largest entry, lowest index on ties.
template <class T>
std::size_t argmax(std::span<const T> v)
{
    std::size_t best = 0;
    for (std::size_t i = 1; i < v.size(); ++i) {
        if (v[i] > v[best]) {
            best = i;
        }
    }
    return best;
}

} // namespace detail

inline ModelArtifact fit(const EstimatorSpec& spec, const Dataset& train, std::uint64_t seed)
{
    const auto learner = registry().get(spec.kind);
    auto hyper = resolve_hyperparameters(spec);
    if (train.empty()) {
        fail(ErrorCode::empty_dataset, "cannot fit on an empty dataset");
    }
    train.require_labeled("fit");
    if (!learner->supports(train.schema().label)) {
        fail(ErrorCode::unsupported_label_kind, "learner '" + spec.kind + "' does not support " +
                                                    (train.schema().label.regression ? "regression" : "classification"));
    }
    ModelArtifact m;
    m.model = learner->fit(hyper, train, seed);
    m.spec = EstimatorSpec{spec.kind, std::move(hyper)};
    m.trained_on = train.size();
    m.class_histogram = detail::class_histogram(train);
    m.seed = seed;
    m.schema_fingerprint = train.schema().fingerprint();
    m.shape = ModelShape{train.schema().feature_count(), train.schema().label.class_count()};
    return m;
}

inline void check_features(const ModelArtifact& m, std::span<const double> f)
{
    if (f.size() != m.shape.n_features) {
        fail(ErrorCode::feature_mismatch, "model expects " + std::to_string(m.shape.n_features) +
                                              " features, got " + std::to_string(f.size()));
    }
}

inline Label predict(const ModelArtifact& m, std::span<const double> f)
{
    check_features(m, f);
    return m.model->predict(f);
}

inline std::vector<double> predict_proba(const ModelArtifact& m, std::span<const double> f)
{
    if (!m.is_classification()) {
        fail(ErrorCode::unsupported_label_kind, "predict_proba needs a classification model");
    }
    check_features(m, f);
    auto p = m.model->predict_proba(f);
    if (p.empty()) {
        p.assign(m.shape.n_classes, 0.0);
        p[class_of(m.model->predict(f))] = 1.0;
    }
    return p;
}

/// Classification: accuracy = correct / n with a confusion matrix.
/// Regression: accuracy counts predictions within `regression_tolerance`, plus RMSE.
inline EvalMetrics evaluate(const ModelArtifact& m, const Dataset& test, double regression_tolerance = 0.5)
{
    if (test.empty()) {
        fail(ErrorCode::empty_dataset, "cannot evaluate on an empty dataset");
    }
    test.require_labeled("evaluate");
    if (test.schema().fingerprint() != m.schema_fingerprint) {
        fail(ErrorCode::schema_mismatch, "test set schema differs from the model's");
    }
    EvalMetrics r;
    r.n = test.size();
    if (m.is_classification()) {
        const auto k = m.shape.n_classes;
        r.confusion.assign(k, std::vector<std::uint64_t>(k, 0));
        for (const auto& s : test.samples()) {
            const auto truth = class_of(*s.label);
            const auto pred = class_of(predict(m, s.features));
            ++r.confusion[truth][pred];
        }
        for (std::size_t i = 0; i < k; ++i) {
            r.correct += r.confusion[i][i];
        }
    } else {
        double sq = 0.0;
        for (const auto& s : test.samples()) {
            const double err = value_of(predict(m, s.features)) - value_of(*s.label);
            sq += err * err;
            if (std::abs(err) <= regression_tolerance) {
                ++r.correct;
            }
        }
        r.rmse = std::sqrt(sq / static_cast<double>(r.n));
    }
    r.accuracy = static_cast<double>(r.correct) / static_cast<double>(r.n);
    return r;
}

// --- serialization ----------------------------------------------------------
//
// Layout (little endian):
//   "ECLM" | u32 format_version | str kind | u64 schema_fingerprint
//   | u32 n_hyper { str name | f64 value } | u64 seed | u64 trained_on
//   | u32 n_features | u32 n_classes | u32 n_hist { u64 count }
//   | u64 param_len | param bytes | u32 crc32(all preceding bytes)

inline constexpr std::uint32_t model_format_version = 1;

inline Bytes serialize_model(const ModelArtifact& m)
{
    ByteWriter w;
    w.raw(std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>("ECLM"), 4));
    w.u32(model_format_version);
    w.str(m.spec.kind);
    w.u64(m.schema_fingerprint);
    w.u32(static_cast<std::uint32_t>(m.spec.hyperparameters.size()));
    for (const auto& [k, v] : m.spec.hyperparameters) {
        w.str(k);
        w.f64(v);
    }
    w.u64(m.seed);
    w.u64(m.trained_on);
    w.u32(static_cast<std::uint32_t>(m.shape.n_features));
    w.u32(static_cast<std::uint32_t>(m.shape.n_classes));
    w.u32(static_cast<std::uint32_t>(m.class_histogram.size()));
    for (auto c : m.class_histogram) {
        w.u64(c);
    }
    ByteWriter params;
    m.model->write(params);
    w.blob(params.bytes());
    const auto crc = crc32_of(w.bytes());
    w.u32(crc);
    return std::move(w).take();
}

inline ModelArtifact deserialize_model(std::span<const std::uint8_t> bytes)
{
    if (bytes.size() < 12 || std::memcmp(bytes.data(), "ECLM", 4) != 0) {
        fail(ErrorCode::corrupt_payload, "not a model payload");
    }
    const auto body = bytes.first(bytes.size() - 4);
    ByteReader tail(bytes.last(4));
    if (crc32_of(body) != tail.u32()) {
        fail(ErrorCode::corrupt_payload, "model checksum mismatch");
    }
    ByteReader r(body.subspan(4));
    const auto version = r.u32();
    if (version != model_format_version) {
        fail(ErrorCode::corrupt_payload, "unsupported model format version " + std::to_string(version));
    }
    ModelArtifact m;
    m.spec.kind = r.str();
    m.schema_fingerprint = r.u64();
    const auto n_hyper = r.count(12);
    for (std::size_t i = 0; i < n_hyper; ++i) {
        auto k = r.str();
        m.spec.hyperparameters[k] = r.f64();
    }
    m.seed = r.u64();
    m.trained_on = r.u64();
    m.shape.n_features = r.u32();
    m.shape.n_classes = r.u32();
    const auto n_hist = r.count(8);
    m.class_histogram.resize(n_hist);
    for (auto& c : m.class_histogram) {
        c = r.u64();
    }
    const auto params = r.blob();
    if (!r.done()) {
        fail(ErrorCode::corrupt_payload, "trailing bytes after model parameters");
    }
    const auto learner = registry().find(m.spec.kind);
    if (!learner) {
        fail(ErrorCode::unknown_kind, "model kind '" + m.spec.kind + "' is not registered");
    }
    ByteReader pr(params);
    m.model = learner->read(pr, m.shape);
    if (!pr.done()) {
        fail(ErrorCode::corrupt_payload, "trailing bytes in '" + m.spec.kind + "' parameter block");
    }
    return m;
}

// --- built-in learners ------------------------------------------------------

class MajorityModel final : public Model {
public:
    MajorityModel(std::size_t cls, std::size_t n_classes) : cls_(cls), n_classes_(n_classes) {}

    Label predict(std::span<const double>) const override { return cls_; }

    std::vector<double> predict_proba(std::span<const double>) const override
    {
        std::vector<double> p(n_classes_, 0.0);
        p[cls_] = 1.0;
        return p;
    }

    void write(ByteWriter& out) const override { out.u32(static_cast<std::uint32_t>(cls_)); }

    std::size_t majority_class() const { return cls_; }

private:
    std::size_t cls_;
    std::size_t n_classes_;
};

class MajorityLearner final : public Learner {
public:
    std::string kind() const override { return "majority"; }

    std::shared_ptr<const Model> fit(const std::map<std::string, double>&, const Dataset& train,
                                     std::uint64_t) const override
    {
        const auto h = detail::class_histogram(train);
        return std::make_shared<MajorityModel>(detail::argmax<std::uint64_t>(h), h.size());
    }

    std::shared_ptr<const Model> read(ByteReader& in, const ModelShape& shape) const override
    {
        const auto cls = in.u32();
        if (cls >= shape.n_classes) {
            fail(ErrorCode::corrupt_payload, "majority class out of range");
        }
        return std::make_shared<MajorityModel>(cls, shape.n_classes);
    }
};

/// Multinomial logistic regression on standardized features.
class LogisticModel final : public Model {
public:
    std::size_t n_features = 0;
    std::size_t n_classes = 0;
    std::vector<double> mean;    // per feature
    std::vector<double> scale;   // per feature, > 0
    std::vector<double> weights; // row-major n_classes x n_features
    std::vector<double> bias;    // per class

    std::vector<double> scores(std::span<const double> f) const
    {
        std::vector<double> z(n_classes);
        for (std::size_t k = 0; k < n_classes; ++k) {
            double acc = bias[k];
            for (std::size_t j = 0; j < n_features; ++j) {
                acc += weights[k * n_features + j] * ((f[j] - mean[j]) / scale[j]);
            }
            z[k] = acc;
        }
        return z;
    }

    Label predict(std::span<const double> f) const override
    {
        const auto s = scores(f);
        return detail::argmax<double>(s);
    }

    std::vector<double> predict_proba(std::span<const double> f) const override
    {
        auto z = scores(f);
        const double mx = *std::max_element(z.begin(), z.end());
        double sum = 0.0;
        for (auto& v : z) {
            v = std::exp(v - mx);
            sum += v;
        }
        for (auto& v : z) {
            v /= sum;
        }
        return z;
    }

    void write(ByteWriter& out) const override
    {
        out.u32(static_cast<std::uint32_t>(n_features));
        out.u32(static_cast<std::uint32_t>(n_classes));
        for (double v : mean) out.f64(v);
        for (double v : scale) out.f64(v);
        for (double v : weights) out.f64(v);
        for (double v : bias) out.f64(v);
    }
};

class LogisticLearner final : public Learner {
public:
    std::string kind() const override { return "logistic"; }

    std::vector<HyperParam> hyperparameters() const override
    {
        return {
            {"epochs", 200, true, 1, false},
            {"l2", 0.0, false, 0.0, false},
            {"learning_rate", 0.5, false, 0.0, true},
        };
    }

    std::shared_ptr<const Model> fit(const std::map<std::string, double>& hyper, const Dataset& train,
                                     std::uint64_t) const override
    {
        return train_model(hyper, train, nullptr);
    }

    /// Full-batch gradient descent from all-zero weights. A step that would
    /// raise the objective is halved until it does not, so the recorded loss
    /// (mean cross-entropy + l2/2 * |W|^2) never increases between epochs.
    static std::shared_ptr<LogisticModel> train_model(const std::map<std::string, double>& hyper,
                                                      const Dataset& train, std::vector<double>* loss_trace)
    {
        const auto& schema = train.schema();
        const std::size_t d = schema.feature_count();
        const std::size_t k = schema.label.class_count();
        const std::size_t n = train.size();
        const double lr = hyper.at("learning_rate");
        const auto epochs = static_cast<std::size_t>(hyper.at("epochs"));
        const double l2 = hyper.at("l2");

        auto m = std::make_shared<LogisticModel>();
        m->n_features = d;
        m->n_classes = k;
        m->mean.assign(d, 0.0);
        m->scale.assign(d, 1.0);
        for (const auto& s : train.samples()) {
            for (std::size_t j = 0; j < d; ++j) {
                m->mean[j] += s.features[j];
            }
        }
        for (auto& v : m->mean) {
            v /= static_cast<double>(n);
        }
        std::vector<double> var(d, 0.0);
        for (const auto& s : train.samples()) {
            for (std::size_t j = 0; j < d; ++j) {
                const double c = s.features[j] - m->mean[j];
                var[j] += c * c;
            }
        }
        for (std::size_t j = 0; j < d; ++j) {
            const double sd = std::sqrt(var[j] / static_cast<double>(n));
            m->scale[j] = sd > 0.0 ? sd : 1.0;
        }
        std::vector<double> z(n * d);
        std::vector<std::size_t> y(n);
        for (std::size_t i = 0; i < n; ++i) {
            const auto& s = train[i];
            for (std::size_t j = 0; j < d; ++j) {
                z[i * d + j] = (s.features[j] - m->mean[j]) / m->scale[j];
            }
            y[i] = class_of(*s.label);
        }
        m->weights.assign(k * d, 0.0);
        m->bias.assign(k, 0.0);

        std::vector<double> gw(k * d), gb(k), p(k);
        auto objective = [&](const std::vector<double>& w, const std::vector<double>& b, bool grad) {
            if (grad) {
                std::fill(gw.begin(), gw.end(), 0.0);
                std::fill(gb.begin(), gb.end(), 0.0);
            }
            double loss = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                const double* zi = &z[i * d];
                double mx = -std::numeric_limits<double>::infinity();
                for (std::size_t c = 0; c < k; ++c) {
                    double acc = b[c];
                    for (std::size_t j = 0; j < d; ++j) {
                        acc += w[c * d + j] * zi[j];
                    }
                    p[c] = acc;
                    mx = std::max(mx, acc);
                }
                double sum = 0.0;
                for (std::size_t c = 0; c < k; ++c) {
                    sum += std::exp(p[c] - mx);
                }
                const double lse = mx + std::log(sum);
                loss += lse - p[y[i]];
                if (grad) {
                    for (std::size_t c = 0; c < k; ++c) {
                        const double g = std::exp(p[c] - lse) - (c == y[i] ? 1.0 : 0.0);
                        gb[c] += g;
                        for (std::size_t j = 0; j < d; ++j) {
                            gw[c * d + j] += g * zi[j];
                        }
                    }
                }
            }
            const double inv_n = 1.0 / static_cast<double>(n);
            double reg = 0.0;
            for (double v : w) {
                reg += v * v;
            }
            if (grad) {
                for (std::size_t i = 0; i < gw.size(); ++i) {
                    gw[i] = gw[i] * inv_n + l2 * w[i];
                }
                for (auto& g : gb) {
                    g *= inv_n;
                }
            }
            return loss * inv_n + 0.5 * l2 * reg;
        };

        double current = objective(m->weights, m->bias, true);
        if (loss_trace) {
            loss_trace->assign(1, current);
        }
        std::vector<double> cw(k * d), cb(k);
        for (std::size_t e = 0; e < epochs; ++e) {
            double step = lr;
            bool accepted = false;
            for (int attempt = 0; attempt < 60; ++attempt) {
                for (std::size_t i = 0; i < cw.size(); ++i) {
                    cw[i] = m->weights[i] - step * gw[i];
                }
                for (std::size_t c = 0; c < k; ++c) {
                    cb[c] = m->bias[c] - step * gb[c];
                }
                const double cand = objective(cw, cb, false);
                if (cand <= current) {
                    accepted = true;
                    current = cand;
                    break;
                }
                step *= 0.5;
            }
            if (!accepted) {
                break;
            }
            m->weights.swap(cw);
            m->bias.swap(cb);
            if (loss_trace) {
                loss_trace->push_back(current);
            }
            objective(m->weights, m->bias, true);
        }
        return m;
    }

    std::shared_ptr<const Model> read(ByteReader& in, const ModelShape& shape) const override
    {
        auto m = std::make_shared<LogisticModel>();
        m->n_features = in.u32();
        m->n_classes = in.u32();
        if (m->n_features != shape.n_features || m->n_classes != shape.n_classes || m->n_classes == 0) {
            fail(ErrorCode::corrupt_payload, "logistic parameter shape disagrees with header");
        }
        const auto d = m->n_features;
        const auto k = m->n_classes;
        if (in.remaining() / 8 < 2 * d + k * d + k) {
            fail(ErrorCode::corrupt_payload, "truncated logistic parameters");
        }
        auto fill = [&](std::vector<double>& v, std::size_t count) {
            v.resize(count);
            for (auto& x : v) {
                x = in.f64();
            }
        };
        fill(m->mean, d);
        fill(m->scale, d);
        fill(m->weights, k * d);
        fill(m->bias, k);
        return m;
    }
};

/// Binary CART tree. Classification splits maximize the gini gain, compared
/// exactly in integer arithmetic; regression splits minimize squared error.
/// A sample goes left when feature < threshold.
class TreeModel final : public Model {
public:
    struct Node {
        bool leaf = true;
        std::uint32_t feature = 0;
        double threshold = 0.0;
        std::uint32_t left = 0;
        std::uint32_t right = 0;
        std::vector<std::uint64_t> counts; // classification leaves
        double value = 0.0;                // regression leaves

        bool operator==(const Node&) const = default;
    };

    std::size_t n_classes = 0;
    std::vector<Node> nodes; // nodes[0] is the root

    const Node& leaf_for(std::span<const double> f) const
    {
        const Node* n = &nodes[0];
        while (!n->leaf) {
            n = &nodes[f[n->feature] < n->threshold ? n->left : n->right];
        }
        return *n;
    }

    Label predict(std::span<const double> f) const override
    {
        const auto& leaf = leaf_for(f);
        if (n_classes == 0) {
            return leaf.value;
        }
        return detail::argmax<std::uint64_t>(leaf.counts);
    }

    std::vector<double> predict_proba(std::span<const double> f) const override
    {
        if (n_classes == 0) {
            return {};
        }
        const auto& leaf = leaf_for(f);
        const double total = static_cast<double>(std::accumulate(leaf.counts.begin(), leaf.counts.end(), std::uint64_t{0}));
        std::vector<double> p(n_classes);
        for (std::size_t c = 0; c < n_classes; ++c) {
            p[c] = static_cast<double>(leaf.counts[c]) / total;
        }
        return p;
    }

    void write(ByteWriter& out) const override
    {
        out.u32(static_cast<std::uint32_t>(nodes.size()));
        for (const auto& n : nodes) {
            out.u8(n.leaf ? 1 : 0);
            if (!n.leaf) {
                out.u32(n.feature);
                out.f64(n.threshold);
                out.u32(n.left);
                out.u32(n.right);
            } else if (n_classes > 0) {
                for (auto c : n.counts) {
                    out.u64(c);
                }
            } else {
                out.f64(n.value);
            }
        }
    }
};

struct SplitChoice {
    std::size_t feature = 0;
    double threshold = 0.0;
    std::size_t left_count = 0;
};

class TreeLearner final : public Learner {
public:
    std::string kind() const override { return "tree"; }

    std::vector<HyperParam> hyperparameters() const override
    {
        return {
            {"max_depth", 4, true, 1, false},
            {"min_leaf", 1, true, 1, false},
        };
    }

    bool supports(const LabelSpec&) const override { return true; }

    std::shared_ptr<const Model> fit(const std::map<std::string, double>& hyper, const Dataset& train,
                                     std::uint64_t) const override
    {
        auto m = std::make_shared<TreeModel>();
        m->n_classes = train.schema().label.class_count();
        Builder b{train, *m, static_cast<std::size_t>(hyper.at("max_depth")),
                  static_cast<std::size_t>(hyper.at("min_leaf"))};
        std::vector<std::size_t> idx(train.size());
        std::iota(idx.begin(), idx.end(), std::size_t{0});
        b.grow(idx, 0);
        return m;
    }

    /// Best root split for `rows` of `train`, or nullopt when no split
    /// strictly improves impurity under `min_leaf`.
    static std::optional<SplitChoice> best_split(const Dataset& train, std::span<const std::size_t> rows,
                                                 std::size_t min_leaf)
    {
        TreeModel scratch;
        scratch.n_classes = train.schema().label.class_count();
        Builder b{train, scratch, 1, min_leaf};
        return b.find_split(rows);
    }

    std::shared_ptr<const Model> read(ByteReader& in, const ModelShape& shape) const override
    {
        auto m = std::make_shared<TreeModel>();
        m->n_classes = shape.n_classes;
        const auto count = in.count(1);
        if (count == 0) {
            fail(ErrorCode::corrupt_payload, "tree has no nodes");
        }
        m->nodes.resize(count);
        for (std::size_t i = 0; i < count; ++i) {
            auto& n = m->nodes[i];
            n.leaf = in.u8() != 0;
            if (!n.leaf) {
                n.feature = in.u32();
                n.threshold = in.f64();
                n.left = in.u32();
                n.right = in.u32();
                // preorder layout: children always follow their parent
                if (n.feature >= shape.n_features || n.left <= i || n.right <= i || n.left >= count ||
                    n.right >= count) {
                    fail(ErrorCode::corrupt_payload, "tree node " + std::to_string(i) + " is malformed");
                }
            } else if (shape.n_classes > 0) {
                n.counts.resize(shape.n_classes);
                std::uint64_t total = 0;
                for (auto& c : n.counts) {
                    c = in.u64();
                    total += c;
                }
                if (total == 0) {
                    fail(ErrorCode::corrupt_payload, "tree leaf " + std::to_string(i) + " is empty");
                }
            } else {
                n.value = in.f64();
            }
        }
        return m;
    }

private:
    using u128 = unsigned __int128;

    struct Builder {
        const Dataset& data;
        TreeModel& out;
        std::size_t max_depth;
        std::size_t min_leaf;

        bool classification() const { return out.n_classes > 0; }
        double x(std::size_t row, std::size_t f) const { return data[row].features[f]; }

        std::uint32_t grow(std::vector<std::size_t>& rows, std::size_t depth)
        {
            const auto id = static_cast<std::uint32_t>(out.nodes.size());
            out.nodes.emplace_back();
            make_leaf(id, rows);
            if (depth >= max_depth || rows.size() < 2 * min_leaf || pure(rows)) {
                return id;
            }
            auto split = find_split(rows);
            if (!split) {
                return id;
            }
            std::vector<std::size_t> left, right;
            for (auto r : rows) {
                (x(r, split->feature) < split->threshold ? left : right).push_back(r);
            }
            rows.clear();
            rows.shrink_to_fit();
            auto& node = out.nodes[id];
            node.leaf = false;
            node.feature = static_cast<std::uint32_t>(split->feature);
            node.threshold = split->threshold;
            node.counts.clear();
            const auto l = grow(left, depth + 1);
            const auto r = grow(right, depth + 1);
            out.nodes[id].left = l;
            out.nodes[id].right = r;
            return id;
        }

        void make_leaf(std::uint32_t id, const std::vector<std::size_t>& rows)
        {
            auto& node = out.nodes[id];
            if (classification()) {
                node.counts.assign(out.n_classes, 0);
                for (auto r : rows) {
                    ++node.counts[class_of(*data[r].label)];
                }
            } else {
                double sum = 0.0;
                for (auto r : rows) {
                    sum += value_of(*data[r].label);
                }
                node.value = sum / static_cast<double>(rows.size());
            }
        }

        bool pure(const std::vector<std::size_t>& rows) const
        {
            const auto first = value_of(*data[rows[0]].label);
            return std::all_of(rows.begin(), rows.end(), [&](std::size_t r) { return value_of(*data[r].label) == first; });
        }

        std::optional<SplitChoice> find_split(std::span<const std::size_t> rows_in) const
        {
            const std::size_t n = rows_in.size();
            if (n < 2 || n < 2 * min_leaf) {
                return std::nullopt;
            }
            const std::size_t k = out.n_classes;
            std::vector<std::size_t> rows(rows_in.begin(), rows_in.end());
            std::optional<SplitChoice> best;

            // classification score: sum_c L_c^2 / nL + sum_c R_c^2 / nR, kept as num/den
            u128 best_num = 0, best_den = 1;
            double best_reg = 0.0;
            std::vector<std::uint64_t> total(k, 0), left(k, 0);
            double total_sum = 0.0;
            for (auto r : rows) {
                if (k > 0) {
                    ++total[class_of(*data[r].label)];
                } else {
                    total_sum += value_of(*data[r].label);
                }
            }
            if (k > 0) {
                u128 parent = 0;
                for (auto c : total) {
                    parent += static_cast<u128>(c) * c;
                }
                best_num = parent; // a split must beat parent / n
                best_den = n;
            } else {
                best_reg = total_sum * total_sum / static_cast<double>(n);
            }

            for (std::size_t f = 0; f < data.schema().feature_count(); ++f) {
                std::sort(rows.begin(), rows.end(), [&](std::size_t a, std::size_t b) {
                    const double xa = x(a, f), xb = x(b, f);
                    return xa < xb || (xa == xb && a < b);
                });
                std::fill(left.begin(), left.end(), 0);
                u128 sq_left = 0, sq_right = 0;
                if (k > 0) {
                    for (auto c : total) {
                        sq_right += static_cast<u128>(c) * c;
                    }
                }
                double left_sum = 0.0;
                for (std::size_t i = 1; i < n; ++i) {
                    const auto moved = rows[i - 1];
                    if (k > 0) {
                        const auto c = class_of(*data[moved].label);
                        const u128 lc = left[c], rc = total[c] - left[c];
                        // (l+1)^2 - l^2 = 2l+1 ; (r-1)^2 - r^2 = -(2r-1)
                        sq_left += 2 * lc + 1;
                        sq_right -= 2 * rc - 1;
                        ++left[c];
                    } else {
                        left_sum += value_of(*data[moved].label);
                    }
                    const double lo = x(rows[i - 1], f), hi = x(rows[i], f);
                    if (!(lo < hi) || i < min_leaf || n - i < min_leaf) {
                        continue;
                    }
                    const std::size_t nl = i, nr = n - i;
                    bool better;
                    if (k > 0) {
                        const u128 num = sq_left * nr + sq_right * nl;
                        const u128 den = static_cast<u128>(nl) * nr;
                        better = num * best_den > best_num * den;
                        if (better) {
                            best_num = num;
                            best_den = den;
                        }
                    } else {
                        const double right_sum = total_sum - left_sum;
                        const double score = left_sum * left_sum / static_cast<double>(nl) +
                                             right_sum * right_sum / static_cast<double>(nr);
                        better = score > best_reg;
                        if (better) {
                            best_reg = score;
                        }
                    }
                    if (better) {
                        double t = lo + (hi - lo) / 2.0;
                        if (!(t > lo)) {
                            t = hi;
                        }
                        best = SplitChoice{f, t, nl};
                    }
                }
            }
            return best;
        }
    };
};

inline LearnerRegistry& registry()
{
    static LearnerRegistry* r = [] {
        auto* reg = new LearnerRegistry();
        reg->add(std::make_shared<MajorityLearner>());
        reg->add(std::make_shared<LogisticLearner>());
        reg->add(std::make_shared<TreeLearner>());
        return reg;
    }();
    return *r;
}

} // namespace ecll
