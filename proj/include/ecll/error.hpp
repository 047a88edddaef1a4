#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace ecll {

enum class ErrorCode {
    invalid_argument,
    duplicate_column,
    duplicate_class,
    empty_class_list,
    bad_bucket_edges,
    missing_column,
    bad_numeric,
    unknown_class,
    malformed_csv,
    empty_dataset,
    unlabeled_sample,
    unsupported_label_kind,
    feature_mismatch,
    schema_mismatch,
    unknown_hyperparameter,
    bad_hyperparameter,
    unknown_kind,
    corrupt_payload,
    corrupt_store,
    io_failure,
    nothing_deployable,
    illegal_phase,
    key_not_found,
    no_model,
    zero_baseline,
    invalid_config,
};

inline std::string_view to_string(ErrorCode code)
{
    switch (code) {
    case ErrorCode::invalid_argument: return "invalid-argument";
    case ErrorCode::duplicate_column: return "duplicate-column";
    case ErrorCode::duplicate_class: return "duplicate-class";
    case ErrorCode::empty_class_list: return "empty-class-list";
    case ErrorCode::bad_bucket_edges: return "bad-bucket-edges";
    case ErrorCode::missing_column: return "missing-column";
    case ErrorCode::bad_numeric: return "bad-numeric";
    case ErrorCode::unknown_class: return "unknown-class";
    case ErrorCode::malformed_csv: return "malformed-csv";
    case ErrorCode::empty_dataset: return "empty-dataset";
    case ErrorCode::unlabeled_sample: return "unlabeled-sample";
    case ErrorCode::unsupported_label_kind: return "unsupported-label-kind";
    case ErrorCode::feature_mismatch: return "feature-mismatch";
    case ErrorCode::schema_mismatch: return "schema-mismatch";
    case ErrorCode::unknown_hyperparameter: return "unknown-hyperparameter";
    case ErrorCode::bad_hyperparameter: return "bad-hyperparameter";
    case ErrorCode::unknown_kind: return "unknown-kind";
    case ErrorCode::corrupt_payload: return "corrupt-payload";
    case ErrorCode::corrupt_store: return "corrupt-store";
    case ErrorCode::io_failure: return "io-failure";
    case ErrorCode::nothing_deployable: return "nothing-deployable";
    case ErrorCode::illegal_phase: return "illegal-phase";
    case ErrorCode::key_not_found: return "key-not-found";
    case ErrorCode::no_model: return "no-model";
    case ErrorCode::zero_baseline: return "zero-baseline";
    case ErrorCode::invalid_config: return "invalid-config";
    }
    return "unknown";
}

/// Every failure raised by the library carries a machine-checkable code.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& what)
        : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code)
    {
    }

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what)
{
    throw Error(code, what);
}

} // namespace ecll
