#include "demspec/error.hpp"

namespace demspec {

std::string_view error_code_name(ErrorCode code) {
    switch (code) {
        case ErrorCode::usage: return "USAGE";
        case ErrorCode::invalid_argument: return "INVALID_ARGUMENT";
        case ErrorCode::parse_error: return "PARSE_ERROR";
        case ErrorCode::empty_subset: return "EMPTY_SUBSET";
        case ErrorCode::insufficient_data: return "INSUFFICIENT_DATA";
        case ErrorCode::missing_label: return "MISSING_LABEL";
        case ErrorCode::label_cardinality: return "LABEL_CARDINALITY";
        case ErrorCode::out_of_vocabulary: return "OUT_OF_VOCABULARY";
        case ErrorCode::non_finite: return "NON_FINITE";
        case ErrorCode::unknown_category: return "UNKNOWN_CATEGORY";
        case ErrorCode::digest_mismatch: return "DIGEST_MISMATCH";
        case ErrorCode::resource_missing: return "RESOURCE_MISSING";
        case ErrorCode::io_error: return "IO_ERROR";
    }
    return "UNKNOWN";
}

ExitCode exit_code_for(ErrorCode code) {
    switch (code) {
        case ErrorCode::usage: return ExitCode::usage;
        case ErrorCode::resource_missing:
        case ErrorCode::io_error: return ExitCode::missing;
        default: return ExitCode::contract;
    }
}

}  // namespace demspec
