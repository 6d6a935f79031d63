#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace demspec {

// Exit codes shared by every CLI subcommand.
enum class ExitCode : int {
    ok = 0,
    usage = 2,
    contract = 3,
    missing = 4,
};

enum class ErrorCode {
    usage,
    invalid_argument,
    parse_error,
    empty_subset,
    insufficient_data,
    missing_label,
    label_cardinality,
    out_of_vocabulary,
    non_finite,
    unknown_category,
    digest_mismatch,
    resource_missing,
    io_error,
};

std::string_view error_code_name(ErrorCode code);
ExitCode exit_code_for(ErrorCode code);

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(message), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
    throw Error(code, message);
}

inline void require(bool condition, ErrorCode code, const std::string& message) {
    if (!condition) fail(code, message);
}

}  // namespace demspec
