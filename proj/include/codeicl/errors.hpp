#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace codeicl {

enum class ErrorCode {
    // usage
    Usage,
    // data
    Schema,
    LabelMap,
    Join,
    UnknownTransformation,
    SubsetTooLarge,
    InsufficientPool,
    UnbalancedK,
    OddShotCount,
    InsufficientPairs,
    UnknownSubtask,
    UnsupportedStyle,
    MissingRationale,
    EmptyInput,
    EmptyTarget,
    MismatchedConfig,
    InvalidSpec,
    Io,
    // backend
    Transport,
    Auth,
    Provider,
    PromptTooLong,
    Capability,
};

enum class ErrorCategory { Usage, Data, Backend };

ErrorCategory category_of(ErrorCode code) noexcept;
std::string_view to_string(ErrorCode code) noexcept;

/// Process exit status for an error: 2 usage, 3 data, 4 backend.
int exit_code_for(ErrorCode code) noexcept;

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message);

    ErrorCode code() const noexcept { return code_; }
    ErrorCategory category() const noexcept { return category_of(code_); }

private:
    ErrorCode code_;
};

/// Non-2xx reply from a model provider. status is 0 when no HTTP status applies.
class ProviderError : public Error {
public:
    ProviderError(int status, std::string body, ErrorCode code = ErrorCode::Provider);

    int status() const noexcept { return status_; }
    const std::string& body() const noexcept { return body_; }

private:
    int status_;
    std::string body_;
};

[[noreturn]] void fail(ErrorCode code, const std::string& message);

} // namespace codeicl
