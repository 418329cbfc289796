#include "codeicl/errors.hpp"

namespace codeicl {

ErrorCategory category_of(ErrorCode code) noexcept {
    switch (code) {
    case ErrorCode::Usage:
        return ErrorCategory::Usage;
    case ErrorCode::Transport:
    case ErrorCode::Auth:
    case ErrorCode::Provider:
    case ErrorCode::PromptTooLong:
    case ErrorCode::Capability:
        return ErrorCategory::Backend;
    default:
        return ErrorCategory::Data;
    }
}

std::string_view to_string(ErrorCode code) noexcept {
    switch (code) {
    case ErrorCode::Usage: return "UsageError";
    case ErrorCode::Schema: return "SchemaError";
    case ErrorCode::LabelMap: return "LabelMapError";
    case ErrorCode::Join: return "JoinError";
    case ErrorCode::UnknownTransformation: return "UnknownTransformation";
    case ErrorCode::SubsetTooLarge: return "SubsetTooLarge";
    case ErrorCode::InsufficientPool: return "InsufficientPool";
    case ErrorCode::UnbalancedK: return "UnbalancedK";
    case ErrorCode::OddShotCount: return "OddShotCount";
    case ErrorCode::InsufficientPairs: return "InsufficientPairs";
    case ErrorCode::UnknownSubtask: return "UnknownSubtask";
    case ErrorCode::UnsupportedStyle: return "UnsupportedStyle";
    case ErrorCode::MissingRationale: return "MissingRationale";
    case ErrorCode::EmptyInput: return "EmptyInput";
    case ErrorCode::EmptyTarget: return "EmptyTarget";
    case ErrorCode::MismatchedConfig: return "MismatchedConfig";
    case ErrorCode::InvalidSpec: return "InvalidSpec";
    case ErrorCode::Io: return "IoError";
    case ErrorCode::Transport: return "TransportError";
    case ErrorCode::Auth: return "AuthError";
    case ErrorCode::Provider: return "ProviderError";
    case ErrorCode::PromptTooLong: return "PromptTooLong";
    case ErrorCode::Capability: return "CapabilityError";
    }
    return "Error";
}

int exit_code_for(ErrorCode code) noexcept {
    switch (category_of(code)) {
    case ErrorCategory::Usage: return 2;
    case ErrorCategory::Data: return 3;
    case ErrorCategory::Backend: return 4;
    }
    return 1;
}

Error::Error(ErrorCode code, const std::string& message)
    : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

ProviderError::ProviderError(int status, std::string body, ErrorCode code)
    : Error(code, "status " + std::to_string(status) + ": " + body),
      status_(status),
      body_(std::move(body)) {}

void fail(ErrorCode code, const std::string& message) {
    throw Error(code, message);
}

} // namespace codeicl
