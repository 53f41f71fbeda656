#pragma once

#include <stdexcept>
#include <string>

namespace fsad {

enum class ErrorKind {
    NotFound,
    SchemaViolation,
    InvalidSpec,
    DecodeError,
    InsufficientData,
    NumericalError,
    ConfigError,
    ShapeError,
    OracleError,
    InvalidInput,
    UndefinedMetric,
    IoError,
};

const char* to_string(ErrorKind kind);

// Single exception type for the library; callers dispatch on kind().
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message)
        : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind), message_(message) {}

    ErrorKind kind() const noexcept { return kind_; }
    // The message without the kind prefix, for re-raising with more context.
    const std::string& message() const noexcept { return message_; }

private:
    ErrorKind kind_;
    std::string message_;
};

inline const char* to_string(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::NotFound: return "NotFound";
        case ErrorKind::SchemaViolation: return "SchemaViolation";
        case ErrorKind::InvalidSpec: return "InvalidSpec";
        case ErrorKind::DecodeError: return "DecodeError";
        case ErrorKind::InsufficientData: return "InsufficientData";
        case ErrorKind::NumericalError: return "NumericalError";
        case ErrorKind::ConfigError: return "ConfigError";
        case ErrorKind::ShapeError: return "ShapeError";
        case ErrorKind::OracleError: return "OracleError";
        case ErrorKind::InvalidInput: return "InvalidInput";
        case ErrorKind::UndefinedMetric: return "UndefinedMetric";
        case ErrorKind::IoError: return "IoError";
    }
    return "Unknown";
}

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
    throw Error(kind, message);
}

}  // namespace fsad
