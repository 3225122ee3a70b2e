#pragma once

#include <stdexcept>
#include <string>

namespace randreg {

enum class ErrorCode {
    DimensionMismatch,
    InvalidArgument,
    NotPositiveDefinite,
    UnregisteredPoint,
    DuplicatePoints,
    IncompatibleConfiguration,
    NotStronglyConvex,
    InsufficientData,
    Config,
    Io,
    SolverAbort,
};

inline const char* to_string(ErrorCode code) {
    switch (code) {
        case ErrorCode::DimensionMismatch: return "dimension mismatch";
        case ErrorCode::InvalidArgument: return "invalid argument";
        case ErrorCode::NotPositiveDefinite: return "not positive definite";
        case ErrorCode::UnregisteredPoint: return "unregistered point";
        case ErrorCode::DuplicatePoints: return "duplicate points";
        case ErrorCode::IncompatibleConfiguration: return "incompatible configuration";
        case ErrorCode::NotStronglyConvex: return "not strongly convex";
        case ErrorCode::InsufficientData: return "insufficient data";
        case ErrorCode::Config: return "config";
        case ErrorCode::Io: return "io";
        case ErrorCode::SolverAbort: return "solver abort";
    }
    return "unknown";
}

/// Structured library error. Every failure the library reports carries a code.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

    [[nodiscard]] ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

inline void require(bool condition, ErrorCode code, const std::string& message) {
    if (!condition) throw Error(code, message);
}

}  // namespace randreg
