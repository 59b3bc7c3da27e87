#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace glmperm {

enum class ErrorKind {
    // numerical
    RankDeficient,
    NotSymmetric,
    DomainError,
    NonConvergence,
    ZeroVariance,
    ZeroResidualVariance,
    RankTooLow,
    DegenerateQ,
    InfeasibleMask,
    // input / contract
    InvalidInput,
    InvalidLevel,
    InsufficientReplication,
    MissingDataPresent,
    EmptyColumn,
    EmptyCell,
    InfeasibleFraction,
    DegenerateGroup,
    NonPositiveInput,
    TooFewObservations,
    InvalidP,
};

constexpr std::string_view to_string(ErrorKind kind) noexcept {
    switch (kind) {
    case ErrorKind::RankDeficient: return "RankDeficient";
    case ErrorKind::NotSymmetric: return "NotSymmetric";
    case ErrorKind::DomainError: return "DomainError";
    case ErrorKind::NonConvergence: return "NonConvergence";
    case ErrorKind::ZeroVariance: return "ZeroVariance";
    case ErrorKind::ZeroResidualVariance: return "ZeroResidualVariance";
    case ErrorKind::RankTooLow: return "RankTooLow";
    case ErrorKind::DegenerateQ: return "DegenerateQ";
    case ErrorKind::InfeasibleMask: return "InfeasibleMask";
    case ErrorKind::InvalidInput: return "InvalidInput";
    case ErrorKind::InvalidLevel: return "InvalidLevel";
    case ErrorKind::InsufficientReplication: return "InsufficientReplication";
    case ErrorKind::MissingDataPresent: return "MissingDataPresent";
    case ErrorKind::EmptyColumn: return "EmptyColumn";
    case ErrorKind::EmptyCell: return "EmptyCell";
    case ErrorKind::InfeasibleFraction: return "InfeasibleFraction";
    case ErrorKind::DegenerateGroup: return "DegenerateGroup";
    case ErrorKind::NonPositiveInput: return "NonPositiveInput";
    case ErrorKind::TooFewObservations: return "TooFewObservations";
    case ErrorKind::InvalidP: return "InvalidP";
    }
    return "Unknown";
}

/// True for failures caused by the numbers themselves rather than by a
/// malformed request. The CLI maps these to exit code 3.
constexpr bool is_numerical(ErrorKind kind) noexcept {
    switch (kind) {
    case ErrorKind::RankDeficient:
    case ErrorKind::NotSymmetric:
    case ErrorKind::DomainError:
    case ErrorKind::NonConvergence:
    case ErrorKind::ZeroVariance:
    case ErrorKind::ZeroResidualVariance:
    case ErrorKind::RankTooLow:
    case ErrorKind::DegenerateQ:
    case ErrorKind::InfeasibleMask:
        return true;
    default:
        return false;
    }
}

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message)
        : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
    throw Error(kind, message);
}

inline void require(bool condition, ErrorKind kind, const std::string& message) {
    if (!condition) fail(kind, message);
}

} // namespace glmperm
