#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace ccadj {

enum class ErrorKind {
    InvalidParams,
    DegenerateConstraint,
    InfeasiblePrevalence,
    BracketFailure,
    ZeroCell,
    ZeroMargin,
    Separation,
    NonConvergence,
    InfeasibleStart,
    BoundaryEstimate,
    NotConverged,
    VacuousMinimizer,
    SingularInformation,
    AllReplicatesFailed,
};

inline constexpr std::string_view to_string(ErrorKind kind) {
    switch (kind) {
    case ErrorKind::InvalidParams: return "InvalidParams";
    case ErrorKind::DegenerateConstraint: return "DegenerateConstraint";
    case ErrorKind::InfeasiblePrevalence: return "InfeasiblePrevalence";
    case ErrorKind::BracketFailure: return "BracketFailure";
    case ErrorKind::ZeroCell: return "ZeroCell";
    case ErrorKind::ZeroMargin: return "ZeroMargin";
    case ErrorKind::Separation: return "Separation";
    case ErrorKind::NonConvergence: return "NonConvergence";
    case ErrorKind::InfeasibleStart: return "InfeasibleStart";
    case ErrorKind::BoundaryEstimate: return "BoundaryEstimate";
    case ErrorKind::NotConverged: return "NotConverged";
    case ErrorKind::VacuousMinimizer: return "VacuousMinimizer";
    case ErrorKind::SingularInformation: return "SingularInformation";
    case ErrorKind::AllReplicatesFailed: return "AllReplicatesFailed";
    }
    return "Unknown";
}

/// Every failure raised by the library carries a machine-readable kind.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what)
        : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

} // namespace ccadj
