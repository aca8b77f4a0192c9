#pragma once

#include <stdexcept>
#include <string>

namespace slhsi {

enum class ErrorCode {
    InvalidArgument,
    DegenerateProjection,
    DegenerateTriangulation,
    BehindCamera,
    RankDeficientHomography,
    PadRequired,
    Divergence,
    AmbiguousFiberMapping,
    EmptyBand,
    ReferenceBelowFloor,
    RankDeficientFit,
    Io,
};

/// Exception type thrown by every module. The code lets callers branch on
/// the failure kind without string matching.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(message), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

}  // namespace slhsi
