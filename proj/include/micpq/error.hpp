#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace micpq {

enum class ErrorCode {
    BadMagic,
    TruncatedFile,
    NonFiniteValue,
    IoFailure,
    LengthMismatch,
    NonContiguousClasses,
    InvalidSpec,
    DimMismatch,
    NonFiniteInput,
    NonPositiveTemperature,
    KNotPowerOfTwo,
    IndexOutOfRange,
    ZeroNorm,
    TooLargeToEnumerate,
    RowNotNormalized,
    InvalidConfig,
    NonFiniteGradient,
    VersionMismatch,
    EmptyIndex,
    ConfigMismatch,
    KNot2,
    UnknownDocId,
    TooFewPoints,
};

std::string_view to_string(ErrorCode code) noexcept;

/// Every failure surfaced by the library. The code is stable and testable;
/// the message carries human-readable context (byte offsets, dimensions).
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

}  // namespace micpq
