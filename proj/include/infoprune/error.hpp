#pragma once

#include <stdexcept>
#include <string>

namespace infoprune {

/// Library-wide exception. `kind()` identifies the failure class so callers
/// (and the CLI exit-code mapping) can dispatch without string matching.
class Error : public std::runtime_error {
public:
    enum class Kind {
        DimensionMismatch,
        ConvergenceFailure,
        DegenerateSingularValue,
        ZeroSpectrum,
        EmptySpectrum,
        InvalidRankPair,
        InvalidRank,
        ZeroNorm,
        InvalidConfig,
        InvalidHeadIndex,
        InvalidThreshold,
        MissingGates,
        NonFiniteLoss,
        NonFiniteValue,
        ShapeMismatch,
        IoError,
        OversizeTensor,
        BadMagic,
        UnsupportedVersion,
        CorruptHeader,
        TruncatedData,
    };

    Error(Kind kind, const std::string& message)
        : std::runtime_error(message), kind_(kind) {}

    Kind kind() const noexcept { return kind_; }

    /// true for failures caused by malformed user input / config.
    bool isValidation() const noexcept {
        switch (kind_) {
        case Kind::DimensionMismatch:
        case Kind::InvalidRankPair:
        case Kind::InvalidRank:
        case Kind::InvalidConfig:
        case Kind::InvalidHeadIndex:
        case Kind::InvalidThreshold:
        case Kind::MissingGates:
        case Kind::ShapeMismatch:
            return true;
        default:
            return false;
        }
    }

    /// true for failures while reading or writing files.
    bool isIo() const noexcept {
        switch (kind_) {
        case Kind::IoError:
        case Kind::OversizeTensor:
        case Kind::BadMagic:
        case Kind::UnsupportedVersion:
        case Kind::CorruptHeader:
        case Kind::TruncatedData:
            return true;
        default:
            return false;
        }
    }

private:
    Kind kind_;
};

[[noreturn]] inline void raise(Error::Kind kind, const std::string& message) {
    throw Error(kind, message);
}

} // namespace infoprune
