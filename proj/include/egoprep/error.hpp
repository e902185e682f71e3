#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace egoprep {

/// Failure categories shared by every module.
enum class Errc {
    NotSymmetric,
    NoConvergence,
    BadSpectrum,
    NotOrthonormal,
    RankDeficient,
    DimMismatch,
    EmptyBatch,
    ParseError,
    RangeError,
    Infeasible,
    NonFinite,
    NonFiniteGradient,
    ShapeMismatch,
    IoError,
    FormatError,
    OverlapError,
    StepOutOfRange,
    BadBounds,
    EmptySweep,
    ZeroSpectrum,
    NotUnit,
    ConfigError,
};

constexpr std::string_view errc_name(Errc c) noexcept {
    switch (c) {
    case Errc::NotSymmetric: return "NotSymmetric";
    case Errc::NoConvergence: return "NoConvergence";
    case Errc::BadSpectrum: return "BadSpectrum";
    case Errc::NotOrthonormal: return "NotOrthonormal";
    case Errc::RankDeficient: return "RankDeficient";
    case Errc::DimMismatch: return "DimMismatch";
    case Errc::EmptyBatch: return "EmptyBatch";
    case Errc::ParseError: return "ParseError";
    case Errc::RangeError: return "RangeError";
    case Errc::Infeasible: return "Infeasible";
    case Errc::NonFinite: return "NonFinite";
    case Errc::NonFiniteGradient: return "NonFiniteGradient";
    case Errc::ShapeMismatch: return "ShapeMismatch";
    case Errc::IoError: return "IoError";
    case Errc::FormatError: return "FormatError";
    case Errc::OverlapError: return "OverlapError";
    case Errc::StepOutOfRange: return "StepOutOfRange";
    case Errc::BadBounds: return "BadBounds";
    case Errc::EmptySweep: return "EmptySweep";
    case Errc::ZeroSpectrum: return "ZeroSpectrum";
    case Errc::NotUnit: return "NotUnit";
    case Errc::ConfigError: return "ConfigError";
    }
    return "Unknown";
}

class Error : public std::runtime_error {
public:
    Error(Errc code, const std::string& what)
        : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code) {}

    Errc code() const noexcept { return code_; }

private:
    Errc code_;
};

[[noreturn]] inline void fail(Errc code, const std::string& what) { throw Error(code, what); }

inline void require(bool cond, Errc code, const std::string& what) {
    if (!cond) fail(code, what);
}

} // namespace egoprep
