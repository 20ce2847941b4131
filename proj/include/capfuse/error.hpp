#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace capfuse {

enum class Errc {
    ZeroNorm,
    DimMismatch,
    DegenerateMean,
    CorruptManifest,
    BadMagic,
    TruncatedBlob,
    NoCaptions,
    EmptySlot,
    ProviderError,
    AuthMissing,
    Reject,
    MissingEmbedding,
    ShapeMismatch,
    EmptyClassCaptions,
    EmptySplit,
    VocabLoadError,
    EmptyHistory,
    IoError,
    ConfigError,
    InvalidArgument,
};

inline std::string_view errc_name(Errc c) noexcept {
    switch (c) {
    case Errc::ZeroNorm: return "ZeroNorm";
    case Errc::DimMismatch: return "DimMismatch";
    case Errc::DegenerateMean: return "DegenerateMean";
    case Errc::CorruptManifest: return "CorruptManifest";
    case Errc::BadMagic: return "BadMagic";
    case Errc::TruncatedBlob: return "TruncatedBlob";
    case Errc::NoCaptions: return "NoCaptions";
    case Errc::EmptySlot: return "EmptySlot";
    case Errc::ProviderError: return "ProviderError";
    case Errc::AuthMissing: return "AuthMissing";
    case Errc::Reject: return "Reject";
    case Errc::MissingEmbedding: return "MissingEmbedding";
    case Errc::ShapeMismatch: return "ShapeMismatch";
    case Errc::EmptyClassCaptions: return "EmptyClassCaptions";
    case Errc::EmptySplit: return "EmptySplit";
    case Errc::VocabLoadError: return "VocabLoadError";
    case Errc::EmptyHistory: return "EmptyHistory";
    case Errc::IoError: return "IoError";
    case Errc::ConfigError: return "ConfigError";
    case Errc::InvalidArgument: return "InvalidArgument";
    }
    return "Unknown";
}

/// Every failure raised by the library carries one of the codes above so
/// callers (the CLI in particular) can map it to an exit status.
class Error : public std::runtime_error {
public:
    Error(Errc code, const std::string& what)
        : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code) {}

    Errc code() const noexcept { return code_; }

private:
    Errc code_;
};

[[noreturn]] inline void fail(Errc code, const std::string& what) { throw Error(code, what); }

} // namespace capfuse
