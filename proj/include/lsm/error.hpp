#pragma once

#include <stdexcept>
#include <string>

namespace lsm {

enum class ErrorCode {
    InvalidArgument,
    ShapeMismatch,
    WidthMismatch,
    NoForeground,
    ZeroNormEmbedding,
    MissingComponent,
    EmptyDataset,
    NonFiniteLoss,
    NonFiniteGradient,
    VersionMismatch,
    CorruptFile,
    IoError,
};

const char* to_string(ErrorCode code);

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& what)
        : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

inline const char* to_string(ErrorCode code) {
    switch (code) {
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::WidthMismatch: return "WidthMismatch";
    case ErrorCode::NoForeground: return "NoForeground";
    case ErrorCode::ZeroNormEmbedding: return "ZeroNormEmbedding";
    case ErrorCode::MissingComponent: return "MissingComponent";
    case ErrorCode::EmptyDataset: return "EmptyDataset";
    case ErrorCode::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::NonFiniteGradient: return "NonFiniteGradient";
    case ErrorCode::VersionMismatch: return "VersionMismatch";
    case ErrorCode::CorruptFile: return "CorruptFile";
    case ErrorCode::IoError: return "IoError";
    }
    return "Unknown";
}

inline void require(bool cond, ErrorCode code, const std::string& what) {
    if (!cond) throw Error(code, what);
}

} // namespace lsm
