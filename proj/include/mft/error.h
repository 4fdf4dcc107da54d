/**
 * @file error.h
 * @brief Error codes and the exception type shared by every module.
 */
#pragma once

#include <stdexcept>
#include <string>

namespace mft {

enum class ErrorCode {
    InvalidArgument = 1,
    ShapeMismatch,
    IndexOutOfRange,
    AllTargetsIgnored,
    NotScalar,
    NoTape,
    SequenceTooLong,
    NoTargetsMatched,
    MissingGradient,
    InvalidConfig,
    BadMagic,
    BadHeader,
    MissingTensor,
    UnsupportedFormat,
    Io,
    AssetMissing,
    BudgetTooSmall,
    EmptyDataset,
    ParseError,
};

const char* error_code_name(ErrorCode code);

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(message), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

[[noreturn]] void fail(ErrorCode code, const std::string& message);

}  // namespace mft
