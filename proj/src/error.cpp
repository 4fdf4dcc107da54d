/**
 * @file error.cpp
 */
#include "mft/error.h"

namespace mft {

const char* error_code_name(ErrorCode code) {
    switch (code) {
        case ErrorCode::InvalidArgument: return "InvalidArgument";
        case ErrorCode::ShapeMismatch: return "ShapeMismatch";
        case ErrorCode::IndexOutOfRange: return "IndexOutOfRange";
        case ErrorCode::AllTargetsIgnored: return "AllTargetsIgnored";
        case ErrorCode::NotScalar: return "NotScalar";
        case ErrorCode::NoTape: return "NoTape";
        case ErrorCode::SequenceTooLong: return "SequenceTooLong";
        case ErrorCode::NoTargetsMatched: return "NoTargetsMatched";
        case ErrorCode::MissingGradient: return "MissingGradient";
        case ErrorCode::InvalidConfig: return "InvalidConfig";
        case ErrorCode::BadMagic: return "BadMagic";
        case ErrorCode::BadHeader: return "BadHeader";
        case ErrorCode::MissingTensor: return "MissingTensor";
        case ErrorCode::UnsupportedFormat: return "UnsupportedFormat";
        case ErrorCode::Io: return "Io";
        case ErrorCode::AssetMissing: return "AssetMissing";
        case ErrorCode::BudgetTooSmall: return "BudgetTooSmall";
        case ErrorCode::EmptyDataset: return "EmptyDataset";
        case ErrorCode::ParseError: return "ParseError";
    }
    return "Unknown";
}

void fail(ErrorCode code, const std::string& message) {
    throw Error(code, message);
}

}  // namespace mft
