#include "capgen/error.hpp"

namespace capgen {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kShapeMismatch: return "ShapeMismatch";
    case ErrorCode::kNonFinite: return "NonFinite";
    case ErrorCode::kDisconnectedGraph: return "DisconnectedGraph";
    case ErrorCode::kSpecialTokenCollision: return "SpecialTokenCollision";
    case ErrorCode::kEmptyCorpus: return "EmptyCorpus";
    case ErrorCode::kMalformedHeader: return "MalformedHeader";
    case ErrorCode::kTruncatedPayload: return "TruncatedPayload";
    case ErrorCode::kImageTooSmall: return "ImageTooSmall";
    case ErrorCode::kBadMagic: return "BadMagic";
    case ErrorCode::kUnsupportedVersion: return "UnsupportedVersion";
    case ErrorCode::kDuplicateImageId: return "DuplicateImageId";
    case ErrorCode::kTooManySources: return "TooManySources";
    case ErrorCode::kPrefixTooLong: return "PrefixTooLong";
    case ErrorCode::kMismatchedIds: return "MismatchedIds";
    case ErrorCode::kMissingReferences: return "MissingReferences";
    case ErrorCode::kUnknownMode: return "UnknownMode";
    case ErrorCode::kTooFewCandidates: return "TooFewCandidates";
    case ErrorCode::kEmptyMatrix: return "EmptyMatrix";
    case ErrorCode::kLengthMismatch: return "LengthMismatch";
    case ErrorCode::kEmptySplit: return "EmptySplit";
    case ErrorCode::kInvalidArgument: return "InvalidArgument";
    case ErrorCode::kIo: return "Io";
  }
  return "Unknown";
}

}  // namespace capgen
