#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace capgen {

enum class ErrorCode {
  kShapeMismatch,
  kNonFinite,
  kDisconnectedGraph,
  kSpecialTokenCollision,
  kEmptyCorpus,
  kMalformedHeader,
  kTruncatedPayload,
  kImageTooSmall,
  kBadMagic,
  kUnsupportedVersion,
  kDuplicateImageId,
  kTooManySources,
  kPrefixTooLong,
  kMismatchedIds,
  kMissingReferences,
  kUnknownMode,
  kTooFewCandidates,
  kEmptyMatrix,
  kLengthMismatch,
  kEmptySplit,
  kInvalidArgument,
  kIo,
};

std::string_view to_string(ErrorCode code);

// Single exception type for the library; callers branch on code().
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace capgen
