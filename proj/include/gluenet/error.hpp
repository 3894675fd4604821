#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace gluenet {

enum class ErrorKind {
  kDimension,
  kNumeric,
  kContract,
  kConfig,
  kDegenerateWeights,
  kEmptyBatch,
  kFusionWindow,
  kIo,
  kBadMagic,
  kVersion,
  kTruncated,
  kOverflow,
  kDuplicateId,
  kCountMismatch,
  kEmptyJoin,
  kDigest,
};

inline std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kDimension: return "dimension";
    case ErrorKind::kNumeric: return "numeric";
    case ErrorKind::kContract: return "contract";
    case ErrorKind::kConfig: return "config";
    case ErrorKind::kDegenerateWeights: return "degenerate_weights";
    case ErrorKind::kEmptyBatch: return "empty_batch";
    case ErrorKind::kFusionWindow: return "fusion_window";
    case ErrorKind::kIo: return "io";
    case ErrorKind::kBadMagic: return "bad_magic";
    case ErrorKind::kVersion: return "version";
    case ErrorKind::kTruncated: return "truncated";
    case ErrorKind::kOverflow: return "overflow";
    case ErrorKind::kDuplicateId: return "duplicate_id";
    case ErrorKind::kCountMismatch: return "count_mismatch";
    case ErrorKind::kEmptyJoin: return "empty_join";
    case ErrorKind::kDigest: return "digest";
  }
  return "unknown";
}

/// Every failure raised by the library carries a kind so callers (the CLI in
/// particular) can map it to a stable exit code without parsing messages.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) {
  throw Error(kind, what);
}

inline void require(bool cond, ErrorKind kind, const std::string& what) {
  if (!cond) fail(kind, what);
}

}  // namespace gluenet
