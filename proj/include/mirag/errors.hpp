#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace mirag {

enum class ErrorCode {
  kInvalidArgument,
  kIo,
  kZeroVector,
  kEmptyInput,
  kRemote,
  kEmptyCorpus,
  kEmbedding,
  kImageRead,
  kCorruptBundle,
  kFingerprintMismatch,
  kDimensionMismatch,
  kTimeout,
  kRateLimited,
  kMalformedResponse,
  kScriptMiss,
  kMissingSlot,
  kParseFailure,
  kSchema,
  kDuplicateId,
  kMissingImage,
  kUnknownDocId,
  kGoldMismatch,
};

std::string_view to_string(ErrorCode code);

/// Base exception for every failure raised by the library. The code is the
/// stable discriminator; the message is for humans.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message);

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

/// Non-2xx reply (or transport failure, status 0) from a remote service.
class RemoteError : public Error {
 public:
  RemoteError(int status, std::string body);

  int status() const noexcept { return status_; }
  const std::string& body() const noexcept { return body_; }

  /// 408, 429, 5xx and transport failures are worth another attempt.
  bool retryable() const noexcept;

 private:
  int status_;
  std::string body_;
};

bool is_retryable_status(int status) noexcept;

}  // namespace mirag
