#include "mirag/errors.hpp"

namespace mirag {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "InvalidArgument";
    case ErrorCode::kIo: return "IoError";
    case ErrorCode::kZeroVector: return "ZeroVector";
    case ErrorCode::kEmptyInput: return "EmptyInput";
    case ErrorCode::kRemote: return "RemoteError";
    case ErrorCode::kEmptyCorpus: return "EmptyCorpus";
    case ErrorCode::kEmbedding: return "EmbeddingError";
    case ErrorCode::kImageRead: return "ImageReadError";
    case ErrorCode::kCorruptBundle: return "CorruptBundle";
    case ErrorCode::kFingerprintMismatch: return "FingerprintMismatch";
    case ErrorCode::kDimensionMismatch: return "DimensionMismatch";
    case ErrorCode::kTimeout: return "Timeout";
    case ErrorCode::kRateLimited: return "RateLimited";
    case ErrorCode::kMalformedResponse: return "MalformedResponse";
    case ErrorCode::kScriptMiss: return "ScriptMiss";
    case ErrorCode::kMissingSlot: return "MissingSlot";
    case ErrorCode::kParseFailure: return "ParseFailure";
    case ErrorCode::kSchema: return "SchemaError";
    case ErrorCode::kDuplicateId: return "DuplicateId";
    case ErrorCode::kMissingImage: return "MissingImage";
    case ErrorCode::kUnknownDocId: return "UnknownDocId";
    case ErrorCode::kGoldMismatch: return "GoldMismatch";
  }
  return "Unknown";
}

Error::Error(ErrorCode code, const std::string& message)
    : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

bool is_retryable_status(int status) noexcept {
  return status == 0 || status == 408 || status == 429 || (status >= 500 && status < 600);
}

RemoteError::RemoteError(int status, std::string body)
    : Error(status == 429 ? ErrorCode::kRateLimited
                          : (status == 0 || status == 408 ? ErrorCode::kTimeout : ErrorCode::kRemote),
            "status " + std::to_string(status) + ": " + body),
      status_(status),
      body_(std::move(body)) {}

bool RemoteError::retryable() const noexcept { return is_retryable_status(status_); }

}  // namespace mirag
