#pragma once

#include <chrono>
#include <cstdint>
#include <map>
#include <memory>
#include <string>

namespace mirag {

struct RetryPolicy {
  int max_attempts = 4;
  std::chrono::milliseconds initial_backoff{500};
  double multiplier = 2.0;
  std::chrono::milliseconds max_backoff{8000};

  /// Delay before retry number `retry` (1-based).
  std::chrono::milliseconds backoff_for(int retry) const;
};

struct HttpOptions {
  std::chrono::milliseconds timeout{60000};
  RetryPolicy retry;
  int max_in_flight = 8;
  std::map<std::string, std::string> headers;
};

struct HttpTelemetry {
  std::uint64_t calls = 0;
  std::uint64_t attempts = 0;
  std::uint64_t retries = 0;
};

/// JSON-over-HTTP(S) POST client with bounded concurrency and exponential
/// backoff. Safe to share between threads.
class JsonHttpClient {
 public:
  JsonHttpClient(const std::string& endpoint, HttpOptions options);
  ~JsonHttpClient();
  JsonHttpClient(const JsonHttpClient&) = delete;
  JsonHttpClient& operator=(const JsonHttpClient&) = delete;

  /// Returns the response body of the first 2xx reply. Retryable failures
  /// are retried per policy; the last failure is rethrown as RemoteError.
  std::string post(const std::string& json_body) const;

  HttpTelemetry telemetry() const;
  const std::string& endpoint() const noexcept { return endpoint_; }

 private:
  struct State;
  std::string endpoint_;
  std::string origin_;
  std::string path_;
  HttpOptions options_;
  std::unique_ptr<State> state_;
};

/// Splits "scheme://host[:port]/path" into origin and path ("/" if absent).
std::pair<std::string, std::string> split_url(const std::string& url);

std::string base64_encode(const std::uint8_t* data, std::size_t size);

}  // namespace mirag
