#include "mirag/http.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <semaphore>
#include <thread>

#include "httplib.h"
#include "mirag/errors.hpp"

namespace mirag {

std::chrono::milliseconds RetryPolicy::backoff_for(int retry) const {
  double ms = static_cast<double>(initial_backoff.count()) * std::pow(multiplier, retry - 1);
  ms = std::min(ms, static_cast<double>(max_backoff.count()));
  return std::chrono::milliseconds(static_cast<std::int64_t>(ms));
}

struct JsonHttpClient::State {
  explicit State(int cap) : slots(std::max(cap, 1)) {}
  std::counting_semaphore<1024> slots;
  std::atomic<std::uint64_t> calls{0};
  std::atomic<std::uint64_t> attempts{0};
  std::atomic<std::uint64_t> retries{0};
};

std::pair<std::string, std::string> split_url(const std::string& url) {
  auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) {
    throw Error(ErrorCode::kInvalidArgument, "endpoint must be an absolute URL: " + url);
  }
  auto path_start = url.find('/', scheme_end + 3);
  if (path_start == std::string::npos) return {url, "/"};
  return {url.substr(0, path_start), url.substr(path_start)};
}

JsonHttpClient::JsonHttpClient(const std::string& endpoint, HttpOptions options)
    : endpoint_(endpoint),
      options_(std::move(options)),
      state_(std::make_unique<State>(std::min(options_.max_in_flight, 1024))) {
  std::tie(origin_, path_) = split_url(endpoint_);
}

JsonHttpClient::~JsonHttpClient() = default;

std::string JsonHttpClient::post(const std::string& json_body) const {
  state_->calls.fetch_add(1, std::memory_order_relaxed);
  const int max_attempts = std::max(options_.retry.max_attempts, 1);

  httplib::Headers headers;
  for (const auto& [k, v] : options_.headers) headers.emplace(k, v);

  for (int attempt = 1;; ++attempt) {
    state_->attempts.fetch_add(1, std::memory_order_relaxed);
    int status = 0;
    std::string body;
    {
      state_->slots.acquire();
      httplib::Client client(origin_);
      auto secs = std::chrono::duration_cast<std::chrono::seconds>(options_.timeout);
      auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(options_.timeout - secs);
      client.set_connection_timeout(secs.count(), usecs.count());
      client.set_read_timeout(secs.count(), usecs.count());
      client.set_write_timeout(secs.count(), usecs.count());
      auto res = client.Post(path_, headers, json_body, "application/json");
      state_->slots.release();
      if (res) {
        status = res->status;
        body = res->body;
      } else {
        body = httplib::to_string(res.error());
      }
    }
    if (status >= 200 && status < 300) return body;

    RemoteError err(status, body);
    if (!err.retryable() || attempt >= max_attempts) throw err;
    state_->retries.fetch_add(1, std::memory_order_relaxed);
    std::this_thread::sleep_for(options_.retry.backoff_for(attempt));
  }
}

HttpTelemetry JsonHttpClient::telemetry() const {
  return {state_->calls.load(), state_->attempts.load(), state_->retries.load()};
}

std::string base64_encode(const std::uint8_t* data, std::size_t size) {
  std::string out(4 * ((size + 2) / 3), '\0');
  int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), data, static_cast<int>(size));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

}  // namespace mirag
