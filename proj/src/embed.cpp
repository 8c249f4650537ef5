#include "mirag/embed.hpp"

#include <cmath>
#include <cstdlib>
#include <numbers>

#include "json.hpp"
#include "mirag/hash.hpp"
#include "mirag/io.hpp"

namespace mirag {

using nlohmann::json;

std::string_view to_string(ProviderConfig::Kind kind) {
  return kind == ProviderConfig::Kind::kDeterministic ? "deterministic-reference" : "remote-http";
}

void ProviderConfig::validate() const {
  if (dim <= 0) throw Error(ErrorCode::kInvalidArgument, "provider dim must be positive");
  if (kind == Kind::kRemoteHttp && (!endpoint || endpoint->empty())) {
    throw Error(ErrorCode::kInvalidArgument, "remote-http provider requires an endpoint");
  }
  if (kind == Kind::kDeterministic && !seed) {
    throw Error(ErrorCode::kInvalidArgument, "deterministic-reference provider requires a seed");
  }
}

std::string ProviderConfig::fingerprint() const {
  std::string fp(to_string(kind));
  fp += ":dim=" + std::to_string(dim);
  if (kind == Kind::kDeterministic) {
    fp += ":seed=" + std::to_string(seed.value_or(0));
  } else {
    fp += ":model=" + model.value_or("");
    fp += ":endpoint=" + endpoint.value_or("");
  }
  return fp;
}

ProviderConfig ProviderConfig::deterministic(std::uint64_t seed, int dim) {
  ProviderConfig c;
  c.kind = Kind::kDeterministic;
  c.seed = seed;
  c.dim = dim;
  return c;
}

EmbeddingProvider::EmbeddingProvider(ProviderConfig config) : config_(std::move(config)) {
  config_.validate();
}

DeterministicProvider::DeterministicProvider(ProviderConfig config)
    : EmbeddingProvider(std::move(config)) {
  if (this->config().kind != ProviderConfig::Kind::kDeterministic) {
    throw Error(ErrorCode::kInvalidArgument, "DeterministicProvider needs a deterministic config");
  }
}

EmbeddingVector DeterministicProvider::embed_bytes(std::span<const std::uint8_t> bytes) const {
  std::uint64_t state = stable_hash64(bytes);
  std::uint64_t seed_state = *config().seed;
  state ^= splitmix64(seed_state);

  constexpr double kTwoPow53 = 9007199254740992.0;
  const int n = dim();
  EmbeddingVector v(n);
  for (int i = 0; i < n; i += 2) {
    // u1 in (0, 1], u2 in [0, 1)
    const double u1 = (static_cast<double>(splitmix64(state) >> 11) + 1.0) / kTwoPow53;
    const double u2 = static_cast<double>(splitmix64(state) >> 11) / kTwoPow53;
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * std::numbers::pi * u2;
    v[i] = r * std::cos(theta);
    if (i + 1 < n) v[i + 1] = r * std::sin(theta);
  }
  return l2_normalize(v);
}

EmbeddingVector DeterministicProvider::embed_text(std::string_view text) const {
  if (trim(text).empty()) throw Error(ErrorCode::kEmptyInput, "text is empty");
  return embed_bytes(std::span<const std::uint8_t>(
      reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

EmbeddingVector DeterministicProvider::embed_image(std::span<const std::uint8_t> bytes) const {
  if (bytes.empty()) throw Error(ErrorCode::kEmptyInput, "image payload is empty");
  return embed_bytes(bytes);
}

namespace {

HttpOptions with_auth(const ProviderConfig& config) {
  HttpOptions opts = config.http;
  if (const char* key = std::getenv(config.api_key_env.c_str()); key && *key) {
    opts.headers["Authorization"] = std::string("Bearer ") + key;
  }
  return opts;
}

}  // namespace

RemoteEmbeddingProvider::RemoteEmbeddingProvider(ProviderConfig config)
    : EmbeddingProvider(std::move(config)),
      client_(std::make_shared<JsonHttpClient>(*this->config().endpoint, with_auth(this->config()))) {}

EmbeddingVector RemoteEmbeddingProvider::request(const std::string& body) const {
  const std::string reply = client_->post(body);
  json doc = json::parse(reply, nullptr, false);
  if (doc.is_discarded() || !doc.contains("data") || !doc["data"].is_array() || doc["data"].empty() ||
      !doc["data"][0].contains("embedding") || !doc["data"][0]["embedding"].is_array()) {
    throw Error(ErrorCode::kMalformedResponse, "embedding reply lacks data[0].embedding");
  }
  const auto& values = doc["data"][0]["embedding"];
  if (static_cast<int>(values.size()) != dim()) {
    throw Error(ErrorCode::kDimensionMismatch,
                "expected dim " + std::to_string(dim()) + ", got " + std::to_string(values.size()));
  }
  EmbeddingVector v(dim());
  for (int i = 0; i < dim(); ++i) v[i] = values[static_cast<std::size_t>(i)].get<double>();
  return l2_normalize(v);
}

EmbeddingVector RemoteEmbeddingProvider::embed_text(std::string_view text) const {
  if (trim(text).empty()) throw Error(ErrorCode::kEmptyInput, "text is empty");
  json body = {{"model", config().model.value_or("")}, {"input", json::array({std::string(text)})}};
  return request(body.dump());
}

EmbeddingVector RemoteEmbeddingProvider::embed_image(std::span<const std::uint8_t> bytes) const {
  if (bytes.empty()) throw Error(ErrorCode::kEmptyInput, "image payload is empty");
  std::string url = "data:" + std::string(sniff_image_mime(bytes)) + ";base64," +
                    base64_encode(bytes.data(), bytes.size());
  json body = {{"model", config().model.value_or("")},
               {"input", json::array({json{{"image", std::move(url)}}})}};
  return request(body.dump());
}

std::shared_ptr<const EmbeddingProvider> make_provider(const ProviderConfig& config) {
  if (config.kind == ProviderConfig::Kind::kDeterministic) {
    return std::make_shared<DeterministicProvider>(config);
  }
  return std::make_shared<RemoteEmbeddingProvider>(config);
}

std::string_view sniff_image_mime(std::span<const std::uint8_t> b) {
  auto starts = [&](std::initializer_list<std::uint8_t> sig) {
    if (b.size() < sig.size()) return false;
    std::size_t i = 0;
    for (auto s : sig) {
      if (b[i++] != s) return false;
    }
    return true;
  };
  if (starts({0x89, 'P', 'N', 'G'})) return "image/png";
  if (starts({0xFF, 0xD8, 0xFF})) return "image/jpeg";
  if (starts({'G', 'I', 'F', '8'})) return "image/gif";
  if (b.size() >= 12 && starts({'R', 'I', 'F', 'F'}) && b[8] == 'W' && b[9] == 'E' && b[10] == 'B' &&
      b[11] == 'P') {
    return "image/webp";
  }
  return "application/octet-stream";
}

}  // namespace mirag
