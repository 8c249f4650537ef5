#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>

#include "mirag/errors.hpp"
#include "mirag/http.hpp"

namespace mirag {

using EmbeddingVector = Eigen::VectorXd;

/// Returns v / ||v||. Throws ZeroVector when v has no nonzero component.
template <typename Derived>
typename Derived::PlainObject l2_normalize(const Eigen::MatrixBase<Derived>& v) {
  using Scalar = typename Derived::Scalar;
  const Scalar norm = v.norm();
  if (!(norm > Scalar(0))) {
    throw Error(ErrorCode::kZeroVector, "cannot normalize a zero vector");
  }
  return v / norm;
}

/// concat(a, b) as a single column vector.
template <typename A, typename B>
Eigen::Matrix<typename A::Scalar, Eigen::Dynamic, 1> concat(const Eigen::MatrixBase<A>& a,
                                                            const Eigen::MatrixBase<B>& b) {
  Eigen::Matrix<typename A::Scalar, Eigen::Dynamic, 1> out(a.size() + b.size());
  out << a, b.template cast<typename A::Scalar>();
  return out;
}

struct ProviderConfig {
  enum class Kind { kDeterministic, kRemoteHttp };

  Kind kind = Kind::kDeterministic;
  int dim = 64;
  std::optional<std::string> endpoint;
  std::optional<std::string> model;
  std::optional<std::uint64_t> seed;
  std::string api_key_env = "MIRAG_API_KEY";
  HttpOptions http;

  /// Throws InvalidArgument when a mode-specific field is missing.
  void validate() const;

  /// Identity of the embedding space. Two configs with equal fingerprints
  /// produce interchangeable vectors.
  std::string fingerprint() const;

  static ProviderConfig deterministic(std::uint64_t seed, int dim = 64);
};

std::string_view to_string(ProviderConfig::Kind kind);

/// Text and image embedder. Implementations are immutable after
/// construction and safe for concurrent use.
class EmbeddingProvider {
 public:
  virtual ~EmbeddingProvider() = default;

  /// Unit-norm embedding of `text`. Throws EmptyInput on blank text.
  virtual EmbeddingVector embed_text(std::string_view text) const = 0;

  /// Unit-norm embedding of raw image bytes. Throws EmptyInput on an empty
  /// payload.
  virtual EmbeddingVector embed_image(std::span<const std::uint8_t> bytes) const = 0;

  const ProviderConfig& config() const noexcept { return config_; }
  int dim() const noexcept { return config_.dim; }
  std::string fingerprint() const { return config_.fingerprint(); }

 protected:
  explicit EmbeddingProvider(ProviderConfig config);

 private:
  ProviderConfig config_;
};

/// Reference provider: FNV-1a of the input bytes, mixed with the seed,
/// drives a splitmix64 stream; Box-Muller turns it into a standard Gaussian
/// vector which is then L2 normalized.
class DeterministicProvider final : public EmbeddingProvider {
 public:
  explicit DeterministicProvider(ProviderConfig config);

  EmbeddingVector embed_text(std::string_view text) const override;
  EmbeddingVector embed_image(std::span<const std::uint8_t> bytes) const override;

  EmbeddingVector embed_bytes(std::span<const std::uint8_t> bytes) const;
};

/// Client for an embeddings endpoint speaking
/// {"model": ..., "input": [...]} -> {"data": [{"embedding": [...]}]}.
/// Images are sent as {"image": "data:<mime>;base64,..."} input items.
class RemoteEmbeddingProvider final : public EmbeddingProvider {
 public:
  explicit RemoteEmbeddingProvider(ProviderConfig config);

  EmbeddingVector embed_text(std::string_view text) const override;
  EmbeddingVector embed_image(std::span<const std::uint8_t> bytes) const override;

  HttpTelemetry telemetry() const { return client_->telemetry(); }

 private:
  EmbeddingVector request(const std::string& body) const;
  std::shared_ptr<JsonHttpClient> client_;
};

std::shared_ptr<const EmbeddingProvider> make_provider(const ProviderConfig& config);

/// Best-effort MIME sniffing for data URLs.
std::string_view sniff_image_mime(std::span<const std::uint8_t> bytes);

}  // namespace mirag
