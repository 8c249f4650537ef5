#pragma once

#include <array>
#include <atomic>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "mirag/embed.hpp"
#include "mirag/http.hpp"
#include "mirag/prompts.hpp"

namespace mirag {

enum class Role { kSystem, kUser, kAssistant };
std::string_view to_string(Role role);

struct ContentPart {
  enum class Kind { kText, kImageBytes, kImageUrl };
  Kind kind = Kind::kText;
  std::string text;                // text, or URL for kImageUrl
  std::vector<std::uint8_t> image;  // kImageBytes

  static ContentPart of_text(std::string t) { return {Kind::kText, std::move(t), {}}; }
  static ContentPart of_image(std::vector<std::uint8_t> bytes) { return {Kind::kImageBytes, {}, std::move(bytes)}; }
  static ContentPart of_image_url(std::string url) { return {Kind::kImageUrl, std::move(url), {}}; }

  bool is_image() const noexcept { return kind != Kind::kText; }
};

struct ChatMessage {
  Role role = Role::kUser;
  std::vector<ContentPart> parts;

  /// At least one part; images only in user messages.
  void validate() const;
  /// Concatenation of the text parts.
  std::string text() const;
};

/// A chat call plus the key the scripted model answers by.
struct ChatRequest {
  PromptKind kind = PromptKind::kFinalAnswer;
  std::string sample_id;
  int iteration = 0;
  int attempt = 0;
  std::vector<ChatMessage> messages;
};

struct LlmConfig {
  enum class Mode { kRemote, kScripted };
  Mode mode = Mode::kScripted;
  std::string endpoint;
  std::string model;
  double temperature = 0.0;
  int max_tokens = 1024;
  std::optional<std::filesystem::path> script_path;
  std::string api_key_env = "MIRAG_API_KEY";
  HttpOptions http;

  void validate() const;
};

class ChatModel {
 public:
  virtual ~ChatModel() = default;
  virtual std::string chat(const ChatRequest& request) const = 0;
  virtual HttpTelemetry telemetry() const = 0;
};

/// One scripted reply. sample_id "*" and unset iteration/attempt match any
/// value; the most specific matching entry wins.
struct ScriptEntry {
  PromptKind kind = PromptKind::kFinalAnswer;
  std::string sample_id = "*";
  std::optional<int> iteration;
  std::optional<int> attempt;
  std::string response;
};

/// Deterministic replay of responses keyed by (kind, sample_id, iteration,
/// attempt). Throws ScriptMiss when no entry matches.
class ScriptedChatModel final : public ChatModel {
 public:
  explicit ScriptedChatModel(std::span<const ScriptEntry> entries);

  /// JSONL of {"key": {"kind", "sample_id", "iteration"?, "attempt"?}, "response"}.
  static std::shared_ptr<ScriptedChatModel> from_file(const std::filesystem::path& path);

  std::string chat(const ChatRequest& request) const override;
  HttpTelemetry telemetry() const override;

 private:
  using Key = std::tuple<PromptKind, std::string, int, int>;
  std::map<Key, std::string> responses_;
  mutable std::atomic<std::uint64_t> calls_{0};
};

/// OpenAI-compatible chat-completions client. Image parts are sent as
/// base64 data URLs.
class RemoteChatModel final : public ChatModel {
 public:
  explicit RemoteChatModel(LlmConfig config);

  std::string chat(const ChatRequest& request) const override;
  HttpTelemetry telemetry() const override { return client_->telemetry(); }

  /// Request body for `messages`; exposed for tests.
  std::string request_body(std::span<const ChatMessage> messages) const;

 private:
  LlmConfig config_;
  std::unique_ptr<JsonHttpClient> client_;
};

std::shared_ptr<const ChatModel> make_chat_model(const LlmConfig& config);

struct SubQuerySet {
  std::string analysis;
  std::array<std::string, 2> questions;
};

/// Reads the "## Analysis" section and the first two "Question <n>:" lines
/// (under "## Queries" when present, anywhere otherwise). Throws
/// ParseFailure when fewer than two nonempty questions are found.
SubQuerySet parse_subqueries(std::string_view raw);

struct FewshotDemo {
  std::vector<std::uint8_t> image;
  std::string context;
  std::string question;
  std::string answer;
};

/// Single user message interleaving demo images with the few-shot text and
/// ending with the query image and "##Best Answer:". With no demos this is
/// the plain final-answer prompt.
std::vector<ChatMessage> build_fewshot_prompt(const std::string& question, std::vector<std::uint8_t> image,
                                              const std::string& records, std::span<const FewshotDemo> demos);

/// Indices of the `n` pool questions most similar to `query` (inner product
/// of unit vectors), best first, lower index on ties.
std::vector<std::size_t> select_demonstrations(const EmbeddingVector& query,
                                               std::span<const EmbeddingVector> pool, std::size_t n);

}  // namespace mirag
