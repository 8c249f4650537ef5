#include "mirag/llm.hpp"

#include <algorithm>
#include <numeric>
#include <regex>

#include "json.hpp"
#include "mirag/io.hpp"

namespace mirag {

using nlohmann::json;

std::string_view to_string(Role role) {
  switch (role) {
    case Role::kSystem: return "system";
    case Role::kUser: return "user";
    case Role::kAssistant: return "assistant";
  }
  return "user";
}

void ChatMessage::validate() const {
  if (parts.empty()) throw Error(ErrorCode::kInvalidArgument, "chat message has no parts");
  if (role != Role::kUser) {
    for (const auto& p : parts) {
      if (p.is_image()) throw Error(ErrorCode::kInvalidArgument, "image parts are only allowed in user messages");
    }
  }
}

std::string ChatMessage::text() const {
  std::string out;
  for (const auto& p : parts) {
    if (p.kind == ContentPart::Kind::kText) out += p.text;
  }
  return out;
}

void LlmConfig::validate() const {
  if (mode == Mode::kScripted && !script_path) {
    throw Error(ErrorCode::kInvalidArgument, "scripted LLM mode requires script_path");
  }
  if (mode == Mode::kRemote && endpoint.empty()) {
    throw Error(ErrorCode::kInvalidArgument, "remote LLM mode requires an endpoint");
  }
  if (temperature < 0.0) throw Error(ErrorCode::kInvalidArgument, "temperature must be >= 0");
  if (max_tokens <= 0) throw Error(ErrorCode::kInvalidArgument, "max_tokens must be positive");
}

// ---------------------------------------------------------------------------
// Scripted model

ScriptedChatModel::ScriptedChatModel(std::span<const ScriptEntry> entries) {
  for (const auto& e : entries) {
    Key key{e.kind, e.sample_id, e.iteration.value_or(-1), e.attempt.value_or(-1)};
    if (!responses_.emplace(key, e.response).second) {
      throw Error(ErrorCode::kSchema, "duplicate script key for " + std::string(to_string(e.kind)) + "/" +
                                          e.sample_id + "/" + std::to_string(e.iteration.value_or(-1)));
    }
  }
}

std::shared_ptr<ScriptedChatModel> ScriptedChatModel::from_file(const std::filesystem::path& path) {
  std::vector<ScriptEntry> entries;
  for_each_line(path, [&](std::string_view line, std::size_t line_no) {
    auto where = path.string() + " line " + std::to_string(line_no);
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object() || !j.contains("key") || !j["key"].is_object() ||
        !j.contains("response") || !j["response"].is_string()) {
      throw Error(ErrorCode::kSchema, where + ": expected {key: {...}, response: string}");
    }
    const auto& k = j["key"];
    ScriptEntry e;
    try {
      e.kind = prompt_kind_from_string(k.at("kind").get<std::string>());
      e.sample_id = k.value("sample_id", "*");
      if (k.contains("iteration") && !k["iteration"].is_null()) e.iteration = k["iteration"].get<int>();
      if (k.contains("attempt") && !k["attempt"].is_null()) e.attempt = k["attempt"].get<int>();
    } catch (const json::exception& ex) {
      throw Error(ErrorCode::kSchema, where + ": " + ex.what());
    }
    e.response = j["response"].get<std::string>();
    entries.push_back(std::move(e));
  });
  return std::make_shared<ScriptedChatModel>(entries);
}

std::string ScriptedChatModel::chat(const ChatRequest& request) const {
  calls_.fetch_add(1, std::memory_order_relaxed);
  for (const std::string& sample : {request.sample_id, std::string("*")}) {
    for (int iteration : {request.iteration, -1}) {
      for (int attempt : {request.attempt, -1}) {
        auto it = responses_.find(Key{request.kind, sample, iteration, attempt});
        if (it != responses_.end()) return it->second;
      }
    }
  }
  throw Error(ErrorCode::kScriptMiss, "no scripted response for {kind: " + std::string(to_string(request.kind)) +
                                          ", sample_id: " + request.sample_id +
                                          ", iteration: " + std::to_string(request.iteration) +
                                          ", attempt: " + std::to_string(request.attempt) + "}");
}

HttpTelemetry ScriptedChatModel::telemetry() const {
  const auto n = calls_.load();
  return {n, n, 0};
}

// ---------------------------------------------------------------------------
// Remote model

namespace {

HttpOptions llm_http_options(const LlmConfig& config) {
  HttpOptions opts = config.http;
  if (const char* key = std::getenv(config.api_key_env.c_str()); key && *key) {
    opts.headers["Authorization"] = std::string("Bearer ") + key;
  }
  return opts;
}

json part_to_json(const ContentPart& p) {
  switch (p.kind) {
    case ContentPart::Kind::kText: return {{"type", "text"}, {"text", p.text}};
    case ContentPart::Kind::kImageUrl: return {{"type", "image_url"}, {"image_url", {{"url", p.text}}}};
    case ContentPart::Kind::kImageBytes: {
      std::string url = "data:" + std::string(sniff_image_mime(p.image)) + ";base64," +
                        base64_encode(p.image.data(), p.image.size());
      return {{"type", "image_url"}, {"image_url", {{"url", std::move(url)}}}};
    }
  }
  return {};
}

}  // namespace

RemoteChatModel::RemoteChatModel(LlmConfig config) : config_(std::move(config)) {
  config_.validate();
  client_ = std::make_unique<JsonHttpClient>(config_.endpoint, llm_http_options(config_));
}

std::string RemoteChatModel::request_body(std::span<const ChatMessage> messages) const {
  json msgs = json::array();
  for (const auto& m : messages) {
    m.validate();
    json content = json::array();
    for (const auto& p : m.parts) content.push_back(part_to_json(p));
    msgs.push_back({{"role", std::string(to_string(m.role))}, {"content", std::move(content)}});
  }
  json body = {{"model", config_.model},
               {"messages", std::move(msgs)},
               {"temperature", config_.temperature},
               {"max_tokens", config_.max_tokens}};
  return body.dump();
}

std::string RemoteChatModel::chat(const ChatRequest& request) const {
  if (request.messages.empty()) throw Error(ErrorCode::kInvalidArgument, "chat needs at least one message");
  const std::string reply = client_->post(request_body(request.messages));
  json doc = json::parse(reply, nullptr, false);
  if (doc.is_discarded() || !doc.contains("choices") || !doc["choices"].is_array() || doc["choices"].empty()) {
    throw Error(ErrorCode::kMalformedResponse, "reply has no choices");
  }
  const auto& msg = doc["choices"][0].value("message", json::object());
  if (!msg.contains("content")) throw Error(ErrorCode::kMalformedResponse, "choice has no message content");
  const auto& content = msg["content"];
  if (content.is_string()) return content.get<std::string>();
  if (content.is_array()) {
    std::string out;
    for (const auto& part : content) {
      if (part.is_object() && part.value("type", "") == "text") out += part.value("text", "");
    }
    return out;
  }
  throw Error(ErrorCode::kMalformedResponse, "unsupported message content type");
}

std::shared_ptr<const ChatModel> make_chat_model(const LlmConfig& config) {
  config.validate();
  if (config.mode == LlmConfig::Mode::kScripted) return ScriptedChatModel::from_file(*config.script_path);
  return std::make_shared<RemoteChatModel>(config);
}

// ---------------------------------------------------------------------------
// Sub-query parsing

namespace {

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::tolower(c); });
  return out;
}

// Position of a markdown header line like "## Queries" (any level, any case).
std::optional<std::size_t> find_header(const std::vector<std::string>& lines, std::string_view name) {
  for (std::size_t i = 0; i < lines.size(); ++i) {
    std::string t = trim(lines[i]);
    if (t.empty() || t[0] != '#') continue;
    auto body = t.find_first_not_of('#');
    if (body == std::string::npos) continue;
    std::string title = lower(trim(std::string_view(t).substr(body)));
    while (!title.empty() && (title.back() == ':' || title.back() == '*')) title.pop_back();
    while (!title.empty() && title.front() == '*') title.erase(title.begin());
    if (trim(title) == name) return i;
  }
  return std::nullopt;
}

std::vector<std::string> collect_questions(const std::vector<std::string>& lines, std::size_t from, std::size_t to) {
  static const std::regex kQuestion(
      R"(^\s*(?:[-*+>•]+\s*|\d+[.)]\s+)?(?:\*\*|__)?\s*question\s*#?\s*\d+\s*(?:\*\*|__)?\s*[:.)\-]\s*(?:\*\*|__)?\s*(.*)$)",
      std::regex::icase | std::regex::ECMAScript);
  std::vector<std::string> out;
  for (std::size_t i = from; i < to; ++i) {
    std::smatch m;
    if (!std::regex_match(lines[i], m, kQuestion)) continue;
    std::string q = trim(m[1].str());
    for (std::string_view wrap : {"**", "__"}) {
      if (q.size() >= wrap.size() && q.compare(q.size() - wrap.size(), wrap.size(), wrap) == 0) {
        q = trim(q.substr(0, q.size() - wrap.size()));
      }
    }
    if (!q.empty()) out.push_back(std::move(q));
  }
  return out;
}

}  // namespace

SubQuerySet parse_subqueries(std::string_view raw) {
  if (trim(raw).empty()) throw Error(ErrorCode::kParseFailure, "empty sub-query output");
  std::vector<std::string> lines;
  {
    std::size_t pos = 0;
    while (pos <= raw.size()) {
      auto nl = raw.find('\n', pos);
      if (nl == std::string_view::npos) nl = raw.size();
      std::string line(raw.substr(pos, nl - pos));
      if (!line.empty() && line.back() == '\r') line.pop_back();
      lines.push_back(std::move(line));
      pos = nl + 1;
    }
  }

  const auto analysis_at = find_header(lines, "analysis");
  const auto queries_at = find_header(lines, "queries");

  std::vector<std::string> questions;
  if (queries_at) questions = collect_questions(lines, *queries_at + 1, lines.size());
  if (questions.size() < 2) questions = collect_questions(lines, 0, lines.size());
  if (questions.size() < 2) {
    throw Error(ErrorCode::kParseFailure, "found " + std::to_string(questions.size()) + " question(s), need 2");
  }

  SubQuerySet out;
  if (analysis_at) {
    const std::size_t end = queries_at && *queries_at > *analysis_at ? *queries_at : lines.size();
    std::string text;
    for (std::size_t i = *analysis_at + 1; i < end; ++i) {
      if (!text.empty()) text += '\n';
      text += lines[i];
    }
    out.analysis = trim(text);
  }
  out.questions = {questions[0], questions[1]};
  return out;
}

// ---------------------------------------------------------------------------
// Few-shot prompt

std::vector<ChatMessage> build_fewshot_prompt(const std::string& question, std::vector<std::uint8_t> image,
                                              const std::string& records, std::span<const FewshotDemo> demos) {
  ChatMessage msg;
  msg.role = Role::kUser;
  if (demos.empty()) {
    msg.parts.push_back(ContentPart::of_image(std::move(image)));
    msg.parts.push_back(ContentPart::of_text(
        render_prompt(PromptKind::kFinalAnswer, {{"question", question}, {"reasoning_records", records}})));
    return {msg};
  }

  PromptSlots slots{{"question", question}, {"reasoning_records", records}};
  for (std::size_t i = 0; i < demos.size(); ++i) {
    const auto n = std::to_string(i + 1);
    slots["few_shot_context_" + n] = demos[i].context;
    slots["few_shot_question_" + n] = demos[i].question;
    slots["few_shot_answer_" + n] = demos[i].answer;
  }
  const std::string text = render_fewshot(static_cast<int>(demos.size()), slots);

  // Replace each image marker line with the matching image part.
  std::size_t pos = 0;
  for (std::size_t i = 0; i <= demos.size(); ++i) {
    const bool main = i == demos.size();
    const std::string marker = main ? "[Main Image Content]\n" : "[Image " + std::to_string(i + 1) + " Content]\n";
    const auto at = text.find(marker, pos);
    if (at == std::string::npos) throw Error(ErrorCode::kMissingSlot, marker);
    msg.parts.push_back(ContentPart::of_text(text.substr(pos, at - pos)));
    msg.parts.push_back(main ? ContentPart::of_image(std::move(image)) : ContentPart::of_image(demos[i].image));
    pos = at + marker.size();
  }
  msg.parts.push_back(ContentPart::of_text(text.substr(pos)));
  return {msg};
}

std::vector<std::size_t> select_demonstrations(const EmbeddingVector& query,
                                               std::span<const EmbeddingVector> pool, std::size_t n) {
  std::vector<double> sims(pool.size());
  for (std::size_t i = 0; i < pool.size(); ++i) sims[i] = pool[i].dot(query);
  std::vector<std::size_t> idx(pool.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  const std::size_t take = std::min(n, idx.size());
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(take), idx.end(),
                    [&](std::size_t a, std::size_t b) { return sims[a] != sims[b] ? sims[a] > sims[b] : a < b; });
  idx.resize(take);
  return idx;
}

}  // namespace mirag
