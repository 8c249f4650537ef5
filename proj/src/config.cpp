#include "mirag/config.hpp"

#include "mirag/io.hpp"

namespace mirag {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

fs::path resolve(const fs::path& base, const std::string& p) {
  fs::path path(p);
  return path.is_relative() ? base / path : path;
}

void read_http(const json& j, HttpOptions& http) {
  if (j.contains("timeout_ms")) http.timeout = std::chrono::milliseconds(j["timeout_ms"].get<std::int64_t>());
  if (j.contains("max_in_flight")) http.max_in_flight = j["max_in_flight"].get<int>();
  if (j.contains("retry")) {
    const auto& r = j["retry"];
    http.retry.max_attempts = r.value("max_attempts", http.retry.max_attempts);
    http.retry.initial_backoff =
        std::chrono::milliseconds(r.value("initial_backoff_ms", static_cast<std::int64_t>(http.retry.initial_backoff.count())));
    http.retry.multiplier = r.value("multiplier", http.retry.multiplier);
    http.retry.max_backoff =
        std::chrono::milliseconds(r.value("max_backoff_ms", static_cast<std::int64_t>(http.retry.max_backoff.count())));
  }
}

json http_to_json(const HttpOptions& h) {
  return {{"timeout_ms", h.timeout.count()},
          {"max_in_flight", h.max_in_flight},
          {"retry",
           {{"max_attempts", h.retry.max_attempts},
            {"initial_backoff_ms", h.retry.initial_backoff.count()},
            {"multiplier", h.retry.multiplier},
            {"max_backoff_ms", h.retry.max_backoff.count()}}}};
}

}  // namespace

ProviderConfig provider_config_from_json(const json& j, std::uint64_t default_seed) {
  ProviderConfig c;
  const auto kind = j.value("kind", std::string("deterministic-reference"));
  if (kind == "deterministic-reference" || kind == "deterministic") {
    c.kind = ProviderConfig::Kind::kDeterministic;
  } else if (kind == "remote-http" || kind == "remote") {
    c.kind = ProviderConfig::Kind::kRemoteHttp;
  } else {
    throw Error(ErrorCode::kInvalidArgument, "unknown provider kind: " + kind);
  }
  c.dim = j.value("dim", 64);
  if (j.contains("endpoint")) c.endpoint = j["endpoint"].get<std::string>();
  if (j.contains("model")) c.model = j["model"].get<std::string>();
  if (c.kind == ProviderConfig::Kind::kDeterministic) {
    c.seed = j.contains("seed") ? j["seed"].get<std::uint64_t>() : default_seed;
  }
  c.api_key_env = j.value("api_key_env", c.api_key_env);
  read_http(j, c.http);
  c.validate();
  return c;
}

json to_json(const ProviderConfig& c) {
  json j = {{"kind", std::string(to_string(c.kind))}, {"dim", c.dim}};
  if (c.seed) j["seed"] = *c.seed;
  if (c.endpoint) j["endpoint"] = *c.endpoint;
  if (c.model) j["model"] = *c.model;
  if (c.kind == ProviderConfig::Kind::kRemoteHttp) {
    j["api_key_env"] = c.api_key_env;
    j.update(http_to_json(c.http));
  }
  return j;
}

LlmConfig llm_config_from_json(const json& j, const fs::path& base_dir) {
  LlmConfig c;
  const auto mode = j.value("mode", std::string("scripted"));
  if (mode == "scripted") {
    c.mode = LlmConfig::Mode::kScripted;
  } else if (mode == "remote") {
    c.mode = LlmConfig::Mode::kRemote;
  } else {
    throw Error(ErrorCode::kInvalidArgument, "unknown llm mode: " + mode);
  }
  if (j.contains("script_path")) c.script_path = resolve(base_dir, j["script_path"].get<std::string>());
  c.endpoint = j.value("endpoint", "");
  c.model = j.value("model", "");
  c.temperature = j.value("temperature", 0.0);
  c.max_tokens = j.value("max_tokens", 1024);
  c.api_key_env = j.value("api_key_env", c.api_key_env);
  read_http(j, c.http);
  c.validate();
  return c;
}

RunConfig RunConfig::from_json(const json& j, const fs::path& base_dir) {
  if (!j.is_object()) throw Error(ErrorCode::kInvalidArgument, "config must be a JSON object");
  RunConfig c;
  c.base_dir = base_dir;
  try {
    c.seed = j.value("seed", c.seed);
    c.pipeline.iterations = j.value("iterations", c.pipeline.iterations);
    if (j.contains("budget")) {
      c.pipeline.budget.text_k = j["budget"].value("text_k", c.pipeline.budget.text_k);
      c.pipeline.budget.mm_k = j["budget"].value("mm_k", c.pipeline.budget.mm_k);
    }
    if (j.contains("answer_mode")) c.pipeline.answer_mode = answer_mode_from_string(j["answer_mode"].get<std::string>());
    if (j.contains("kb_mode")) c.pipeline.kb_mode = kb_mode_from_string(j["kb_mode"].get<std::string>());
    c.pipeline.enable_generation = j.value("enable_generation", c.pipeline.enable_generation);
    c.pipeline.fewshot_count = j.value("fewshot_count", c.pipeline.fewshot_count);
    c.pipeline.emit_timings = j.value("emit_timings", c.pipeline.emit_timings);
    c.parallelism = j.value("parallelism", c.parallelism);
    c.allow_fingerprint_mismatch = j.value("allow_fingerprint_mismatch", false);

    const json paths = j.value("paths", json::object());
    auto path_of = [&](const char* key) -> std::optional<fs::path> {
      if (!paths.contains(key) || paths[key].is_null()) return std::nullopt;
      return resolve(base_dir, paths[key].get<std::string>());
    };
    c.text_kb = path_of("text_kb");
    c.mm_kb = path_of("mm_kb");
    c.benchmark = path_of("benchmark");
    c.image_root = path_of("image_root");
    c.annotator_answers = path_of("annotator_answers");
    c.demo_pool = path_of("demo_pool");
    if (auto out = path_of("output_dir")) c.output_dir = *out;
    else c.output_dir = base_dir / "out";

    c.text_embedder = provider_config_from_json(j.value("text_embedder", json::object()), c.seed);
    c.image_embedder = provider_config_from_json(j.value("image_embedder", json::object()), c.seed);
    c.llm = llm_config_from_json(j.value("llm", json::object({{"mode", "scripted"}})), base_dir);
    if (c.llm.mode == LlmConfig::Mode::kScripted && !c.llm.script_path) {
      throw Error(ErrorCode::kInvalidArgument, "llm.script_path is required in scripted mode");
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kInvalidArgument, std::string("config: ") + e.what());
  }
  return c;
}

RunConfig RunConfig::load(const fs::path& path) {
  json j = json::parse(read_file_text(path), nullptr, false, true);
  if (j.is_discarded()) throw Error(ErrorCode::kInvalidArgument, path.string() + " is not valid JSON");
  return from_json(j, path.parent_path().empty() ? fs::path(".") : path.parent_path());
}

void RunConfig::validate() const {
  if (pipeline.iterations < 0) throw Error(ErrorCode::kInvalidArgument, "iterations must be >= 0");
  if (parallelism < 1) throw Error(ErrorCode::kInvalidArgument, "parallelism must be >= 1");
  text_embedder.validate();
  image_embedder.validate();
  llm.validate();
}

json RunConfig::to_json() const {
  json j = {{"iterations", pipeline.iterations},
            {"budget", {{"text_k", pipeline.budget.text_k}, {"mm_k", pipeline.budget.mm_k}}},
            {"answer_mode", std::string(mirag::to_string(pipeline.answer_mode))},
            {"kb_mode", std::string(mirag::to_string(pipeline.kb_mode))},
            {"enable_generation", pipeline.enable_generation},
            {"fewshot_count", pipeline.fewshot_count},
            {"parallelism", parallelism},
            {"seed", seed},
            {"text_embedder", mirag::to_json(text_embedder)},
            {"image_embedder", mirag::to_json(image_embedder)},
            {"llm_mode", llm.mode == LlmConfig::Mode::kScripted ? "scripted" : "remote"}};
  if (llm.mode == LlmConfig::Mode::kRemote) j["llm_model"] = llm.model;
  return j;
}

}  // namespace mirag
