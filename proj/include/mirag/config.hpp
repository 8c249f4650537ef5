#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>

#include "json.hpp"
#include "mirag/embed.hpp"
#include "mirag/llm.hpp"
#include "mirag/pipeline.hpp"

namespace mirag {

/// Everything a benchmark run needs, loaded from one JSON file. Relative
/// paths resolve against the file's directory.
struct RunConfig {
  std::filesystem::path base_dir;

  std::optional<std::filesystem::path> text_kb;
  std::optional<std::filesystem::path> mm_kb;
  std::optional<std::filesystem::path> benchmark;
  std::optional<std::filesystem::path> image_root;
  std::optional<std::filesystem::path> annotator_answers;
  std::optional<std::filesystem::path> demo_pool;
  std::filesystem::path output_dir = "out";

  PipelineConfig pipeline;
  int parallelism = 1;
  std::uint64_t seed = 7;
  bool allow_fingerprint_mismatch = false;

  ProviderConfig text_embedder = ProviderConfig::deterministic(7);
  ProviderConfig image_embedder = ProviderConfig::deterministic(7);
  LlmConfig llm;

  static RunConfig from_json(const nlohmann::json& j, const std::filesystem::path& base_dir);
  static RunConfig load(const std::filesystem::path& path);

  void validate() const;
  nlohmann::json to_json() const;
};

/// Keys: kind ("deterministic-reference" | "remote-http"), dim, seed,
/// endpoint, model, api_key_env, timeout_ms, max_in_flight, retry{...}.
ProviderConfig provider_config_from_json(const nlohmann::json& j, std::uint64_t default_seed);
nlohmann::json to_json(const ProviderConfig& c);

/// Keys: mode ("scripted" | "remote"), script_path, endpoint, model,
/// temperature, max_tokens, api_key_env, timeout_ms, max_in_flight, retry{...}.
LlmConfig llm_config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir);

}  // namespace mirag
