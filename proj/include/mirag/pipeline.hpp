#pragma once

#include <chrono>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "mirag/embed.hpp"
#include "mirag/kbstore.hpp"
#include "mirag/llm.hpp"
#include "mirag/search.hpp"

namespace mirag {

struct Sample {
  std::string sample_id;
  std::string image_ref;  // resolved path or URL
  std::string question;
  std::vector<std::string> gold_answers;
  std::vector<std::string> gold_entity_ids;
  std::vector<std::string> annotator_answers;
};

struct ReasoningRecord {
  int iteration = 0;
  std::string text;
  std::vector<std::string> sources;
};

struct IterationTrace {
  int iteration = 0;
  MultiQuery multi_query;
  std::vector<ScoredHit> text_hits;
  std::vector<ScoredHit> mm_hits;
  ReasoningRecord record;
  /// Sub-query generation failed twice and the iteration ran expansion-only.
  bool generation_fallback = false;
  std::vector<QuerySlot> failed_slots;
  double search_ms = 0.0;
  double llm_ms = 0.0;
};

struct RunResult {
  std::string sample_id;
  std::string description;
  std::vector<IterationTrace> traces;
  std::string answer;
  /// Entry i: sorted union of doc_ids retrieved in iterations 0..i.
  std::vector<std::vector<std::string>> cumulative_doc_ids;
  bool failed = false;
  std::string error;
};

enum class AnswerMode { kFreeForm, kExactEntity };
enum class KbMode { kBoth, kTextualOnly, kMultimodalOnly };

std::string_view to_string(AnswerMode m);
AnswerMode answer_mode_from_string(std::string_view s);
std::string_view to_string(KbMode m);
KbMode kb_mode_from_string(std::string_view s);

struct PipelineConfig {
  int iterations = 4;
  RetrievalBudget budget;
  AnswerMode answer_mode = AnswerMode::kFreeForm;
  KbMode kb_mode = KbMode::kBoth;
  /// Off = expansion-only ablation arm.
  bool enable_generation = true;
  std::size_t fewshot_count = 3;
  /// Wall-clock timings make dumps nondeterministic, so they are opt-in.
  bool emit_timings = false;
};

/// Training questions with their demo material, used for few-shot answer
/// extraction.
struct DemoPool {
  std::vector<FewshotDemo> demos;
  std::vector<EmbeddingVector> question_vecs;
};

struct PipelineResources {
  const KbIndex* text_kb = nullptr;
  const KbIndex* mm_kb = nullptr;
  /// Text embedder of the textual KB and of the multimodal KB text half.
  std::shared_ptr<const EmbeddingProvider> text_provider;
  std::shared_ptr<const EmbeddingProvider> image_provider;
  std::shared_ptr<const ChatModel> llm;
  const DemoPool* demo_pool = nullptr;
  ImageReader read_image;
};

/// Knowledge block handed to record generation: text passages first, then
/// image-text pairs, each score-descending.
std::string format_knowledge(const std::vector<ScoredHit>& text_hits, const std::vector<ScoredHit>& mm_hits,
                             const KbIndex* text_kb, const KbIndex* mm_kb);

/// Accumulated records joined for the query-generation and answer prompts.
std::string format_records(std::span<const ReasoningRecord> records);

/// Iterative multimodal RAG over two KBs. Per sample, every step depends
/// on the previous reasoning record; calls are strictly sequential.
class Pipeline {
 public:
  Pipeline(PipelineResources resources, PipelineConfig config);

  struct SampleState {
    const Sample* sample = nullptr;
    std::vector<std::uint8_t> image;
    EmbeddingVector image_vec;
    std::vector<ReasoningRecord> records;
  };

  SampleState prepare(const Sample& sample) const;

  /// Image description, expanded query [Q, D], full-budget retrieval and R_0.
  std::pair<std::string, IterationTrace> initial_record(SampleState& state) const;

  /// Multi-query (expansion of R_{i-1} plus generated sub-queries), joint
  /// search and R_i over the new hits only.
  IterationTrace iterate_once(SampleState& state, int iteration) const;

  std::string final_answer(const SampleState& state) const;

  /// Never throws for sample-level failures; the result is flagged failed
  /// with the traces completed so far.
  RunResult run_sample(const Sample& sample) const;

  const PipelineConfig& config() const noexcept { return config_; }

 private:
  std::string chat(PromptKind kind, const SampleState& state, int iteration, int attempt,
                   std::vector<ChatMessage> messages) const;
  IterationTrace search_and_record(SampleState& state, int iteration, MultiQuery mq, QuerySlot primary,
                                   const std::string& description) const;
  KbHandle text_handle() const;
  KbHandle mm_handle() const;

  PipelineResources res_;
  PipelineConfig config_;
};

struct BenchmarkOptions {
  int parallelism = 1;
  /// JSONL output; appended as samples finish and rewritten sorted by
  /// sample_id at the end.
  std::optional<std::filesystem::path> output;
  /// Keep successful results already in `output` and skip those samples.
  bool resume = false;
  std::function<void(const RunResult&, std::size_t done, std::size_t total)> on_result;
};

/// Runs every sample with bounded cross-sample parallelism. Returns results
/// sorted by sample_id, including any resumed from disk.
std::vector<RunResult> run_benchmark(const Pipeline& pipeline, std::span<const Sample> samples,
                                     const BenchmarkOptions& options);

nlohmann::json hit_to_json(const ScoredHit& hit, int iteration);
nlohmann::json to_json(const RunResult& result, bool with_timings = false);
RunResult run_result_from_json(const nlohmann::json& j);
std::vector<RunResult> read_run_results(const std::filesystem::path& jsonl);

}  // namespace mirag
