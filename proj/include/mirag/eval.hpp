#pragma once

#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "json.hpp"
#include "mirag/kbstore.hpp"
#include "mirag/pipeline.hpp"

namespace mirag {

/// Lowercase, drop punctuation, drop one leading article (a/an/the), collapse
/// whitespace.
std::string normalize_answer(std::string_view s);

int exact_match(std::string_view prediction, std::span<const std::string> golds);

/// Substring containment after normalization; an empty normalized gold
/// never matches.
int cover_em(std::string_view prediction, std::span<const std::string> golds);

/// min(1, matches / 3) over the annotator panel.
double vqa_score(std::string_view prediction, std::span<const std::string> annotator_answers);

/// doc_id -> entity_id / passage text across the KBs a run searched.
class KbLookup {
 public:
  KbLookup() = default;
  explicit KbLookup(std::initializer_list<const KbIndex*> kbs);
  void add(const KbIndex& kb);

  bool contains(const std::string& doc_id) const { return rows_.contains(doc_id); }
  /// Throws UnknownDocId.
  const std::optional<std::string>& entity_of(const std::string& doc_id) const;
  const std::string& text_of(const std::string& doc_id) const;

 private:
  struct Row {
    std::optional<std::string> entity_id;
    std::string text;
  };
  const Row& row(const std::string& doc_id) const;
  std::unordered_map<std::string, Row> rows_;
};

/// 1 iff one of the first k hits maps to a gold entity. Returns nullopt when
/// there are no gold entities.
std::optional<int> recall_at_k(std::span<const ScoredHit> hits, std::span<const std::string> gold_entity_ids,
                               const KbLookup& lookup, std::size_t k);

/// 1 iff one of the first k hits' passage text contains a gold answer
/// (normalized substring). nullopt when there are no gold answers.
std::optional<int> prr_at_k(std::span<const ScoredHit> hits, std::span<const std::string> gold_answers,
                            const KbLookup& lookup, std::size_t k);

/// Hits an iteration contributes to entity recall: multimodal when the run
/// retrieved any image-text pairs, textual otherwise.
const std::vector<ScoredHit>& recall_hits(const RunResult& run, const IterationTrace& trace);

/// Entry i = 1 iff the top-k_per_iter hits of iterations 0..i contain a gold
/// entity. Monotone non-decreasing by construction.
std::vector<int> cumulative_recall(const RunResult& run, std::span<const std::string> gold_entity_ids,
                                   const KbLookup& lookup, std::size_t k_per_iter);

/// Same union rule for PRR over textual hits.
std::vector<int> cumulative_prr(const RunResult& run, std::span<const std::string> gold_answers,
                                const KbLookup& lookup, std::size_t k_per_iter);

/// Pluggable answer-equivalence judge: (prediction, gold, question) -> score.
using AnswerJudge = std::function<double(const std::string&, const std::string&, const std::string&)>;

struct ReportConfig {
  std::vector<std::size_t> ks = {1, 5, 10};
  /// k each iteration contributes to the cumulative recall curve.
  std::size_t k_per_iter = 5;
  AnswerJudge judge;
  nlohmann::json config_echo = nlohmann::json::object();
};

struct MetricRow {
  std::string sample_id;
  bool failed = false;
  int em = 0;
  int cover_em = 0;
  std::optional<double> vqa;
  std::optional<double> judge;
  std::map<std::size_t, int> recall_at;
  std::map<std::size_t, int> prr_at;
  std::vector<int> cumulative_recall;
  std::vector<int> cumulative_prr;
};

struct MetricReport {
  static constexpr int kSchemaVersion = 1;
  std::vector<MetricRow> rows;
  std::map<std::string, double> aggregates;
  /// Number of rows that contributed to each aggregate.
  std::map<std::string, std::size_t> counts;
  std::vector<double> cumulative_recall_mean;
  std::vector<double> cumulative_prr_mean;
  nlohmann::json config_echo;

  nlohmann::json to_json() const;
  std::string to_table() const;
};

/// Retrieval metrics are cumulative over iterations: recall@k for a sample
/// is the last entry of the cumulative curve with k hits per iteration.
/// Failed samples score 0 on answer metrics; they are left out of retrieval
/// metrics only when they have no trace. Throws GoldMismatch for results
/// without a matching sample and InvalidArgument on an empty result set.
MetricReport build_report(std::span<const RunResult> results, std::span<const Sample> golds, const KbLookup& lookup,
                          const ReportConfig& config = {});

}  // namespace mirag
