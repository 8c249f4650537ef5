#include "mirag/eval.hpp"

#include <cctype>
#include <cstdio>
#include <set>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

namespace mirag {

using nlohmann::json;

std::string normalize_answer(std::string_view s) {
  std::string cleaned;
  cleaned.reserve(s.size());
  for (unsigned char c : s) {
    if (std::ispunct(c)) continue;
    cleaned.push_back(std::isspace(c) ? ' ' : static_cast<char>(std::tolower(c)));
  }
  std::vector<std::string> tokens;
  std::istringstream in(cleaned);
  for (std::string tok; in >> tok;) tokens.push_back(std::move(tok));
  std::size_t first = 0;
  if (!tokens.empty() && (tokens[0] == "a" || tokens[0] == "an" || tokens[0] == "the")) first = 1;
  std::string out;
  for (std::size_t i = first; i < tokens.size(); ++i) {
    if (!out.empty()) out += ' ';
    out += tokens[i];
  }
  return out;
}

int exact_match(std::string_view prediction, std::span<const std::string> golds) {
  const auto p = normalize_answer(prediction);
  // an empty normalized gold matches nothing here either, so cover_em >= em
  for (const auto& g : golds) {
    const auto ng = normalize_answer(g);
    if (!ng.empty() && ng == p) return 1;
  }
  return 0;
}

int cover_em(std::string_view prediction, std::span<const std::string> golds) {
  const auto p = normalize_answer(prediction);
  for (const auto& g : golds) {
    const auto ng = normalize_answer(g);
    if (!ng.empty() && p.find(ng) != std::string::npos) return 1;
  }
  return 0;
}

double vqa_score(std::string_view prediction, std::span<const std::string> annotator_answers) {
  const auto p = normalize_answer(prediction);
  int matches = 0;
  for (const auto& a : annotator_answers) matches += normalize_answer(a) == p ? 1 : 0;
  return std::min(1.0, matches / 3.0);
}

KbLookup::KbLookup(std::initializer_list<const KbIndex*> kbs) {
  for (const auto* kb : kbs) {
    if (kb) add(*kb);
  }
}

void KbLookup::add(const KbIndex& kb) {
  for (const auto& r : kb.records()) rows_[r.doc_id] = Row{r.entity_id, r.text};
}

const KbLookup::Row& KbLookup::row(const std::string& doc_id) const {
  auto it = rows_.find(doc_id);
  if (it == rows_.end()) throw Error(ErrorCode::kUnknownDocId, doc_id);
  return it->second;
}

const std::optional<std::string>& KbLookup::entity_of(const std::string& doc_id) const {
  return row(doc_id).entity_id;
}

const std::string& KbLookup::text_of(const std::string& doc_id) const { return row(doc_id).text; }

std::optional<int> recall_at_k(std::span<const ScoredHit> hits, std::span<const std::string> gold_entity_ids,
                               const KbLookup& lookup, std::size_t k) {
  if (gold_entity_ids.empty()) return std::nullopt;
  const std::unordered_set<std::string> gold(gold_entity_ids.begin(), gold_entity_ids.end());
  const std::size_t n = std::min(k, hits.size());
  for (std::size_t i = 0; i < n; ++i) {
    const auto& e = lookup.entity_of(hits[i].doc_id);
    if (e && gold.contains(*e)) return 1;
  }
  return 0;
}

namespace {

std::vector<std::string> normalized_nonempty(std::span<const std::string> xs) {
  std::vector<std::string> out;
  for (const auto& x : xs) {
    auto n = normalize_answer(x);
    if (!n.empty()) out.push_back(std::move(n));
  }
  return out;
}

bool passage_contains(const std::string& passage, const std::vector<std::string>& golds) {
  const auto p = normalize_answer(passage);
  for (const auto& g : golds) {
    if (p.find(g) != std::string::npos) return true;
  }
  return false;
}

const std::vector<ScoredHit>& prr_hits(const RunResult& run, const IterationTrace& trace) {
  for (const auto& t : run.traces) {
    if (!t.text_hits.empty()) return trace.text_hits;
  }
  return trace.mm_hits;
}

}  // namespace

std::optional<int> prr_at_k(std::span<const ScoredHit> hits, std::span<const std::string> gold_answers,
                            const KbLookup& lookup, std::size_t k) {
  if (gold_answers.empty()) return std::nullopt;
  const auto golds = normalized_nonempty(gold_answers);
  const std::size_t n = std::min(k, hits.size());
  for (std::size_t i = 0; i < n; ++i) {
    if (passage_contains(lookup.text_of(hits[i].doc_id), golds)) return 1;
  }
  return 0;
}

const std::vector<ScoredHit>& recall_hits(const RunResult& run, const IterationTrace& trace) {
  for (const auto& t : run.traces) {
    if (!t.mm_hits.empty()) return trace.mm_hits;
  }
  return trace.text_hits;
}

std::vector<int> cumulative_recall(const RunResult& run, std::span<const std::string> gold_entity_ids,
                                   const KbLookup& lookup, std::size_t k_per_iter) {
  std::vector<int> out;
  int found = 0;
  for (const auto& t : run.traces) {
    if (!found) found = recall_at_k(recall_hits(run, t), gold_entity_ids, lookup, k_per_iter).value_or(0);
    out.push_back(found);
  }
  return out;
}

std::vector<int> cumulative_prr(const RunResult& run, std::span<const std::string> gold_answers,
                                const KbLookup& lookup, std::size_t k_per_iter) {
  std::vector<int> out;
  int found = 0;
  for (const auto& t : run.traces) {
    if (!found) found = prr_at_k(prr_hits(run, t), gold_answers, lookup, k_per_iter).value_or(0);
    out.push_back(found);
  }
  return out;
}

MetricReport build_report(std::span<const RunResult> results, std::span<const Sample> golds, const KbLookup& lookup,
                          const ReportConfig& config) {
  if (results.empty()) throw Error(ErrorCode::kInvalidArgument, "no run results to evaluate");
  std::unordered_map<std::string, const Sample*> gold_of;
  for (const auto& s : golds) gold_of[s.sample_id] = &s;

  MetricReport report;
  report.config_echo = config.config_echo;
  report.config_echo["ks"] = config.ks;
  report.config_echo["k_per_iter"] = config.k_per_iter;

  std::map<std::string, double> sums;
  std::map<std::string, std::size_t> counts;
  auto add = [&](const std::string& key, double v) {
    sums[key] += v;
    counts[key] += 1;
  };
  std::vector<double> cum_sum, cum_prr_sum;
  std::vector<std::size_t> cum_n, cum_prr_n;
  auto add_curve = [](std::vector<double>& sum, std::vector<std::size_t>& n, const std::vector<int>& curve) {
    if (sum.size() < curve.size()) {
      sum.resize(curve.size(), 0.0);
      n.resize(curve.size(), 0);
    }
    for (std::size_t i = 0; i < curve.size(); ++i) {
      sum[i] += curve[i];
      n[i] += 1;
    }
  };

  for (const auto& run : results) {
    auto it = gold_of.find(run.sample_id);
    if (it == gold_of.end()) throw Error(ErrorCode::kGoldMismatch, "no gold data for sample " + run.sample_id);
    const Sample& gold = *it->second;

    MetricRow row;
    row.sample_id = run.sample_id;
    row.failed = run.failed;
    const std::string prediction = run.failed ? std::string() : run.answer;
    row.em = run.failed ? 0 : exact_match(prediction, gold.gold_answers);
    row.cover_em = run.failed ? 0 : cover_em(prediction, gold.gold_answers);
    add("em", row.em);
    add("cover_em", row.cover_em);
    if (!gold.annotator_answers.empty()) {
      row.vqa = run.failed ? 0.0 : vqa_score(prediction, gold.annotator_answers);
      add("vqa_score", *row.vqa);
    }
    if (config.judge && !gold.gold_answers.empty()) {
      double best = 0.0;
      if (!run.failed) {
        for (const auto& g : gold.gold_answers) best = std::max(best, config.judge(prediction, g, gold.question));
      }
      row.judge = best;
      add("judge", best);
    }

    if (!run.traces.empty()) {
      if (!gold.gold_entity_ids.empty()) {
        for (auto k : config.ks) {
          row.recall_at[k] = cumulative_recall(run, gold.gold_entity_ids, lookup, k).back();
          add("recall@" + std::to_string(k), row.recall_at[k]);
        }
        row.cumulative_recall = cumulative_recall(run, gold.gold_entity_ids, lookup, config.k_per_iter);
        add_curve(cum_sum, cum_n, row.cumulative_recall);
      }
      if (!gold.gold_answers.empty()) {
        for (auto k : config.ks) {
          row.prr_at[k] = cumulative_prr(run, gold.gold_answers, lookup, k).back();
          add("prr@" + std::to_string(k), row.prr_at[k]);
        }
        row.cumulative_prr = cumulative_prr(run, gold.gold_answers, lookup, config.k_per_iter);
        add_curve(cum_prr_sum, cum_prr_n, row.cumulative_prr);
      }
    }
    report.rows.push_back(std::move(row));
  }

  for (const auto& [k, s] : sums) report.aggregates[k] = s / static_cast<double>(counts[k]);
  report.counts = counts;
  for (std::size_t i = 0; i < cum_sum.size(); ++i) report.cumulative_recall_mean.push_back(cum_sum[i] / cum_n[i]);
  for (std::size_t i = 0; i < cum_prr_sum.size(); ++i) {
    report.cumulative_prr_mean.push_back(cum_prr_sum[i] / cum_prr_n[i]);
  }
  return report;
}

json MetricReport::to_json() const {
  json rows_j = json::array();
  for (const auto& r : rows) {
    json jr = {{"sample_id", r.sample_id}, {"failed", r.failed}, {"em", r.em}, {"cover_em", r.cover_em}};
    jr["vqa_score"] = r.vqa ? json(*r.vqa) : json(nullptr);
    if (r.judge) jr["judge"] = *r.judge;
    json rec = json::object(), prr = json::object();
    for (const auto& [k, v] : r.recall_at) rec[std::to_string(k)] = v;
    for (const auto& [k, v] : r.prr_at) prr[std::to_string(k)] = v;
    jr["recall_at"] = rec;
    jr["prr_at"] = prr;
    jr["cumulative_recall_by_iter"] = r.cumulative_recall;
    jr["cumulative_prr_by_iter"] = r.cumulative_prr;
    rows_j.push_back(std::move(jr));
  }
  return {{"schema_version", kSchemaVersion},
          {"config", config_echo},
          {"aggregates", aggregates},
          {"counts", counts},
          {"cumulative_recall_by_iter", cumulative_recall_mean},
          {"cumulative_prr_by_iter", cumulative_prr_mean},
          {"rows", rows_j}};
}

std::string MetricReport::to_table() const {
  std::ostringstream out;
  char buf[128];
  std::snprintf(buf, sizeof(buf), "%-16s %10s %8s\n", "metric", "value", "n");
  out << buf;
  for (const auto& [k, v] : aggregates) {
    std::snprintf(buf, sizeof(buf), "%-16s %10.2f %8zu\n", k.c_str(), 100.0 * v, counts.at(k));
    out << buf;
  }
  auto curve = [&](const char* name, const std::vector<double>& c) {
    if (c.empty()) return;
    out << name << " by iteration:";
    for (std::size_t i = 0; i < c.size(); ++i) {
      std::snprintf(buf, sizeof(buf), " [%zu] %.2f", i, 100.0 * c[i]);
      out << buf;
    }
    out << "\n";
  };
  curve("cumulative recall", cumulative_recall_mean);
  curve("cumulative prr", cumulative_prr_mean);
  return out.str();
}

}  // namespace mirag
