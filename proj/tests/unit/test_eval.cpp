#include <gtest/gtest.h>

#include <fstream>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "mirag/eval.hpp"
#include "test_support.hpp"

using namespace mirag;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

const fs::path kMetrics = fs::path(MIRAG_FIXTURE_DIR) / "metrics";

std::vector<json> read_jsonl(const fs::path& p) {
  std::vector<json> out;
  std::ifstream in(p);
  for (std::string line; std::getline(in, line);) {
    if (!line.empty()) out.push_back(json::parse(line));
  }
  return out;
}

// KB built from (doc_id, entity_id?, text) rows; the matrix is irrelevant.
KbIndex lookup_kb(const std::vector<json>& rows) {
  std::vector<KbRecord> recs;
  for (const auto& r : rows) {
    KbRecord k;
    k.doc_id = r["doc_id"];
    k.text = r["text"];
    if (r.contains("entity_id")) k.entity_id = r["entity_id"].get<std::string>();
    recs.push_back(k);
  }
  EmbeddingMatrix m = EmbeddingMatrix::Ones(static_cast<Eigen::Index>(recs.size()), 2);
  return KbIndex(KbKind::kTextual, 0, m, recs, "fixture");
}

std::vector<ScoredHit> hits_of(const std::vector<std::string>& ids, HitSource src = HitSource::kTextual) {
  std::vector<ScoredHit> out;
  double s = 1.0;
  for (const auto& id : ids) out.push_back({id, s -= 0.01, src, QuerySlot::kExpanded});
  return out;
}

IterationTrace trace(int it, std::vector<std::string> text, std::vector<std::string> mm) {
  IterationTrace t;
  t.iteration = it;
  t.text_hits = hits_of(text);
  t.mm_hits = hits_of(mm, HitSource::kMultimodal);
  return t;
}

}  // namespace

TEST(Normalize, Examples) {
  EXPECT_EQ(normalize_answer("The Eiffel Tower."), "eiffel tower");
  EXPECT_EQ(normalize_answer("  PARIS "), "paris");
  EXPECT_EQ(normalize_answer(""), "");
  EXPECT_EQ(normalize_answer("An\tapple\n pie"), "apple pie");
  EXPECT_EQ(normalize_answer("tower of the city"), "tower of the city");
}

TEST(ExactMatch, Examples) {
  const std::vector<std::string> g = {"paris"};
  EXPECT_EQ(exact_match("Paris.", g), 1);
  EXPECT_EQ(exact_match("The answer is Paris", g), 0);
  EXPECT_EQ(cover_em("The answer is Paris", g), 1);
  EXPECT_EQ(cover_em("Parisian food", g), 1);
  EXPECT_EQ(cover_em("London", g), 0);
}

TEST(Fixtures, EmAndCoverEm) {
  const auto cases = read_jsonl(kMetrics / "em_cem.jsonl");
  ASSERT_EQ(cases.size(), 30u);
  for (const auto& c : cases) {
    const auto golds = c["golds"].get<std::vector<std::string>>();
    const auto pred = c["prediction"].get<std::string>();
    EXPECT_EQ(exact_match(pred, golds), c["em"].get<int>()) << c.dump();
    EXPECT_EQ(cover_em(pred, golds), c["cover_em"].get<int>()) << c.dump();
  }
}

TEST(Fixtures, VqaScore) {
  const auto cases = read_jsonl(kMetrics / "vqa.jsonl");
  ASSERT_EQ(cases.size(), 10u);
  for (const auto& c : cases) {
    EXPECT_NEAR(vqa_score(c["prediction"].get<std::string>(), c["answers"].get<std::vector<std::string>>()),
                c["score"].get<double>(), 1e-9)
        << c.dump();
  }
}

TEST(Fixtures, RecallAndPrr) {
  const auto kb = lookup_kb(read_jsonl(kMetrics / "retrieval_kb.jsonl"));
  KbLookup lookup{&kb};
  const auto cases = read_jsonl(kMetrics / "retrieval.jsonl");
  ASSERT_EQ(cases.size(), 20u);
  for (const auto& c : cases) {
    const auto hits = hits_of(c["hits"].get<std::vector<std::string>>());
    const auto k = c["k"].get<std::size_t>();
    EXPECT_EQ(recall_at_k(hits, c["entities"].get<std::vector<std::string>>(), lookup, k), c["recall"].get<int>())
        << c.dump();
    EXPECT_EQ(prr_at_k(hits, c["answers"].get<std::vector<std::string>>(), lookup, k), c["prr"].get<int>())
        << c.dump();
  }
}

TEST(VqaScore, Formula) {
  std::vector<std::string> a(10, "x");
  for (int i = 0; i < 5; ++i) a[static_cast<std::size_t>(i)] = "dog";
  EXPECT_DOUBLE_EQ(vqa_score("dog", a), 1.0);
  a.assign(10, "x");
  a[0] = "dog";
  EXPECT_NEAR(vqa_score("dog", a), 1.0 / 3.0, 1e-9);
  EXPECT_DOUBLE_EQ(vqa_score("cat", a), 0.0);
}

TEST(RecallAtK, RankCutoffAndUnknownDoc) {
  std::vector<json> rows;
  for (int i = 1; i <= 10; ++i) {
    rows.push_back({{"doc_id", "d" + std::to_string(i)}, {"entity_id", "E" + std::to_string(i)}, {"text", "t"}});
  }
  const auto kb = lookup_kb(rows);
  KbLookup lookup{&kb};
  const auto hits = hits_of({"d1", "d2", "d3", "d4", "d5", "d6", "d7"});
  EXPECT_EQ(recall_at_k(hits, std::vector<std::string>{"E3"}, lookup, 5), 1);
  EXPECT_EQ(recall_at_k(hits, std::vector<std::string>{"E7"}, lookup, 5), 0);
  EXPECT_FALSE(recall_at_k(hits, std::vector<std::string>{}, lookup, 5).has_value());
  try {
    recall_at_k(hits_of({"nope"}), std::vector<std::string>{"E1"}, lookup, 5);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kUnknownDocId);
  }
  EXPECT_THROW(prr_at_k(hits_of({"nope"}), std::vector<std::string>{"x"}, lookup, 5), Error);
}

TEST(RecallAtK, AgreesWithMembershipOracle) {
  std::mt19937 rng(17);
  std::vector<json> rows;
  for (int i = 0; i < 200; ++i) {
    json r = {{"doc_id", "d" + std::to_string(i)}, {"text", "t"}};
    if (i % 5) r["entity_id"] = "E" + std::to_string(i % 37);
    rows.push_back(r);
  }
  const auto kb = lookup_kb(rows);
  KbLookup lookup{&kb};
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<std::string> ids;
    const int n = static_cast<int>(rng() % 30);
    for (int i = 0; i < n; ++i) ids.push_back("d" + std::to_string(rng() % 200));
    std::vector<std::string> gold = {"E" + std::to_string(rng() % 37)};
    if (trial % 3 == 0) gold.push_back("E" + std::to_string(rng() % 37));
    const std::size_t k = 1 + rng() % 20;
    int want = 0;
    for (std::size_t i = 0; i < std::min<std::size_t>(k, ids.size()); ++i) {
      const int d = std::stoi(ids[i].substr(1));
      if (d % 5 == 0) continue;
      for (const auto& g : gold) want |= ("E" + std::to_string(d % 37)) == g;
    }
    EXPECT_EQ(recall_at_k(hits_of(ids), gold, lookup, k), want);
  }
}

TEST(CumulativeRecall, UnionSemantics) {
  std::vector<json> rows = {{{"doc_id", "g"}, {"entity_id", "G"}, {"text", "gold passage"}},
                            {{"doc_id", "x"}, {"entity_id", "X"}, {"text", "other"}},
                            {{"doc_id", "y"}, {"text", "other"}}};
  const auto kb = lookup_kb(rows);
  KbLookup lookup{&kb};
  RunResult run;
  run.traces = {trace(0, {}, {"x"}), trace(1, {}, {"y"}), trace(2, {}, {"g"}), trace(3, {}, {"x"}),
                trace(4, {}, {"y"})};
  const std::vector<std::string> gold = {"G"};
  EXPECT_EQ(cumulative_recall(run, gold, lookup, 5), (std::vector<int>{0, 0, 1, 1, 1}));
  run.traces[0] = trace(0, {}, {"g"});
  EXPECT_EQ(cumulative_recall(run, gold, lookup, 5), (std::vector<int>{1, 1, 1, 1, 1}));
  // k_per_iter cuts each iteration's list
  RunResult deep;
  deep.traces = {trace(0, {}, {"x", "y", "g"}), trace(1, {}, {"y", "g"})};
  EXPECT_EQ(cumulative_recall(deep, gold, lookup, 1), (std::vector<int>{0, 0}));
  EXPECT_EQ(cumulative_recall(deep, gold, lookup, 2), (std::vector<int>{0, 1}));
  // text-only runs fall back to textual hits
  RunResult text_only;
  text_only.traces = {trace(0, {"x"}, {}), trace(1, {"g"}, {})};
  EXPECT_EQ(cumulative_recall(text_only, gold, lookup, 5), (std::vector<int>{0, 1}));
  EXPECT_EQ(cumulative_prr(text_only, std::vector<std::string>{"gold"}, lookup, 5), (std::vector<int>{0, 1}));
}

TEST(Properties, CoverEmDominatesExactMatchOnFuzz) {
  std::mt19937 rng(23);
  const std::string alphabet = "ab .,!THE an";
  auto rand_str = [&] {
    std::string s;
    const int n = static_cast<int>(rng() % 12);
    for (int i = 0; i < n; ++i) s.push_back(alphabet[rng() % alphabet.size()]);
    return s;
  };
  const std::vector<std::string> words = {"the", "a", "an", "paris", "Paris.", "", " ", "the paris", "a b"};
  for (int i = 0; i < 10000; ++i) {
    const std::string p = i % 2 ? rand_str() : words[rng() % words.size()];
    const std::vector<std::string> g = {i % 3 ? rand_str() : words[rng() % words.size()]};
    ASSERT_GE(cover_em(p, g), exact_match(p, g)) << "'" << p << "' vs '" << g[0] << "'";
  }
}

namespace {

struct ReportWorld {
  KbIndex kb = lookup_kb({{{"doc_id", "g"}, {"entity_id", "G"}, {"text", "paris is here"}},
                          {{"doc_id", "x"}, {"entity_id", "X"}, {"text", "other"}}});
  std::vector<Sample> golds;
  std::vector<RunResult> runs;

  ReportWorld() {
    Sample a;
    a.sample_id = "a";
    a.gold_answers = {"paris"};
    a.gold_entity_ids = {"G"};
    a.annotator_answers = {"paris", "paris", "paris"};
    Sample b = a;
    b.sample_id = "b";
    golds = {a, b};
    RunResult ra;
    ra.sample_id = "a";
    ra.answer = "Paris";
    ra.traces = {trace(0, {"x"}, {"x"}), trace(1, {"g"}, {"g"})};
    RunResult rb;
    rb.sample_id = "b";
    rb.answer = "It is Paris";
    rb.traces = {trace(0, {"x"}, {"x"}), trace(1, {"x"}, {"x"})};
    runs = {ra, rb};
  }
};

}  // namespace

TEST(BuildReport, MeansAndSchema) {
  ReportWorld w;
  KbLookup lookup{&w.kb};
  const auto rep = build_report(w.runs, w.golds, lookup);
  EXPECT_DOUBLE_EQ(rep.aggregates.at("em"), 0.5);
  EXPECT_DOUBLE_EQ(rep.aggregates.at("cover_em"), 1.0);
  EXPECT_DOUBLE_EQ(rep.aggregates.at("recall@5"), 0.5);
  EXPECT_DOUBLE_EQ(rep.aggregates.at("prr@5"), 0.5);
  EXPECT_NEAR(rep.aggregates.at("vqa_score"), 0.5, 1e-12);
  EXPECT_EQ(rep.cumulative_recall_mean, (std::vector<double>{0.0, 0.5}));
  const auto j = rep.to_json();
  EXPECT_EQ(j["schema_version"], 1);
  for (const char* key : {"em", "cover_em", "vqa_score", "recall@1", "recall@5", "recall@10", "prr@5"}) {
    EXPECT_TRUE(j["aggregates"].contains(key)) << key;
  }
  EXPECT_EQ(j["rows"][0]["cumulative_recall_by_iter"], json({0, 1}));
  EXPECT_NE(rep.to_table().find("cover_em"), std::string::npos);
  // independent aggregation of the per-sample rows
  double em = 0;
  for (const auto& r : j["rows"]) em += r["em"].get<double>();
  EXPECT_NEAR(em / 2, j["aggregates"]["em"].get<double>(), 1e-9);
}

TEST(BuildReport, ErrorsAndFailedSamples) {
  ReportWorld w;
  KbLookup lookup{&w.kb};
  EXPECT_THROW(build_report({}, w.golds, lookup), Error);
  auto runs = w.runs;
  runs[0].sample_id = "zzz";
  try {
    build_report(runs, w.golds, lookup);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kGoldMismatch);
    EXPECT_NE(std::string(e.what()).find("zzz"), std::string::npos);
  }
  runs = w.runs;
  runs[0].failed = true;
  const auto rep = build_report(runs, w.golds, lookup);
  EXPECT_EQ(rep.rows[0].em, 0);
  EXPECT_EQ(rep.rows[0].recall_at.at(5), 1);  // traces survive failure
  runs[0].traces.clear();
  const auto rep2 = build_report(runs, w.golds, lookup);
  EXPECT_EQ(rep2.counts.at("recall@5"), 1u);
  EXPECT_EQ(rep2.counts.at("em"), 2u);
}

TEST(BuildReport, RecomputedFromDumpsIsIdentical) {
  ReportWorld w;
  KbLookup lookup{&w.kb};
  const auto live = build_report(w.runs, w.golds, lookup).to_json();
  std::vector<RunResult> back;
  for (const auto& r : w.runs) back.push_back(run_result_from_json(json::parse(to_json(r).dump())));
  EXPECT_EQ(build_report(back, w.golds, lookup).to_json().dump(), live.dump());
}

TEST(BuildReport, PluggableJudge) {
  ReportWorld w;
  KbLookup lookup{&w.kb};
  ReportConfig cfg;
  cfg.judge = [](const std::string& p, const std::string& g, const std::string&) {
    return static_cast<double>(cover_em(p, std::vector<std::string>{g}));
  };
  EXPECT_DOUBLE_EQ(build_report(w.runs, w.golds, lookup, cfg).aggregates.at("judge"), 1.0);
}
