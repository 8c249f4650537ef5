#include <gtest/gtest.h>

#include <algorithm>
#include <atomic>
#include <filesystem>
#include <map>
#include <mutex>
#include <set>
#include <string>
#include <vector>

#include "mirag/pipeline.hpp"
#include "test_support.hpp"

using namespace mirag;
namespace fs = std::filesystem;

namespace {

const std::string kQgen2 =
    "## Analysis\nneed more\n## Queries\nQuestion 1: who built the lighthouse?\nQuestion 2: when was it lit?\n";

// Scripted model that also records every request and can fail selected keys.
class RecordingChat : public ChatModel {
 public:
  explicit RecordingChat(std::vector<ScriptEntry> entries) : inner_(entries) {}
  std::string chat(const ChatRequest& r) const override {
    {
      std::lock_guard lock(mu_);
      log_.push_back(r);
    }
    if (fail_kind_ && *fail_kind_ == r.kind) throw Error(ErrorCode::kRemote, "injected failure");
    return inner_.chat(r);
  }
  HttpTelemetry telemetry() const override { return inner_.telemetry(); }
  std::vector<ChatRequest> log() const {
    std::lock_guard lock(mu_);
    return log_;
  }
  std::size_t count(PromptKind k, const std::string& sample) const {
    std::lock_guard lock(mu_);
    return std::count_if(log_.begin(), log_.end(), [&](const auto& r) { return r.kind == k && r.sample_id == sample; });
  }
  std::optional<PromptKind> fail_kind_;

 private:
  ScriptedChatModel inner_;
  mutable std::mutex mu_;
  mutable std::vector<ChatRequest> log_;
};

std::vector<ScriptEntry> default_script(const std::string& description = "a red lighthouse") {
  return {
      {PromptKind::kInitialDescription, "*", std::nullopt, std::nullopt, description},
      {PromptKind::kRecordGeneration, "*", 0, std::nullopt, "record zero"},
      {PromptKind::kRecordGeneration, "*", std::nullopt, std::nullopt, "record later"},
      {PromptKind::kQueryGeneration, "*", std::nullopt, std::nullopt, kQgen2},
      {PromptKind::kFinalAnswer, "*", std::nullopt, std::nullopt, "Paris"},
      {PromptKind::kFewshotEm, "*", std::nullopt, std::nullopt, "Eiffel Tower"},
  };
}

struct World {
  std::shared_ptr<DeterministicProvider> text = std::make_shared<DeterministicProvider>(ProviderConfig::deterministic(7));
  std::shared_ptr<DeterministicProvider> image = std::make_shared<DeterministicProvider>(ProviderConfig::deterministic(9));
  std::optional<KbIndex> text_kb;
  std::optional<KbIndex> mm_kb;

  World(int n_text, int n_mm, std::vector<TextPassage> extra_text = {}, std::vector<MultimodalEntry> extra_mm = {}) {
    std::vector<TextPassage> ps = std::move(extra_text);
    for (int i = 0; i < n_text; ++i) {
      ps.push_back({"t" + std::to_string(100 + i), "Title " + std::to_string(i), "filler passage " + std::to_string(i),
                    std::nullopt, "E" + std::to_string(i)});
    }
    std::vector<MultimodalEntry> es = std::move(extra_mm);
    for (int i = 0; i < n_mm; ++i) {
      es.push_back({"m" + std::to_string(100 + i), "kbimg" + std::to_string(i), "section " + std::to_string(i),
                    std::nullopt, "E" + std::to_string(i)});
    }
    text_kb.emplace(build_text_kb(ps, *text));
    mm_kb.emplace(build_multimodal_kb(es, *text, *image, reader()));
  }

  static ImageReader reader() {
    return [](const std::string& ref) { return test::fake_image(ref); };
  }

  PipelineResources resources(std::shared_ptr<const ChatModel> llm) const {
    PipelineResources r;
    r.text_kb = &*text_kb;
    r.mm_kb = &*mm_kb;
    r.text_provider = text;
    r.image_provider = image;
    r.llm = std::move(llm);
    r.read_image = reader();
    return r;
  }
};

Sample sample(const std::string& id, const std::string& question = "What is this building?") {
  Sample s;
  s.sample_id = id;
  s.image_ref = "query-" + id;
  s.question = question;
  s.gold_answers = {"paris"};
  return s;
}

std::map<QuerySlot, int> slot_counts(const std::vector<ScoredHit>& hits) {
  std::map<QuerySlot, int> m;
  for (const auto& h : hits) ++m[h.slot];
  return m;
}

}  // namespace

TEST(InitialRecord, ScriptedContract) {
  World w(60, 40);
  auto llm = std::make_shared<RecordingChat>(default_script());
  Pipeline p(w.resources(llm), {});
  const auto s = sample("s1");
  auto st = p.prepare(s);
  auto [desc, trace] = p.initial_record(st);
  EXPECT_EQ(desc, "a red lighthouse");
  EXPECT_EQ(trace.iteration, 0);
  EXPECT_EQ(trace.record.text, "record zero");
  EXPECT_EQ(trace.text_hits.size(), 20u);
  EXPECT_EQ(trace.mm_hits.size(), 10u);
  EXPECT_EQ(trace.multi_query.expanded, "Question: What is this building?\na red lighthouse\n");
  EXPECT_TRUE(trace.multi_query.generated.empty());
  for (const auto& h : trace.text_hits) EXPECT_EQ(h.slot, QuerySlot::kInitial);
  // record generation saw the image and the description
  const auto log = llm->log();
  ASSERT_EQ(log.size(), 2u);
  EXPECT_EQ(log[1].kind, PromptKind::kRecordGeneration);
  EXPECT_TRUE(log[1].messages[0].parts[0].is_image());
  EXPECT_NE(log[1].messages[0].text().find("Image description: a red lighthouse\n[Passage 1]"), std::string::npos);
}

TEST(InitialRecord, EmptyDescriptionFallsBackToQuestion) {
  World w(30, 20);
  Pipeline p(w.resources(std::make_shared<RecordingChat>(default_script("   "))), {});
  const auto s = sample("s1");
  auto st = p.prepare(s);
  auto [desc, trace] = p.initial_record(st);
  EXPECT_EQ(desc, "");
  EXPECT_EQ(trace.multi_query.expanded, s.question);
}

TEST(InitialRecord, FailedDescriptionFallsBackToQuestion) {
  World w(30, 20);
  auto llm = std::make_shared<RecordingChat>(default_script());
  llm->fail_kind_ = PromptKind::kInitialDescription;
  Pipeline p(w.resources(llm), {});
  const auto s = sample("s1");
  auto st = p.prepare(s);
  auto [desc, trace] = p.initial_record(st);
  EXPECT_EQ(desc, "");
  EXPECT_EQ(trace.multi_query.expanded, s.question);
}

TEST(InitialRecord, PlantedDocIsRetrieved) {
  // Ten docs; one holds exactly the expanded query text, so its embedding
  // equals the query embedding.
  const std::string expanded = "Question: What is this building?\na red lighthouse\n";
  World w(9, 5, {{"planted", "Lighthouse", expanded, std::nullopt, "EL"}});
  Pipeline p(w.resources(std::make_shared<RecordingChat>(default_script())), {});
  const auto s = sample("s1");
  auto st = p.prepare(s);
  auto [desc, trace] = p.initial_record(st);
  ASSERT_FALSE(trace.text_hits.empty());
  EXPECT_EQ(trace.text_hits[0].doc_id, "planted");
  EXPECT_NEAR(trace.text_hits[0].score, 1.0, 1e-6);
  EXPECT_EQ(trace.text_hits.size(), 10u);
}

TEST(IterateOnce, TwoGeneratedQueriesSplitBudget) {
  World w(200, 150);
  auto llm = std::make_shared<RecordingChat>(default_script());
  Pipeline p(w.resources(llm), {});
  const auto s = sample("s1");
  auto st = p.prepare(s);
  p.initial_record(st);
  const auto t = p.iterate_once(st, 1);
  EXPECT_EQ(t.multi_query.expanded, "Question: What is this building?\nrecord zero\n");
  EXPECT_EQ(t.multi_query.generated,
            (std::vector<std::string>{"who built the lighthouse?", "when was it lit?"}));
  EXPECT_FALSE(t.generation_fallback);
  EXPECT_EQ(t.text_hits.size(), 20u);
  EXPECT_EQ(t.mm_hits.size(), 10u);
  // without collisions the slots hold exactly their quotas; collisions only
  // move hits towards the expanded slot
  auto tc = slot_counts(t.text_hits);
  auto mc = slot_counts(t.mm_hits);
  EXPECT_LE(tc[QuerySlot::kGenerated1], 5);
  EXPECT_LE(tc[QuerySlot::kGenerated2], 5);
  EXPECT_LE(mc[QuerySlot::kGenerated1], 3);
  EXPECT_LE(mc[QuerySlot::kGenerated2], 2);
  EXPECT_GE(tc[QuerySlot::kGenerated1] + tc[QuerySlot::kGenerated2], 1);
  // query generation is text-only and sees all records so far
  for (const auto& r : llm->log()) {
    if (r.kind != PromptKind::kQueryGeneration) continue;
    EXPECT_FALSE(r.messages[0].parts[0].is_image());
    EXPECT_NE(r.messages[0].text().find("Knowledge: Record 0: record zero\n"), std::string::npos);
  }
}

TEST(IterateOnce, MalformedTwiceFallsBackToExpansionOnly) {
  auto script = default_script();
  script[3].response = "I cannot produce queries.";
  World w(60, 40);
  auto llm = std::make_shared<RecordingChat>(script);
  Pipeline p(w.resources(llm), {});
  const auto s = sample("s1");
  auto st = p.prepare(s);
  p.initial_record(st);
  const auto t = p.iterate_once(st, 1);
  EXPECT_TRUE(t.multi_query.generated.empty());
  EXPECT_TRUE(t.generation_fallback);
  EXPECT_EQ(t.text_hits.size(), 20u);
  EXPECT_EQ(t.mm_hits.size(), 10u);
  EXPECT_EQ(slot_counts(t.text_hits)[QuerySlot::kExpanded], 20);
  EXPECT_EQ(llm->count(PromptKind::kQueryGeneration, "s1"), 2u);
}

TEST(IterateOnce, RetrySucceedsOnSecondAttempt) {
  auto script = default_script();
  script[3].response = "garbage";
  script[3].attempt = 0;
  script.push_back({PromptKind::kQueryGeneration, "*", std::nullopt, 1, kQgen2});
  World w(60, 40);
  Pipeline p(w.resources(std::make_shared<RecordingChat>(script)), {});
  const auto s = sample("s1");
  auto st = p.prepare(s);
  p.initial_record(st);
  const auto t = p.iterate_once(st, 1);
  EXPECT_EQ(t.multi_query.generated.size(), 2u);
  EXPECT_FALSE(t.generation_fallback);
}

TEST(IterateOnce, RecordSeesOnlyNewHits) {
  World w(60, 40);
  auto llm = std::make_shared<RecordingChat>(default_script());
  Pipeline p(w.resources(llm), {});
  const auto s = sample("s1");
  auto st = p.prepare(s);
  p.initial_record(st);
  const auto t = p.iterate_once(st, 1);
  const auto log = llm->log();
  const auto& last = log.back();
  ASSERT_EQ(last.kind, PromptKind::kRecordGeneration);
  ASSERT_EQ(last.iteration, 1);
  const std::string knowledge = format_knowledge(t.text_hits, t.mm_hits, &*w.text_kb, &*w.mm_kb);
  EXPECT_EQ(last.messages[0].text(),
            render_prompt(PromptKind::kRecordGeneration, {{"question", s.question}, {"knowledge", knowledge}}));
}

TEST(IterateOnce, PlantedGoldReachableOnlyThroughSecondSubQuery) {
  // The gold pair's section text is exactly sub-query 2, so its text half
  // matches that query perfectly.
  const std::string q2 = "when was it lit?";
  World w(50, 200, {}, {{"gold", "gold-image", q2, std::nullopt, "EG"}});
  const auto s = sample("s1");

  Pipeline full(w.resources(std::make_shared<RecordingChat>(default_script())), {});
  auto st = full.prepare(s);
  full.initial_record(st);
  const auto t_full = full.iterate_once(st, 1);

  PipelineConfig abl;
  abl.enable_generation = false;
  Pipeline exp_only(w.resources(std::make_shared<RecordingChat>(default_script())), abl);
  auto st2 = exp_only.prepare(s);
  exp_only.initial_record(st2);
  const auto t_abl = exp_only.iterate_once(st2, 1);

  auto has_gold = [](const IterationTrace& t) {
    return std::any_of(t.mm_hits.begin(), t.mm_hits.end(), [](const auto& h) { return h.doc_id == "gold"; });
  };
  EXPECT_TRUE(has_gold(t_full));
  EXPECT_FALSE(has_gold(t_abl));

  // oracle: recompute the gold score for each query directly
  const auto img = w.image->embed_image(test::fake_image("query-s1"));
  const auto gold_img = w.image->embed_image(test::fake_image("gold-image"));
  const double via_q2 = mm_score(w.text->embed_text(q2).dot(w.text->embed_text(q2)), img.dot(gold_img));
  for (const auto& h : t_full.mm_hits) {
    if (h.doc_id == "gold") {
      EXPECT_EQ(h.slot, QuerySlot::kGenerated2);
      EXPECT_NEAR(h.score, via_q2, 1e-6);
    }
  }
  const double via_expanded =
      mm_score(w.text->embed_text(t_abl.multi_query.expanded).dot(w.text->embed_text(q2)), img.dot(gold_img));
  EXPECT_LT(via_expanded, t_abl.mm_hits.back().score);
}

TEST(RunSample, DefaultFourIterationsGiveFiveTraces) {
  World w(60, 40);
  auto llm = std::make_shared<RecordingChat>(default_script());
  Pipeline p(w.resources(llm), {});
  const auto r = p.run_sample(sample("s1"));
  ASSERT_FALSE(r.failed) << r.error;
  ASSERT_EQ(r.traces.size(), 5u);
  for (int i = 0; i < 5; ++i) {
    EXPECT_EQ(r.traces[static_cast<std::size_t>(i)].iteration, i);
    EXPECT_EQ(r.traces[static_cast<std::size_t>(i)].record.iteration, i);
  }
  EXPECT_EQ(r.answer, "Paris");
  ASSERT_EQ(r.cumulative_doc_ids.size(), 5u);
  for (std::size_t i = 0; i + 1 < 5; ++i) {
    EXPECT_TRUE(std::includes(r.cumulative_doc_ids[i + 1].begin(), r.cumulative_doc_ids[i + 1].end(),
                              r.cumulative_doc_ids[i].begin(), r.cumulative_doc_ids[i].end()));
  }
  const auto log = llm->log();
  EXPECT_EQ(log.back().kind, PromptKind::kFinalAnswer);
  EXPECT_EQ(log.back().iteration, 4);
  EXPECT_NE(log.back().messages[0].text().find("Record 4: record later"), std::string::npos);
}

TEST(RunSample, ZeroIterationsIsRetrieveThenRead) {
  World w(30, 20);
  auto llm = std::make_shared<RecordingChat>(default_script());
  PipelineConfig c;
  c.iterations = 0;
  Pipeline p(w.resources(llm), c);
  const auto r = p.run_sample(sample("s1"));
  ASSERT_EQ(r.traces.size(), 1u);
  EXPECT_EQ(r.answer, "Paris");
  EXPECT_EQ(llm->count(PromptKind::kQueryGeneration, "s1"), 0u);
}

TEST(RunSample, ExactEntityUsesFewshotPrompt) {
  World w(30, 20);
  auto llm = std::make_shared<RecordingChat>(default_script());
  DemoPool pool;
  for (int i = 0; i < 5; ++i) {
    pool.demos.push_back({test::fake_image("demo" + std::to_string(i)), "ctx", "q" + std::to_string(i), "a"});
    pool.question_vecs.push_back(w.text->embed_text("q" + std::to_string(i)));
  }
  auto res = w.resources(llm);
  res.demo_pool = &pool;
  PipelineConfig c;
  c.iterations = 1;
  c.answer_mode = AnswerMode::kExactEntity;
  Pipeline p(res, c);
  const auto r = p.run_sample(sample("s1"));
  EXPECT_EQ(r.answer, "Eiffel Tower");
  const auto last = llm->log().back();
  EXPECT_EQ(last.kind, PromptKind::kFewshotEm);
  int images = 0;
  for (const auto& part : last.messages[0].parts) images += part.is_image();
  EXPECT_EQ(images, 4);
  EXPECT_NE(last.messages[0].text().find("##Example 3:"), std::string::npos);
}

TEST(RunSample, KbModesRestrictSearch) {
  World w(30, 20);
  PipelineConfig c;
  c.iterations = 1;
  c.kb_mode = KbMode::kTextualOnly;
  const auto r = Pipeline(w.resources(std::make_shared<RecordingChat>(default_script())), c).run_sample(sample("a"));
  EXPECT_TRUE(r.traces[1].mm_hits.empty());
  EXPECT_FALSE(r.traces[1].text_hits.empty());
  c.kb_mode = KbMode::kMultimodalOnly;
  const auto m = Pipeline(w.resources(std::make_shared<RecordingChat>(default_script())), c).run_sample(sample("a"));
  EXPECT_TRUE(m.traces[1].text_hits.empty());
  EXPECT_FALSE(m.traces[1].mm_hits.empty());
}

TEST(RunSample, ScriptMissFlagsFailureAndKeepsPartialTraces) {
  auto script = default_script();
  script.erase(script.begin() + 2);  // no record for iterations >= 1
  World w(30, 20);
  Pipeline p(w.resources(std::make_shared<RecordingChat>(script)), {});
  const auto r = p.run_sample(sample("s1"));
  EXPECT_TRUE(r.failed);
  EXPECT_NE(r.error.find("no scripted response"), std::string::npos);
  EXPECT_EQ(r.traces.size(), 1u);
  EXPECT_EQ(r.cumulative_doc_ids.size(), 1u);
}

TEST(Serialization, RoundTripIsLossless) {
  World w(30, 20);
  Pipeline p(w.resources(std::make_shared<RecordingChat>(default_script())), {});
  const auto r = p.run_sample(sample("s1"));
  const auto j = to_json(r);
  EXPECT_EQ(to_json(run_result_from_json(j)).dump(), j.dump());
  EXPECT_FALSE(j["traces"][0].contains("timings"));
  EXPECT_TRUE(to_json(r, true)["traces"][0].contains("timings"));
  EXPECT_EQ(j["traces"][1]["text_hits"][0]["iteration"], 1);
  EXPECT_EQ(j["status"], "ok");
}

TEST(RunBenchmark, ParallelResultsSortedAndDeterministic) {
  World w(60, 40);
  std::vector<Sample> samples;
  for (int i = 9; i >= 0; --i) samples.push_back(sample("s" + std::to_string(i)));
  test::TempDir dir;
  PipelineConfig c;
  c.iterations = 2;
  Pipeline p(w.resources(std::make_shared<RecordingChat>(default_script())), c);
  BenchmarkOptions o;
  o.parallelism = 4;
  o.output = dir / "a.jsonl";
  const auto rs = run_benchmark(p, samples, o);
  ASSERT_EQ(rs.size(), 10u);
  for (std::size_t i = 0; i < rs.size(); ++i) EXPECT_EQ(rs[i].sample_id, "s" + std::to_string(i));
  o.output = dir / "b.jsonl";
  o.parallelism = 3;
  run_benchmark(p, samples, o);
  EXPECT_EQ(test::slurp(dir / "a.jsonl"), test::slurp(dir / "b.jsonl"));
  EXPECT_EQ(read_run_results(dir / "a.jsonl").size(), 10u);
}

TEST(RunBenchmark, ResumeSkipsCompletedAndDropsTornLines) {
  World w(30, 20);
  std::vector<Sample> samples;
  for (int i = 0; i < 6; ++i) samples.push_back(sample("s" + std::to_string(i)));
  test::TempDir dir;
  PipelineConfig c;
  c.iterations = 1;
  BenchmarkOptions o;
  o.output = dir / "r.jsonl";

  {
    Pipeline p(w.resources(std::make_shared<RecordingChat>(default_script())), c);
    std::vector<Sample> first(samples.begin(), samples.begin() + 3);
    run_benchmark(p, first, o);
  }
  // simulate a crash mid-write
  std::string contents = test::slurp(dir / "r.jsonl");
  contents += R"({"sample_id":"s3","status":"ok","trac)";
  test::write_text(dir / "r.jsonl", contents);

  auto llm = std::make_shared<RecordingChat>(default_script());
  Pipeline p(w.resources(llm), c);
  o.resume = true;
  const auto rs = run_benchmark(p, samples, o);
  EXPECT_EQ(rs.size(), 6u);
  for (int i = 0; i < 3; ++i) EXPECT_EQ(llm->count(PromptKind::kFinalAnswer, "s" + std::to_string(i)), 0u);
  for (int i = 3; i < 6; ++i) EXPECT_EQ(llm->count(PromptKind::kFinalAnswer, "s" + std::to_string(i)), 1u);
  const auto back = read_run_results(dir / "r.jsonl");
  ASSERT_EQ(back.size(), 6u);
  std::set<std::string> ids;
  for (const auto& r : back) ids.insert(r.sample_id);
  EXPECT_EQ(ids.size(), 6u);
}

TEST(RunBenchmark, FailedSamplesAreIsolatedAndRetriedOnResume) {
  World w(30, 20);
  auto script = default_script();
  script.push_back({PromptKind::kFinalAnswer, "bad", std::nullopt, std::nullopt, ""});
  std::vector<Sample> samples = {sample("good"), sample("bad")};
  samples[1].image_ref = "";
  PipelineConfig c;
  c.iterations = 0;
  auto res = w.resources(std::make_shared<RecordingChat>(script));
  res.read_image = [](const std::string& ref) -> std::vector<std::uint8_t> {
    if (ref.empty()) throw Error(ErrorCode::kIo, "no image");
    return test::fake_image(ref);
  };
  Pipeline p(res, c);
  const auto rs = run_benchmark(p, samples, {});
  ASSERT_EQ(rs.size(), 2u);
  EXPECT_TRUE(rs[0].failed);  // "bad" sorts first
  EXPECT_FALSE(rs[1].failed);
}
