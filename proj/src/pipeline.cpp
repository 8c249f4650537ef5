#include "mirag/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <fstream>
#include <mutex>
#include <set>
#include <thread>
#include <unordered_map>
#include <unordered_set>

#include "mirag/io.hpp"

namespace mirag {

using nlohmann::json;
using Clock = std::chrono::steady_clock;

namespace {

double ms_since(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

}  // namespace

std::string_view to_string(AnswerMode m) { return m == AnswerMode::kFreeForm ? "free-form" : "exact-entity"; }

AnswerMode answer_mode_from_string(std::string_view s) {
  if (s == "free-form") return AnswerMode::kFreeForm;
  if (s == "exact-entity") return AnswerMode::kExactEntity;
  throw Error(ErrorCode::kInvalidArgument, "unknown answer mode: " + std::string(s));
}

std::string_view to_string(KbMode m) {
  switch (m) {
    case KbMode::kBoth: return "both";
    case KbMode::kTextualOnly: return "textual-only";
    case KbMode::kMultimodalOnly: return "multimodal-only";
  }
  return "both";
}

KbMode kb_mode_from_string(std::string_view s) {
  if (s == "both") return KbMode::kBoth;
  if (s == "textual-only") return KbMode::kTextualOnly;
  if (s == "multimodal-only") return KbMode::kMultimodalOnly;
  throw Error(ErrorCode::kInvalidArgument, "unknown KB mode: " + std::string(s));
}

std::string format_knowledge(const std::vector<ScoredHit>& text_hits, const std::vector<ScoredHit>& mm_hits,
                             const KbIndex* text_kb, const KbIndex* mm_kb) {
  auto sorted = [](std::vector<ScoredHit> hits) {
    std::sort(hits.begin(), hits.end(), ranks_before);
    return hits;
  };
  std::string out;
  std::size_t n = 0;
  for (const auto& h : sorted(text_hits)) {
    const auto row = text_kb ? text_kb->find(h.doc_id) : std::nullopt;
    if (!row) throw Error(ErrorCode::kUnknownDocId, h.doc_id);
    const auto& rec = text_kb->record(*row);
    out += "[Passage " + std::to_string(++n) + "] ";
    if (!rec.title.empty()) out += rec.title + ": ";
    out += rec.text + "\n";
  }
  n = 0;
  for (const auto& h : sorted(mm_hits)) {
    const auto row = mm_kb ? mm_kb->find(h.doc_id) : std::nullopt;
    if (!row) throw Error(ErrorCode::kUnknownDocId, h.doc_id);
    out += "[Image-Text " + std::to_string(++n) + "] " + mm_kb->record(*row).text + "\n";
  }
  return out;
}

std::string format_records(std::span<const ReasoningRecord> records) {
  std::string out;
  for (const auto& r : records) {
    if (!out.empty()) out += "\n";
    out += "Record " + std::to_string(r.iteration) + ": " + r.text;
  }
  return out;
}

Pipeline::Pipeline(PipelineResources resources, PipelineConfig config)
    : res_(std::move(resources)), config_(config) {
  if (config_.iterations < 0) throw Error(ErrorCode::kInvalidArgument, "iterations must be >= 0");
  if (!res_.llm) throw Error(ErrorCode::kInvalidArgument, "pipeline needs a chat model");
  if (!res_.text_provider || !res_.image_provider) {
    throw Error(ErrorCode::kInvalidArgument, "pipeline needs text and image providers");
  }
  if (!res_.read_image) res_.read_image = file_image_reader({});
  const bool need_text = config_.kb_mode != KbMode::kMultimodalOnly;
  const bool need_mm = config_.kb_mode != KbMode::kTextualOnly;
  if (need_text && !res_.text_kb) throw Error(ErrorCode::kInvalidArgument, "textual KB required for this KB mode");
  if (need_mm && !res_.mm_kb) throw Error(ErrorCode::kInvalidArgument, "multimodal KB required for this KB mode");
}

KbHandle Pipeline::text_handle() const {
  if (config_.kb_mode == KbMode::kMultimodalOnly) return {};
  return {res_.text_kb, res_.text_provider.get()};
}

KbHandle Pipeline::mm_handle() const {
  if (config_.kb_mode == KbMode::kTextualOnly) return {};
  return {res_.mm_kb, res_.text_provider.get()};
}

Pipeline::SampleState Pipeline::prepare(const Sample& sample) const {
  if (trim(sample.question).empty()) throw Error(ErrorCode::kInvalidArgument, sample.sample_id + ": empty question");
  SampleState st;
  st.sample = &sample;
  try {
    st.image = res_.read_image(sample.image_ref);
  } catch (const std::exception& e) {
    throw Error(ErrorCode::kImageRead, sample.sample_id + ": " + e.what());
  }
  st.image_vec = l2_normalize(res_.image_provider->embed_image(st.image));
  return st;
}

std::string Pipeline::chat(PromptKind kind, const SampleState& state, int iteration, int attempt,
                           std::vector<ChatMessage> messages) const {
  ChatRequest req{kind, state.sample->sample_id, iteration, attempt, std::move(messages)};
  return res_.llm->chat(req);
}

namespace {

ChatMessage user_message(const std::vector<std::uint8_t>* image, std::string text) {
  ChatMessage m;
  m.role = Role::kUser;
  if (image) m.parts.push_back(ContentPart::of_image(*image));
  m.parts.push_back(ContentPart::of_text(std::move(text)));
  return m;
}

bool is_script_miss(const Error& e) { return e.code() == ErrorCode::kScriptMiss; }

}  // namespace

IterationTrace Pipeline::search_and_record(SampleState& state, int iteration, MultiQuery mq, QuerySlot primary,
                                           const std::string& description) const {
  IterationTrace trace;
  trace.iteration = iteration;

  auto t0 = Clock::now();
  JointHits hits = joint_search(text_handle(), mm_handle(), mq, state.image_vec, config_.budget, primary);
  trace.search_ms = ms_since(t0);
  trace.failed_slots = std::move(hits.failed_slots);

  std::string knowledge;
  if (!description.empty()) knowledge = "Image description: " + description + "\n";
  knowledge += format_knowledge(hits.text, hits.mm, res_.text_kb, res_.mm_kb);
  const std::string prompt =
      render_prompt(PromptKind::kRecordGeneration, {{"question", state.sample->question}, {"knowledge", knowledge}});

  t0 = Clock::now();
  std::string record = chat(PromptKind::kRecordGeneration, state, iteration, 0, {user_message(&state.image, prompt)});
  trace.llm_ms += ms_since(t0);
  if (trim(record).empty()) {
    throw Error(ErrorCode::kMalformedResponse, "empty reasoning record at iteration " + std::to_string(iteration));
  }

  trace.record.iteration = iteration;
  trace.record.text = std::move(record);
  for (const auto& h : hits.text) trace.record.sources.push_back(h.doc_id);
  for (const auto& h : hits.mm) trace.record.sources.push_back(h.doc_id);
  trace.multi_query = std::move(mq);
  trace.text_hits = std::move(hits.text);
  trace.mm_hits = std::move(hits.mm);
  state.records.push_back(trace.record);
  return trace;
}

std::pair<std::string, IterationTrace> Pipeline::initial_record(SampleState& state) const {
  const auto& q = state.sample->question;
  std::string description;
  auto t0 = Clock::now();
  try {
    description = chat(PromptKind::kInitialDescription, state, 0, 0,
                       {user_message(&state.image, render_prompt(PromptKind::kInitialDescription, {{"question", q}}))});
  } catch (const Error& e) {
    if (is_script_miss(e)) throw;
    description.clear();
  }
  const double desc_ms = ms_since(t0);
  description = trim(description);

  MultiQuery mq;
  mq.expanded = description.empty()
                    ? q
                    : render_prompt(PromptKind::kQueryExpansion, {{"question", q}, {"reasoning_record", description}});
  auto trace = search_and_record(state, 0, std::move(mq), QuerySlot::kInitial, description);
  trace.llm_ms += desc_ms;
  return {description, std::move(trace)};
}

IterationTrace Pipeline::iterate_once(SampleState& state, int iteration) const {
  if (iteration < 1 || static_cast<std::size_t>(iteration) != state.records.size()) {
    throw Error(ErrorCode::kInvalidArgument, "iterate_once(" + std::to_string(iteration) + ") needs records 0.." +
                                                 std::to_string(iteration - 1));
  }
  const auto& q = state.sample->question;
  MultiQuery mq;
  mq.expanded =
      render_prompt(PromptKind::kQueryExpansion, {{"question", q}, {"reasoning_record", state.records.back().text}});

  bool fallback = false;
  double gen_ms = 0.0;
  if (config_.enable_generation) {
    const std::string prompt = render_prompt(
        PromptKind::kQueryGeneration, {{"question", q}, {"reasoning_records", format_records(state.records)}});
    fallback = true;
    for (int attempt = 0; attempt < 2 && fallback; ++attempt) {
      auto t0 = Clock::now();
      try {
        const auto raw = chat(PromptKind::kQueryGeneration, state, iteration, attempt, {user_message(nullptr, prompt)});
        auto parsed = parse_subqueries(raw);
        mq.generated.assign(parsed.questions.begin(), parsed.questions.end());
        fallback = false;
      } catch (const Error& e) {
        if (is_script_miss(e)) throw;
      }
      gen_ms += ms_since(t0);
    }
  }

  auto trace = search_and_record(state, iteration, std::move(mq), QuerySlot::kExpanded, "");
  trace.generation_fallback = fallback;
  trace.llm_ms += gen_ms;
  return trace;
}

std::string Pipeline::final_answer(const SampleState& state) const {
  const auto& q = state.sample->question;
  const std::string records = format_records(state.records);
  std::vector<ChatMessage> messages;
  PromptKind kind = PromptKind::kFinalAnswer;
  if (config_.answer_mode == AnswerMode::kExactEntity) {
    kind = PromptKind::kFewshotEm;
    std::vector<FewshotDemo> demos;
    if (res_.demo_pool && config_.fewshot_count > 0 && !res_.demo_pool->demos.empty()) {
      const auto qv = l2_normalize(res_.text_provider->embed_text(q));
      for (auto i : select_demonstrations(qv, res_.demo_pool->question_vecs, config_.fewshot_count)) {
        demos.push_back(res_.demo_pool->demos[i]);
      }
    }
    messages = build_fewshot_prompt(q, state.image, records, demos);
  } else {
    messages = {user_message(&state.image,
                             render_prompt(PromptKind::kFinalAnswer, {{"question", q}, {"reasoning_records", records}}))};
  }
  return chat(kind, state, config_.iterations, 0, std::move(messages));
}

namespace {

void fill_cumulative(RunResult& r) {
  r.cumulative_doc_ids.clear();
  std::set<std::string> acc;
  for (const auto& t : r.traces) {
    for (const auto& h : t.text_hits) acc.insert(h.doc_id);
    for (const auto& h : t.mm_hits) acc.insert(h.doc_id);
    r.cumulative_doc_ids.emplace_back(acc.begin(), acc.end());
  }
}

}  // namespace

RunResult Pipeline::run_sample(const Sample& sample) const {
  RunResult result;
  result.sample_id = sample.sample_id;
  try {
    SampleState state = prepare(sample);
    auto [description, trace0] = initial_record(state);
    result.description = std::move(description);
    result.traces.push_back(std::move(trace0));
    for (int i = 1; i <= config_.iterations; ++i) result.traces.push_back(iterate_once(state, i));
    result.answer = final_answer(state);
  } catch (const std::exception& e) {
    result.failed = true;
    result.error = e.what();
  }
  fill_cumulative(result);
  return result;
}

// ---------------------------------------------------------------------------
// Serialization

json hit_to_json(const ScoredHit& hit, int iteration) {
  return {{"doc_id", hit.doc_id},
          {"score", hit.score},
          {"source", std::string(to_string(hit.source))},
          {"query_slot", std::string(to_string(hit.slot))},
          {"iteration", iteration}};
}

json to_json(const RunResult& r, bool with_timings) {
  json traces = json::array();
  for (const auto& t : r.traces) {
    json th = json::array(), mh = json::array(), failed = json::array();
    for (const auto& h : t.text_hits) th.push_back(hit_to_json(h, t.iteration));
    for (const auto& h : t.mm_hits) mh.push_back(hit_to_json(h, t.iteration));
    for (auto s : t.failed_slots) failed.push_back(std::string(to_string(s)));
    json jt = {{"iteration", t.iteration},
               {"multi_query", {{"expanded", t.multi_query.expanded}, {"generated", t.multi_query.generated}}},
               {"generation_fallback", t.generation_fallback},
               {"failed_slots", failed},
               {"text_hits", th},
               {"mm_hits", mh},
               {"record", {{"iteration", t.record.iteration}, {"text", t.record.text}, {"sources", t.record.sources}}}};
    if (with_timings) jt["timings"] = {{"search_ms", t.search_ms}, {"llm_ms", t.llm_ms}};
    traces.push_back(std::move(jt));
  }
  json j = {{"sample_id", r.sample_id},
            {"status", r.failed ? "failed" : "ok"},
            {"description", r.description},
            {"traces", traces},
            {"answer", r.answer},
            {"cumulative_doc_ids", r.cumulative_doc_ids}};
  if (r.failed) j["error"] = r.error;
  return j;
}

RunResult run_result_from_json(const json& j) {
  RunResult r;
  try {
    r.sample_id = j.at("sample_id").get<std::string>();
    r.failed = j.at("status").get<std::string>() != "ok";
    r.error = j.value("error", "");
    r.description = j.value("description", "");
    r.answer = j.value("answer", "");
    auto hits_of = [](const json& arr) {
      std::vector<ScoredHit> out;
      for (const auto& h : arr) {
        out.push_back({h.at("doc_id").get<std::string>(), h.at("score").get<double>(),
                       hit_source_from_string(h.at("source").get<std::string>()),
                       query_slot_from_string(h.at("query_slot").get<std::string>())});
      }
      return out;
    };
    for (const auto& jt : j.at("traces")) {
      IterationTrace t;
      t.iteration = jt.at("iteration").get<int>();
      t.multi_query.expanded = jt.at("multi_query").at("expanded").get<std::string>();
      t.multi_query.generated = jt.at("multi_query").at("generated").get<std::vector<std::string>>();
      t.generation_fallback = jt.value("generation_fallback", false);
      for (const auto& s : jt.value("failed_slots", json::array())) {
        t.failed_slots.push_back(query_slot_from_string(s.get<std::string>()));
      }
      t.text_hits = hits_of(jt.at("text_hits"));
      t.mm_hits = hits_of(jt.at("mm_hits"));
      const auto& rec = jt.at("record");
      t.record.iteration = rec.at("iteration").get<int>();
      t.record.text = rec.at("text").get<std::string>();
      t.record.sources = rec.at("sources").get<std::vector<std::string>>();
      if (jt.contains("timings")) {
        t.search_ms = jt["timings"].value("search_ms", 0.0);
        t.llm_ms = jt["timings"].value("llm_ms", 0.0);
      }
      r.traces.push_back(std::move(t));
    }
    r.cumulative_doc_ids = j.at("cumulative_doc_ids").get<std::vector<std::vector<std::string>>>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kSchema, std::string("run result: ") + e.what());
  }
  return r;
}

std::vector<RunResult> read_run_results(const std::filesystem::path& jsonl) {
  std::vector<RunResult> out;
  for_each_line(jsonl, [&](std::string_view line, std::size_t line_no) {
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded()) {
      throw Error(ErrorCode::kSchema, jsonl.string() + " line " + std::to_string(line_no) + ": not JSON");
    }
    out.push_back(run_result_from_json(j));
  });
  return out;
}

// ---------------------------------------------------------------------------
// Benchmark runner

std::vector<RunResult> run_benchmark(const Pipeline& pipeline, std::span<const Sample> samples,
                                     const BenchmarkOptions& options) {
  std::unordered_set<std::string> wanted;
  for (const auto& s : samples) wanted.insert(s.sample_id);

  std::vector<RunResult> results;
  std::unordered_set<std::string> done;
  const bool have_output = options.output.has_value();

  if (have_output && options.resume && std::filesystem::exists(*options.output)) {
    // A crash can leave a torn final line; unparsable lines are dropped.
    std::ifstream in(*options.output, std::ios::binary);
    std::string line;
    while (std::getline(in, line)) {
      json j = json::parse(line, nullptr, false);
      if (j.is_discarded() || !j.is_object()) continue;
      RunResult r;
      try {
        r = run_result_from_json(j);
      } catch (const Error&) {
        continue;
      }
      if (r.failed || !wanted.contains(r.sample_id) || done.contains(r.sample_id)) continue;
      done.insert(r.sample_id);
      results.push_back(std::move(r));
    }
  }

  std::ofstream out;
  if (have_output) {
    std::string kept;
    for (const auto& r : results) kept += to_json(r, pipeline.config().emit_timings).dump() + "\n";
    write_file_atomic(*options.output, kept);
    out.open(*options.output, std::ios::binary | std::ios::app);
    if (!out) throw Error(ErrorCode::kIo, "cannot append to " + options.output->string());
  }

  std::vector<const Sample*> pending;
  for (const auto& s : samples) {
    if (!done.contains(s.sample_id)) pending.push_back(&s);
  }

  std::mutex mu;
  std::atomic<std::size_t> next{0};
  const std::size_t total = samples.size();
  std::size_t finished = results.size();
  const int workers = std::max(1, std::min<int>(options.parallelism, static_cast<int>(pending.size())));
  {
    std::vector<std::jthread> pool;
    for (int w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t i; (i = next.fetch_add(1)) < pending.size();) {
          RunResult r = pipeline.run_sample(*pending[i]);
          std::lock_guard lock(mu);
          if (out.is_open()) {
            out << to_json(r, pipeline.config().emit_timings).dump() << '\n';
            out.flush();
          }
          ++finished;
          if (options.on_result) options.on_result(r, finished, total);
          results.push_back(std::move(r));
        }
      });
    }
  }

  std::sort(results.begin(), results.end(),
            [](const RunResult& a, const RunResult& b) { return a.sample_id < b.sample_id; });
  if (have_output) {
    out.close();
    std::string sorted;
    for (const auto& r : results) sorted += to_json(r, pipeline.config().emit_timings).dump() + "\n";
    write_file_atomic(*options.output, sorted);
  }
  return results;
}

}  // namespace mirag
