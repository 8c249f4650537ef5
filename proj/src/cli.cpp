#include "mirag/cli.hpp"

#include <chrono>
#include <iomanip>
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "mirag/config.hpp"
#include "mirag/eval.hpp"
#include "mirag/ingest.hpp"
#include "mirag/io.hpp"
#include "mirag/kbstore.hpp"
#include "mirag/pipeline.hpp"

namespace mirag {

namespace fs = std::filesystem;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

RunConfig load_config(const std::string& path) {
  if (!fs::exists(path)) throw UsageError("config file not found: " + path);
  try {
    return RunConfig::load(path);
  } catch (const Error& e) {
    throw UsageError(e.what());
  }
}

void require_file(const std::optional<fs::path>& p, const std::string& what) {
  if (!p) throw UsageError(what + " is not configured");
  if (!fs::exists(*p)) throw UsageError(what + " not found: " + p->string());
}

// ---------------------------------------------------------------------------

struct BuildArgs {
  std::string kind;
  std::string corpus;
  std::string out_dir;
  std::string image_root;
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<int> dim;
  int threads = 1;
};

int cmd_build_index(const BuildArgs& a, std::ostream& out) {
  if (a.corpus.empty() || !fs::exists(a.corpus)) throw UsageError("corpus not found: " + a.corpus);
  KbKind kind;
  try {
    kind = kb_kind_from_string(a.kind);
  } catch (const Error& e) {
    throw UsageError(e.what());
  }

  ProviderConfig text_cfg = ProviderConfig::deterministic(7);
  ProviderConfig image_cfg = ProviderConfig::deterministic(7);
  if (!a.config.empty()) {
    const auto cfg = load_config(a.config);
    text_cfg = cfg.text_embedder;
    image_cfg = cfg.image_embedder;
  }
  for (auto* c : {&text_cfg, &image_cfg}) {
    if (a.seed && c->kind == ProviderConfig::Kind::kDeterministic) c->seed = *a.seed;
    if (a.dim) c->dim = *a.dim;
  }

  const auto t0 = std::chrono::steady_clock::now();
  const auto text_provider = make_provider(text_cfg);
  BuildOptions opts{a.threads};
  std::optional<KbIndex> kb;
  if (kind == KbKind::kTextual) {
    const auto passages = read_text_corpus(a.corpus);
    kb.emplace(build_text_kb(passages, *text_provider, opts));
  } else {
    const auto image_provider = make_provider(image_cfg);
    const auto entries = read_multimodal_corpus(a.corpus);
    const fs::path root = a.image_root.empty() ? fs::path(a.corpus).parent_path() : fs::path(a.image_root);
    kb.emplace(build_multimodal_kb(entries, *text_provider, *image_provider, file_image_reader(root), opts));
  }
  save_kb(*kb, a.out_dir);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  out << "built " << to_string(kb->kind()) << " KB: rows=" << kb->size() << " dim=" << kb->dim()
      << " elapsed=" << std::fixed << std::setprecision(2) << secs << "s -> " << a.out_dir << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct RunArgs {
  std::string config;
  std::optional<int> iterations;
  std::optional<std::size_t> text_k;
  std::optional<std::size_t> mm_k;
  bool no_generation = false;
  std::string kb_mode;
  std::string answer_mode;
  std::optional<int> parallelism;
  bool resume = false;
  std::string output;
  std::string script;
  bool allow_mismatch = false;
  bool timings = false;
};

int cmd_run(const RunArgs& a, std::ostream& out, std::ostream& err) {
  RunConfig cfg = load_config(a.config);
  try {
    if (a.iterations) cfg.pipeline.iterations = *a.iterations;
    if (a.text_k) cfg.pipeline.budget.text_k = *a.text_k;
    if (a.mm_k) cfg.pipeline.budget.mm_k = *a.mm_k;
    if (a.no_generation) cfg.pipeline.enable_generation = false;
    if (!a.kb_mode.empty()) cfg.pipeline.kb_mode = kb_mode_from_string(a.kb_mode);
    if (!a.answer_mode.empty()) cfg.pipeline.answer_mode = answer_mode_from_string(a.answer_mode);
    if (a.parallelism) cfg.parallelism = *a.parallelism;
    if (!a.script.empty()) {
      cfg.llm.mode = LlmConfig::Mode::kScripted;
      cfg.llm.script_path = a.script;
    }
    if (a.allow_mismatch) cfg.allow_fingerprint_mismatch = true;
    if (a.timings) cfg.pipeline.emit_timings = true;
    cfg.validate();
  } catch (const Error& e) {
    throw UsageError(e.what());
  }

  const auto text_provider = make_provider(cfg.text_embedder);
  const auto image_provider = make_provider(cfg.image_embedder);

  std::optional<KbIndex> text_kb, mm_kb;
  if (cfg.pipeline.kb_mode != KbMode::kMultimodalOnly) {
    require_file(cfg.text_kb, "paths.text_kb");
    text_kb.emplace(load_kb(*cfg.text_kb, {text_provider->fingerprint(), cfg.allow_fingerprint_mismatch}));
  }
  if (cfg.pipeline.kb_mode != KbMode::kTextualOnly) {
    require_file(cfg.mm_kb, "paths.mm_kb");
    mm_kb.emplace(load_kb(*cfg.mm_kb, {multimodal_fingerprint(*image_provider, *text_provider),
                                       cfg.allow_fingerprint_mismatch}));
  }

  require_file(cfg.benchmark, "paths.benchmark");
  BenchmarkSpec spec;
  spec.name = cfg.benchmark->stem().string();
  spec.samples_path = *cfg.benchmark;
  spec.image_root = cfg.image_root.value_or(cfg.benchmark->parent_path());
  spec.answer_mode = cfg.pipeline.answer_mode;
  spec.annotator_answers_path = cfg.annotator_answers;
  const auto bench = load_benchmark(spec);

  if (cfg.llm.script_path && !fs::exists(*cfg.llm.script_path)) {
    throw UsageError("llm script not found: " + cfg.llm.script_path->string());
  }
  const auto llm = make_chat_model(cfg.llm);

  std::optional<DemoPool> pool;
  if (cfg.pipeline.answer_mode == AnswerMode::kExactEntity && cfg.demo_pool) {
    pool = load_demo_pool(*cfg.demo_pool, cfg.demo_pool->parent_path(), *text_provider);
  }

  PipelineResources res;
  res.text_kb = text_kb ? &*text_kb : nullptr;
  res.mm_kb = mm_kb ? &*mm_kb : nullptr;
  res.text_provider = text_provider;
  res.image_provider = image_provider;
  res.llm = llm;
  res.demo_pool = pool ? &*pool : nullptr;
  res.read_image = file_image_reader({});
  Pipeline pipeline(std::move(res), cfg.pipeline);

  const fs::path output = a.output.empty() ? cfg.output_dir / "results.jsonl" : fs::path(a.output);
  if (output.has_parent_path()) fs::create_directories(output.parent_path());

  BenchmarkOptions opts;
  opts.parallelism = cfg.parallelism;
  opts.output = output;
  opts.resume = a.resume;
  opts.on_result = [&err](const RunResult& r, std::size_t done, std::size_t total) {
    err << "[" << done << "/" << total << "] " << r.sample_id << (r.failed ? " failed: " + r.error : " ok") << "\n";
  };
  const auto results = run_benchmark(pipeline, bench.samples, opts);

  std::size_t failed = 0;
  for (const auto& r : results) failed += r.failed ? 1 : 0;
  out << "completed " << (results.size() - failed) << "/" << bench.samples.size() << " samples";
  if (bench.skipped_missing_image) out << " (" << bench.skipped_missing_image << " skipped: missing image)";
  out << ", " << failed << " failed -> " << output.string() << "\n";
  for (const auto& r : results) {
    if (r.failed) out << "  failed " << r.sample_id << ": " << r.error << "\n";
  }
  return failed == 0 && bench.skipped_missing_image == 0 ? kExitOk : kExitFailure;
}

// ---------------------------------------------------------------------------

struct EvalArgs {
  std::string results;
  std::string config;
  std::string benchmark;
  std::string text_kb;
  std::string mm_kb;
  std::vector<std::size_t> ks = {1, 5, 10};
  std::size_t k_per_iter = 5;
  std::string out_path;
};

int cmd_eval(const EvalArgs& a, std::ostream& out) {
  if (!fs::exists(a.results)) throw UsageError("results not found: " + a.results);
  std::optional<RunConfig> cfg;
  if (!a.config.empty()) cfg = load_config(a.config);

  std::optional<fs::path> bench_path = a.benchmark.empty() ? (cfg ? cfg->benchmark : std::nullopt)
                                                           : std::optional<fs::path>(a.benchmark);
  require_file(bench_path, "benchmark");
  std::optional<fs::path> text_kb = a.text_kb.empty() ? (cfg ? cfg->text_kb : std::nullopt) : std::optional<fs::path>(a.text_kb);
  std::optional<fs::path> mm_kb = a.mm_kb.empty() ? (cfg ? cfg->mm_kb : std::nullopt) : std::optional<fs::path>(a.mm_kb);

  BenchmarkSpec spec;
  spec.samples_path = *bench_path;
  spec.image_root = cfg && cfg->image_root ? *cfg->image_root : bench_path->parent_path();
  spec.verify_images = false;
  if (cfg) spec.annotator_answers_path = cfg->annotator_answers;
  const auto bench = load_benchmark(spec);

  KbLookup lookup;
  std::optional<KbIndex> tkb, mkb;
  if (text_kb && fs::exists(*text_kb)) lookup.add(tkb.emplace(load_kb(*text_kb)));
  if (mm_kb && fs::exists(*mm_kb)) lookup.add(mkb.emplace(load_kb(*mm_kb)));

  const auto results = read_run_results(a.results);
  ReportConfig rc;
  rc.ks = a.ks;
  rc.k_per_iter = a.k_per_iter;
  if (cfg) rc.config_echo = cfg->to_json();
  const auto report = build_report(results, bench.samples, lookup, rc);

  const fs::path report_path =
      a.out_path.empty() ? fs::path(a.results).parent_path() / "report.json" : fs::path(a.out_path);
  if (report_path.has_parent_path()) fs::create_directories(report_path.parent_path());
  write_file_atomic(report_path, report.to_json().dump(2) + "\n");
  out << report.to_table();
  out << "report -> " << report_path.string() << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct DownsampleArgs {
  std::string input;
  std::string output;
  std::optional<double> threshold;
  std::optional<std::size_t> target_count;
  double tolerance = 0.02;
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<int> dim;
};

int cmd_downsample(const DownsampleArgs& a, std::ostream& out, std::ostream& err) {
  if (!fs::exists(a.input)) throw UsageError("input not found: " + a.input);
  if (a.threshold.has_value() == a.target_count.has_value()) {
    throw UsageError("exactly one of --threshold or --target-count is required");
  }
  ProviderConfig pc = ProviderConfig::deterministic(7);
  if (!a.config.empty()) pc = load_config(a.config).text_embedder;
  if (a.seed && pc.kind == ProviderConfig::Kind::kDeterministic) pc.seed = *a.seed;
  if (a.dim) pc.dim = *a.dim;

  BenchmarkSpec spec;
  spec.samples_path = a.input;
  spec.image_root = fs::path(a.input).parent_path();
  spec.verify_images = false;
  const auto samples = load_benchmark(spec).samples;
  if (samples.empty()) throw Error(ErrorCode::kEmptyInput, "no samples in " + a.input);

  const auto provider = make_provider(pc);
  const Eigen::MatrixXd e = embed_questions(samples, *provider);
  const Eigen::MatrixXd sim = e * e.transpose();

  double threshold = a.threshold.value_or(1.0);
  if (a.target_count) {
    const auto tuned = tune_threshold(sim, *a.target_count, a.tolerance);
    if (!tuned.feasible) {
      err << "error: no threshold yields " << *a.target_count << " samples within " << a.tolerance * 100
          << "% (closest: " << tuned.kept << " at t=" << tuned.threshold << ")\n";
      return kExitFailure;
    }
    threshold = tuned.threshold;
  }
  std::vector<Sample> kept;
  for (auto i : greedy_keep(sim, threshold)) kept.push_back(samples[i]);
  write_samples_jsonl(kept, a.output);
  out << "kept " << kept.size() << "/" << samples.size() << " samples at threshold " << std::setprecision(10)
      << threshold << " -> " << a.output << "\n";
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Iterative multimodal retrieval-augmented generation toolkit", "mirag"};
  app.require_subcommand(1);

  BuildArgs build;
  auto* build_cmd = app.add_subcommand("build-index", "Embed a corpus into a KB bundle");
  build_cmd->add_option("--kind", build.kind, "textual | multimodal")->required();
  build_cmd->add_option("--corpus", build.corpus, "Corpus JSONL")->required();
  build_cmd->add_option("--out", build.out_dir, "Output bundle directory")->required();
  build_cmd->add_option("--image-root", build.image_root, "Root for relative image_ref (default: corpus dir)");
  build_cmd->add_option("--config", build.config, "Run config supplying the embedders");
  build_cmd->add_option("--seed", build.seed, "Seed for deterministic embedders");
  build_cmd->add_option("--dim", build.dim, "Embedding dimension");
  build_cmd->add_option("--threads", build.threads, "Embedding threads")->check(CLI::PositiveNumber);

  RunArgs run;
  auto* run_cmd = app.add_subcommand("run", "Run the iterative pipeline over a benchmark");
  run_cmd->add_option("--config", run.config, "Run config (JSON)")->required();
  run_cmd->add_option("--iterations", run.iterations, "Refinement iterations N (0 = retrieve-then-read)")
      ->check(CLI::NonNegativeNumber);
  run_cmd->add_option("--text-k", run.text_k, "Text passages per iteration");
  run_cmd->add_option("--mm-k", run.mm_k, "Image-text pairs per iteration");
  run_cmd->add_flag("--no-generation", run.no_generation, "Expansion-only ablation");
  run_cmd->add_option("--kb", run.kb_mode, "both | textual-only | multimodal-only");
  run_cmd->add_option("--answer-mode", run.answer_mode, "free-form | exact-entity");
  run_cmd->add_option("--parallelism", run.parallelism, "Samples processed concurrently")->check(CLI::PositiveNumber);
  run_cmd->add_flag("--resume", run.resume, "Skip samples already completed in the output file");
  run_cmd->add_option("--output", run.output, "Results JSONL (default: <output_dir>/results.jsonl)");
  run_cmd->add_option("--script", run.script, "Scripted LLM responses (JSONL)");
  run_cmd->add_flag("--allow-fingerprint-mismatch", run.allow_mismatch, "Load KBs built with other embedders");
  run_cmd->add_flag("--timings", run.timings, "Record per-iteration timings");

  EvalArgs ev;
  auto* eval_cmd = app.add_subcommand("eval", "Score run results");
  eval_cmd->add_option("--results", ev.results, "Results JSONL")->required();
  eval_cmd->add_option("--config", ev.config, "Run config (supplies benchmark and KB paths)");
  eval_cmd->add_option("--benchmark", ev.benchmark, "Benchmark samples JSONL");
  eval_cmd->add_option("--text-kb", ev.text_kb, "Textual KB bundle");
  eval_cmd->add_option("--mm-kb", ev.mm_kb, "Multimodal KB bundle");
  eval_cmd->add_option("--k", ev.ks, "Cutoffs for recall@k and prr@k")->delimiter(',');
  eval_cmd->add_option("--k-per-iter", ev.k_per_iter, "Hits per iteration for cumulative recall");
  eval_cmd->add_option("--out", ev.out_path, "Report JSON (default: next to results)");

  DownsampleArgs ds;
  auto* ds_cmd = app.add_subcommand("downsample", "Greedy similarity-threshold subset selection");
  ds_cmd->add_option("--input", ds.input, "Samples JSONL")->required();
  ds_cmd->add_option("--output", ds.output, "Subset JSONL")->required();
  ds_cmd->add_option("--threshold", ds.threshold, "Similarity threshold t");
  ds_cmd->add_option("--target-count", ds.target_count, "Tune t by bisection to reach this size");
  ds_cmd->add_option("--tolerance", ds.tolerance, "Relative tolerance on --target-count");
  ds_cmd->add_option("--config", ds.config, "Run config supplying the text embedder");
  ds_cmd->add_option("--seed", ds.seed, "Seed for the deterministic embedder");
  ds_cmd->add_option("--dim", ds.dim, "Embedding dimension");

  std::vector<std::string> argv_store{"mirag"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<const char*> argv;
  for (const auto& s : argv_store) argv.push_back(s.c_str());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*build_cmd) return cmd_build_index(build, out);
    if (*run_cmd) return cmd_run(run, out, err);
    if (*eval_cmd) return cmd_eval(ev, out);
    if (*ds_cmd) return cmd_downsample(ds, out, err);
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitUsage;
}

}  // namespace mirag
