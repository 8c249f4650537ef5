#include <gtest/gtest.h>

#include <string>
#include <vector>

#include "mirag/ingest.hpp"
#include "test_support.hpp"

using namespace mirag;
namespace fs = std::filesystem;

namespace {

BenchmarkSpec spec_for(const test::TempDir& dir, const std::string& file = "samples.jsonl") {
  BenchmarkSpec s;
  s.name = "toy";
  s.samples_path = dir / file;
  s.image_root = dir / "images";
  return s;
}

void make_images(const test::TempDir& dir, std::initializer_list<const char*> names) {
  fs::create_directories(dir / "images");
  for (const char* n : names) test::write_bytes(dir / "images" / n, test::fake_image(n));
}

std::vector<Sample> questions(std::initializer_list<const char*> qs) {
  std::vector<Sample> out;
  int i = 0;
  for (const char* q : qs) out.push_back({"q" + std::to_string(i++), "img", q, {"x"}, {}, {}});
  return out;
}

double max_kept_similarity(const Eigen::MatrixXd& sim, const std::vector<std::size_t>& kept) {
  double m = -2;
  for (std::size_t a = 0; a < kept.size(); ++a)
    for (std::size_t b = a + 1; b < kept.size(); ++b) {
      // all-pairs oracle from the raw embedding rows
      m = std::max(m, sim(static_cast<Eigen::Index>(kept[a]), static_cast<Eigen::Index>(kept[b])));
    }
  return m;
}

}  // namespace

TEST(LoadBenchmark, WellFormedFileInOrder) {
  test::TempDir dir;
  make_images(dir, {"a.jpg", "b.jpg", "c.jpg"});
  test::write_text(dir / "samples.jsonl",
                   R"({"sample_id":"s2","image":"b.jpg","question":"Q2?","answers":["x"],"entity_ids":["E2"]})" "\n"
                   R"({"sample_id":"s1","image":"a.jpg","question":"Q1?","answers":["y","z"]})" "\n"
                   R"({"sample_id":"s3","image":"c.jpg","question":"Q3?","answers":"w","annotator_answers":["w","w"]})" "\n");
  const auto b = load_benchmark(spec_for(dir));
  ASSERT_EQ(b.samples.size(), 3u);
  EXPECT_EQ(b.samples[0].sample_id, "s2");
  EXPECT_EQ(b.samples[1].sample_id, "s1");
  EXPECT_EQ(b.samples[0].image_ref, (dir / "images" / "b.jpg").string());
  EXPECT_EQ(b.samples[0].gold_entity_ids, (std::vector<std::string>{"E2"}));
  EXPECT_TRUE(b.samples[1].gold_entity_ids.empty());
  EXPECT_EQ(b.samples[1].gold_answers.size(), 2u);
  EXPECT_EQ(b.samples[2].gold_answers, (std::vector<std::string>{"w"}));
  EXPECT_EQ(b.samples[2].annotator_answers.size(), 2u);
}

TEST(LoadBenchmark, DuplicateIdNamesLine) {
  test::TempDir dir;
  make_images(dir, {"a.jpg"});
  test::write_text(dir / "samples.jsonl",
                   R"({"sample_id":"s1","image":"a.jpg","question":"Q?","answers":["x"]})" "\n"
                   R"({"sample_id":"s1","image":"a.jpg","question":"Q?","answers":["x"]})" "\n");
  try {
    load_benchmark(spec_for(dir));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kDuplicateId);
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos);
  }
}

TEST(LoadBenchmark, SchemaErrorsNameLineAndField) {
  test::TempDir dir;
  make_images(dir, {"a.jpg"});
  test::write_text(dir / "samples.jsonl",
                   R"({"sample_id":"s1","image":"a.jpg","question":"Q?","answers":["x"]})" "\n"
                   R"({"sample_id":"s2","image":"a.jpg","answers":["x"]})" "\n");
  try {
    load_benchmark(spec_for(dir));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kSchema);
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("question"), std::string::npos);
  }
}

TEST(LoadBenchmark, MissingImageWarnsOrFails) {
  test::TempDir dir;
  make_images(dir, {"a.jpg"});
  test::write_text(dir / "samples.jsonl",
                   R"({"sample_id":"s1","image":"a.jpg","question":"Q?","answers":["x"]})" "\n"
                   R"({"sample_id":"s2","image":"gone.jpg","question":"Q?","answers":["x"]})" "\n"
                   R"({"sample_id":"s3","image":"https://example.org/i.jpg","question":"Q?","answers":["x"]})" "\n");
  auto spec = spec_for(dir);
  const auto b = load_benchmark(spec);
  EXPECT_EQ(b.samples.size(), 2u);
  EXPECT_EQ(b.skipped_missing_image, 1u);
  spec.missing_image_fatal = true;
  try {
    load_benchmark(spec);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kMissingImage);
  }
  spec.verify_images = false;
  EXPECT_EQ(load_benchmark(spec).samples.size(), 3u);
}

TEST(LoadBenchmark, AnnotatorFileIsMerged) {
  test::TempDir dir;
  make_images(dir, {"a.jpg"});
  test::write_text(dir / "samples.jsonl", R"({"sample_id":"s1","image":"a.jpg","question":"Q?","answers":["x"]})" "\n");
  test::write_text(dir / "ann.jsonl", R"({"sample_id":"s1","annotator_answers":["x","x","y"]})" "\n");
  auto spec = spec_for(dir);
  spec.annotator_answers_path = dir / "ann.jsonl";
  EXPECT_EQ(load_benchmark(spec).samples[0].annotator_answers, (std::vector<std::string>{"x", "x", "y"}));
}

TEST(LoadBenchmark, WriteThenLoadRoundTrips) {
  test::TempDir dir;
  make_images(dir, {"a.jpg", "b.jpg"});
  std::vector<Sample> in = {
      {"s1", (dir / "images/a.jpg").string(), "Q1?", {"x", "y"}, {"E1"}, {}},
      {"s2", (dir / "images/b.jpg").string(), "Q2 \"quoted\"?", {"z"}, {}, {"z", "z", "q"}}};
  write_samples_jsonl(in, dir / "out.jsonl");
  BenchmarkSpec spec;
  spec.samples_path = dir / "out.jsonl";
  const auto back = load_benchmark(spec).samples;
  ASSERT_EQ(back.size(), 2u);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_EQ(back[i].sample_id, in[i].sample_id);
    EXPECT_EQ(back[i].image_ref, in[i].image_ref);
    EXPECT_EQ(back[i].question, in[i].question);
    EXPECT_EQ(back[i].gold_answers, in[i].gold_answers);
    EXPECT_EQ(back[i].gold_entity_ids, in[i].gold_entity_ids);
    EXPECT_EQ(back[i].annotator_answers, in[i].annotator_answers);
  }
}

TEST(Downsample, IdenticalQuestionsCollapse) {
  DeterministicProvider p(ProviderConfig::deterministic(7));
  const auto s = questions({"what is this?", "what is this?", "what is this?"});
  const auto kept = downsample(s, p, 0.9);
  ASSERT_EQ(kept.size(), 1u);
  EXPECT_EQ(kept[0].sample_id, "q0");
}

TEST(Downsample, ThresholdOneKeepsDistinctQuestions) {
  DeterministicProvider p(ProviderConfig::deterministic(7));
  const auto s = questions({"a", "b", "c", "d", "what bird is this", "what bird is that"});
  EXPECT_EQ(downsample(s, p, 1.0).size(), s.size());
  EXPECT_THROW(downsample(s, p, std::nan("")), Error);
}

TEST(Downsample, KeptSetSatisfiesAllPairsBoundAndPreservesOrder) {
  DeterministicProvider p(ProviderConfig::deterministic(7));
  std::vector<Sample> s;
  for (int i = 0; i < 300; ++i) s.push_back({"q" + std::to_string(i), "img", "question number " + std::to_string(i % 250), {"x"}, {}, {}});
  const double t = 0.3;
  const auto e = embed_questions(s, p);
  // scalar-loop similarity oracle
  Eigen::MatrixXd sim(300, 300);
  for (int a = 0; a < 300; ++a)
    for (int b = 0; b < 300; ++b) {
      double d = 0;
      for (int c = 0; c < 64; ++c) d += e(a, c) * e(b, c);
      sim(a, b) = d;
    }
  const auto idx = greedy_keep(sim, t);
  EXPECT_LE(max_kept_similarity(sim, idx), t);
  EXPECT_TRUE(std::is_sorted(idx.begin(), idx.end()));
  // every dropped sample is too close to some earlier kept one
  std::size_t pos = 0;
  for (std::size_t i = 0; i < 300; ++i) {
    if (pos < idx.size() && idx[pos] == i) {
      ++pos;
      continue;
    }
    bool close = false;
    for (std::size_t j = 0; j < pos; ++j) close |= sim(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(idx[j])) > t;
    EXPECT_TRUE(close) << i;
  }
  const auto kept = downsample(s, p, t);
  ASSERT_EQ(kept.size(), idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) EXPECT_EQ(kept[i].sample_id, s[idx[i]].sample_id);
}

TEST(TuneThreshold, HitsTargetWithinTolerance) {
  DeterministicProvider p(ProviderConfig::deterministic(7));
  std::vector<Sample> s;
  for (int i = 0; i < 600; ++i) s.push_back({"q" + std::to_string(i), "img", "synthetic question " + std::to_string(i), {"x"}, {}, {}});
  const auto e = embed_questions(s, p);
  const Eigen::MatrixXd sim = e * e.transpose();
  const auto t = tune_threshold(sim, 150, 0.02);
  EXPECT_TRUE(t.feasible);
  EXPECT_NEAR(static_cast<double>(t.kept), 150.0, 3.0);
  EXPECT_EQ(greedy_keep(sim, t.threshold).size(), t.kept);
  const auto too_many = tune_threshold(sim, 5000, 0.02);
  EXPECT_FALSE(too_many.feasible);
  EXPECT_EQ(too_many.kept, 600u);
}

TEST(DemoPool, LoadsAndEmbedsQuestions) {
  test::TempDir dir;
  make_images(dir, {"d1.jpg"});
  test::write_text(dir / "demos.jsonl",
                   R"({"question":"What bird?","image":"d1.jpg","context":"ctx","answer":"eagle"})" "\n");
  DeterministicProvider p(ProviderConfig::deterministic(7));
  const auto pool = load_demo_pool(dir / "demos.jsonl", dir / "images", p);
  ASSERT_EQ(pool.demos.size(), 1u);
  EXPECT_EQ(pool.demos[0].answer, "eagle");
  EXPECT_EQ(pool.demos[0].image, test::fake_image("d1.jpg"));
  EXPECT_TRUE(pool.question_vecs[0].isApprox(p.embed_text("What bird?"), 1e-12));
}
