#pragma once

#include <Eigen/Dense>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mirag/embed.hpp"
#include "mirag/pipeline.hpp"

namespace mirag {

struct BenchmarkSpec {
  std::string name;
  std::filesystem::path samples_path;
  std::filesystem::path image_root;
  AnswerMode answer_mode = AnswerMode::kFreeForm;
  /// JSONL of {sample_id, annotator_answers: [...]}, merged into samples.
  std::optional<std::filesystem::path> annotator_answers_path;
  bool missing_image_fatal = false;
  /// Off for consumers that never read pixels (evaluation, downsampling).
  bool verify_images = true;
};

struct LoadedBenchmark {
  std::vector<Sample> samples;
  std::size_t skipped_missing_image = 0;
};

/// Parses sample JSONL ({sample_id, image, question, answers, entity_ids?,
/// annotator_answers?}) in file order. Image refs that are not URLs are
/// resolved against image_root and must exist.
LoadedBenchmark load_benchmark(const BenchmarkSpec& spec);

/// Inverse of load_benchmark for resolved samples.
void write_samples_jsonl(std::span<const Sample> samples, const std::filesystem::path& path);

/// Row-stacked unit embeddings of each sample's question.
Eigen::MatrixXd embed_questions(std::span<const Sample> samples, const EmbeddingProvider& provider);

/// Greedy pass in input order over a precomputed similarity matrix: keep i
/// iff sim(i, j) <= threshold for every kept j. Returns kept indices.
std::vector<std::size_t> greedy_keep(const Eigen::MatrixXd& similarity, double threshold);

/// Keeps a sample iff its question similarity to every previously kept
/// question is at most `threshold`. Order dependent by design.
std::vector<Sample> downsample(std::span<const Sample> samples, const EmbeddingProvider& provider, double threshold);

struct ThresholdTuning {
  double threshold = 1.0;
  std::size_t kept = 0;
  bool feasible = false;
  int evaluations = 0;
};

/// Bisection on the threshold until the kept count lands within
/// `tolerance * target` of `target`. Reports the closest count found when
/// no threshold gets there.
ThresholdTuning tune_threshold(const Eigen::MatrixXd& similarity, std::size_t target, double tolerance = 0.02,
                               int max_evaluations = 80);

/// JSONL of {question, image, context, answer}, questions embedded with
/// `provider` for similarity-based demo selection.
DemoPool load_demo_pool(const std::filesystem::path& path, const std::filesystem::path& image_root,
                        const EmbeddingProvider& provider);

}  // namespace mirag
