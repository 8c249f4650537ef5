#include "mirag/ingest.hpp"

#include <cmath>
#include <fstream>
#include <iostream>
#include <unordered_map>
#include <unordered_set>

#include "json.hpp"
#include "mirag/io.hpp"

namespace mirag {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

bool is_url(std::string_view ref) {
  return ref.starts_with("http://") || ref.starts_with("https://") || ref.starts_with("data:");
}

std::string resolve(const fs::path& root, const std::string& ref) {
  if (is_url(ref)) return ref;
  fs::path p(ref);
  if (p.is_relative() && !root.empty()) p = root / p;
  return p.string();
}

std::vector<std::string> string_list(const json& j, const char* key, bool required, std::size_t line_no) {
  if (!j.contains(key) || j[key].is_null()) {
    if (required) throw Error(ErrorCode::kSchema, "line " + std::to_string(line_no) + ": field '" + key + "'");
    return {};
  }
  const auto& v = j[key];
  if (v.is_string()) return {v.get<std::string>()};
  if (!v.is_array()) throw Error(ErrorCode::kSchema, "line " + std::to_string(line_no) + ": field '" + key + "'");
  std::vector<std::string> out;
  for (const auto& x : v) {
    if (!x.is_string()) throw Error(ErrorCode::kSchema, "line " + std::to_string(line_no) + ": field '" + key + "'");
    out.push_back(x.get<std::string>());
  }
  return out;
}

std::string required_string(const json& j, const char* key, std::size_t line_no) {
  if (!j.contains(key) || !j[key].is_string() || trim(j[key].get<std::string>()).empty()) {
    throw Error(ErrorCode::kSchema, "line " + std::to_string(line_no) + ": field '" + key + "'");
  }
  return j[key].get<std::string>();
}

}  // namespace

LoadedBenchmark load_benchmark(const BenchmarkSpec& spec) {
  if (!fs::exists(spec.samples_path)) throw Error(ErrorCode::kIo, "missing samples file " + spec.samples_path.string());

  std::unordered_map<std::string, std::vector<std::string>> annotators;
  if (spec.annotator_answers_path) {
    for_each_line(*spec.annotator_answers_path, [&](std::string_view line, std::size_t line_no) {
      json j = json::parse(line, nullptr, false);
      if (j.is_discarded() || !j.is_object()) {
        throw Error(ErrorCode::kSchema, "annotator line " + std::to_string(line_no) + ": not a JSON object");
      }
      annotators[required_string(j, "sample_id", line_no)] = string_list(j, "annotator_answers", true, line_no);
    });
  }

  LoadedBenchmark out;
  std::unordered_map<std::string, std::size_t> first_line;
  for_each_line(spec.samples_path, [&](std::string_view line, std::size_t line_no) {
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object()) {
      throw Error(ErrorCode::kSchema, "line " + std::to_string(line_no) + ": not a JSON object");
    }
    Sample s;
    s.sample_id = required_string(j, "sample_id", line_no);
    s.image_ref = resolve(spec.image_root, required_string(j, "image", line_no));
    s.question = required_string(j, "question", line_no);
    s.gold_answers = string_list(j, "answers", true, line_no);
    s.gold_entity_ids = string_list(j, "entity_ids", false, line_no);
    s.annotator_answers = string_list(j, "annotator_answers", false, line_no);
    if (auto it = annotators.find(s.sample_id); it != annotators.end()) s.annotator_answers = it->second;

    if (auto [it, inserted] = first_line.emplace(s.sample_id, line_no); !inserted) {
      throw Error(ErrorCode::kDuplicateId, "line " + std::to_string(line_no) + ": sample_id '" + s.sample_id +
                                               "' already defined on line " + std::to_string(it->second));
    }
    if (spec.verify_images && !is_url(s.image_ref) && !fs::exists(s.image_ref)) {
      const std::string msg = "line " + std::to_string(line_no) + ": image not found: " + s.image_ref;
      if (spec.missing_image_fatal) throw Error(ErrorCode::kMissingImage, msg);
      std::cerr << "warning: MissingImage: " << msg << " (skipped)\n";
      ++out.skipped_missing_image;
      return;
    }
    out.samples.push_back(std::move(s));
  });
  return out;
}

void write_samples_jsonl(std::span<const Sample> samples, const fs::path& path) {
  std::string body;
  for (const auto& s : samples) {
    json j = {{"sample_id", s.sample_id},
              {"image", s.image_ref},
              {"question", s.question},
              {"answers", s.gold_answers},
              {"entity_ids", s.gold_entity_ids}};
    if (!s.annotator_answers.empty()) j["annotator_answers"] = s.annotator_answers;
    body += j.dump() + "\n";
  }
  write_file_atomic(path, body);
}

Eigen::MatrixXd embed_questions(std::span<const Sample> samples, const EmbeddingProvider& provider) {
  Eigen::MatrixXd e(static_cast<Eigen::Index>(samples.size()), provider.dim());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    e.row(static_cast<Eigen::Index>(i)) = l2_normalize(provider.embed_text(samples[i].question)).transpose();
  }
  return e;
}

std::vector<std::size_t> greedy_keep(const Eigen::MatrixXd& similarity, double threshold) {
  std::vector<std::size_t> kept;
  const auto n = static_cast<std::size_t>(similarity.rows());
  for (std::size_t i = 0; i < n; ++i) {
    bool redundant = false;
    for (std::size_t j : kept) {
      if (similarity(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) > threshold) {
        redundant = true;
        break;
      }
    }
    if (!redundant) kept.push_back(i);
  }
  return kept;
}

std::vector<Sample> downsample(std::span<const Sample> samples, const EmbeddingProvider& provider, double threshold) {
  if (!std::isfinite(threshold)) throw Error(ErrorCode::kInvalidArgument, "threshold must be finite");
  const Eigen::MatrixXd e = embed_questions(samples, provider);
  const Eigen::MatrixXd sim = e * e.transpose();
  std::vector<Sample> out;
  for (auto i : greedy_keep(sim, threshold)) out.push_back(samples[i]);
  return out;
}

ThresholdTuning tune_threshold(const Eigen::MatrixXd& similarity, std::size_t target, double tolerance,
                               int max_evaluations) {
  ThresholdTuning best;
  const double slack = tolerance * static_cast<double>(target);
  auto distance = [&](std::size_t kept) {
    return std::abs(static_cast<double>(kept) - static_cast<double>(target));
  };
  auto evaluate = [&](double t) {
    const std::size_t kept = greedy_keep(similarity, t).size();
    ++best.evaluations;
    if (best.evaluations == 1 || distance(kept) < distance(best.kept)) {
      best.threshold = t;
      best.kept = kept;
    }
    return kept;
  };

  // Kept count grows with the threshold; bisect on the boundary.
  double lo = -1.0, hi = 1.0;
  if (evaluate(hi) < target) {
    best.feasible = distance(best.kept) <= slack;
    return best;
  }
  while (best.evaluations < max_evaluations && distance(best.kept) > slack) {
    const double mid = 0.5 * (lo + hi);
    if (evaluate(mid) < target) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  best.feasible = distance(best.kept) <= slack;
  return best;
}

DemoPool load_demo_pool(const fs::path& path, const fs::path& image_root, const EmbeddingProvider& provider) {
  DemoPool pool;
  for_each_line(path, [&](std::string_view line, std::size_t line_no) {
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object()) {
      throw Error(ErrorCode::kSchema, "demo line " + std::to_string(line_no) + ": not a JSON object");
    }
    FewshotDemo d;
    d.question = required_string(j, "question", line_no);
    d.answer = required_string(j, "answer", line_no);
    d.context = j.value("context", "");
    d.image = read_file_bytes(resolve(image_root, required_string(j, "image", line_no)));
    pool.question_vecs.push_back(l2_normalize(provider.embed_text(d.question)));
    pool.demos.push_back(std::move(d));
  });
  return pool;
}

}  // namespace mirag
