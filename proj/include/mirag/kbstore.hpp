#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "mirag/embed.hpp"

namespace mirag {

enum class KbKind { kTextual, kMultimodal };

std::string_view to_string(KbKind kind);
KbKind kb_kind_from_string(std::string_view s);

struct TextPassage {
  std::string doc_id;
  std::string title;
  std::string text;
  std::optional<std::string> summary;
  std::optional<std::string> entity_id;
};

struct MultimodalEntry {
  std::string doc_id;
  std::string image_ref;
  std::string section_text;
  std::optional<std::string> summary;
  std::optional<std::string> entity_id;
};

/// Per-row metadata. Textual rows use title/text; multimodal rows use
/// image_ref and keep the section text in `text`.
struct KbRecord {
  std::string doc_id;
  std::string title;
  std::string text;
  std::optional<std::string> summary;
  std::optional<std::string> entity_id;
  std::optional<std::string> image_ref;
};

using EmbeddingMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Immutable embedding matrix plus row-aligned metadata. Multimodal rows are
/// (image half || text half), each half unit norm.
class KbIndex {
 public:
  /// Validates alignment and doc_id uniqueness.
  KbIndex(KbKind kind, int image_dim, EmbeddingMatrix matrix, std::vector<KbRecord> records,
          std::string provider_fingerprint);

  KbKind kind() const noexcept { return kind_; }
  int dim() const noexcept { return static_cast<int>(matrix_.cols()); }
  /// Width of the image half; zero for textual KBs.
  int image_dim() const noexcept { return image_dim_; }
  int text_dim() const noexcept { return dim() - image_dim_; }
  std::size_t size() const noexcept { return records_.size(); }

  const EmbeddingMatrix& matrix() const noexcept { return matrix_; }
  const std::vector<KbRecord>& records() const noexcept { return records_; }
  const KbRecord& record(std::size_t row) const { return records_.at(row); }
  const std::string& provider_fingerprint() const noexcept { return fingerprint_; }

  std::optional<std::size_t> find(const std::string& doc_id) const;

 private:
  KbKind kind_;
  int image_dim_;
  EmbeddingMatrix matrix_;
  std::vector<KbRecord> records_;
  std::string fingerprint_;
  std::unordered_map<std::string, std::size_t> row_of_;
};

using ImageReader = std::function<std::vector<std::uint8_t>(const std::string& image_ref)>;

/// Reads image_ref as a file path, relative refs resolved against `root`.
ImageReader file_image_reader(std::filesystem::path root);

/// Fingerprint recorded for a multimodal KB built from the two providers.
std::string multimodal_fingerprint(const EmbeddingProvider& image, const EmbeddingProvider& text);

struct BuildOptions {
  int threads = 1;
};

/// Row i embeds summary-or-text of passage i.
KbIndex build_text_kb(std::span<const TextPassage> passages, const EmbeddingProvider& provider,
                      BuildOptions options = {});

/// Row i = l2(image(entry i)) || l2(text(summary-or-section_text of entry i)).
KbIndex build_multimodal_kb(std::span<const MultimodalEntry> entries,
                            const EmbeddingProvider& text_provider,
                            const EmbeddingProvider& image_provider, const ImageReader& read_image,
                            BuildOptions options = {});

/// Writes manifest.json, metadata.jsonl and embeddings.bin into `dir`.
void save_kb(const KbIndex& kb, const std::filesystem::path& dir);

struct LoadOptions {
  std::optional<std::string> expected_fingerprint;
  /// Downgrade FingerprintMismatch to a warning on stderr.
  bool allow_fingerprint_mismatch = false;
};

KbIndex load_kb(const std::filesystem::path& dir, const LoadOptions& options = {});

std::vector<TextPassage> read_text_corpus(const std::filesystem::path& jsonl);
std::vector<MultimodalEntry> read_multimodal_corpus(const std::filesystem::path& jsonl);

}  // namespace mirag
