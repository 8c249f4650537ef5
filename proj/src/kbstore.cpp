#include "mirag/kbstore.hpp"

#include <algorithm>
#include <atomic>
#include <bit>
#include <cstring>
#include <iostream>
#include <mutex>
#include <sstream>
#include <thread>
#include <unordered_set>

#include "json.hpp"
#include "mirag/hash.hpp"
#include "mirag/io.hpp"

namespace mirag {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr std::string_view kMagic = "MIRAGKB1";
constexpr std::size_t kHeaderBytes = 16;

std::string_view embed_text_of(const std::optional<std::string>& summary, const std::string& text) {
  return summary && !trim(*summary).empty() ? std::string_view(*summary) : std::string_view(text);
}

// Runs fn(i) for i in [0, n) across `threads` workers. The exception from the
// lowest failing index is rethrown so errors are reproducible.
void parallel_rows(std::size_t n, int threads, const std::function<void(std::size_t)>& fn) {
  threads = std::max(1, std::min<int>(threads, static_cast<int>(n)));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::mutex mu;
  std::size_t failed_at = n;
  std::exception_ptr failure;
  {
    std::vector<std::jthread> pool;
    for (int t = 0; t < threads; ++t) {
      pool.emplace_back([&] {
        for (std::size_t i; (i = next.fetch_add(1)) < n;) {
          try {
            fn(i);
          } catch (...) {
            std::lock_guard lock(mu);
            if (i < failed_at) {
              failed_at = i;
              failure = std::current_exception();
            }
          }
        }
      });
    }
  }
  if (failure) std::rethrow_exception(failure);
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

std::uint32_t get_u32(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

json record_to_json(const KbRecord& r, KbKind kind) {
  json j;
  j["doc_id"] = r.doc_id;
  if (kind == KbKind::kTextual) {
    j["title"] = r.title;
    j["text"] = r.text;
  } else {
    j["image_ref"] = r.image_ref.value_or("");
    j["section_text"] = r.text;
  }
  if (r.summary) j["summary"] = *r.summary;
  if (r.entity_id) j["entity_id"] = *r.entity_id;
  return j;
}

std::optional<std::string> opt_string(const json& j, const char* key) {
  if (!j.contains(key) || j[key].is_null()) return std::nullopt;
  return j[key].get<std::string>();
}

std::string req_string(const json& j, const char* key, std::size_t line_no) {
  if (!j.contains(key) || !j[key].is_string()) {
    throw Error(ErrorCode::kSchema, "line " + std::to_string(line_no) + ": field '" + key + "'");
  }
  return j[key].get<std::string>();
}

KbRecord record_from_json(const json& j, KbKind kind, std::size_t line_no) {
  KbRecord r;
  r.doc_id = req_string(j, "doc_id", line_no);
  if (kind == KbKind::kTextual) {
    r.title = j.value("title", "");
    r.text = req_string(j, "text", line_no);
  } else {
    r.image_ref = req_string(j, "image_ref", line_no);
    r.text = req_string(j, "section_text", line_no);
  }
  r.summary = opt_string(j, "summary");
  r.entity_id = opt_string(j, "entity_id");
  return r;
}

}  // namespace

std::string_view to_string(KbKind kind) {
  return kind == KbKind::kTextual ? "textual" : "multimodal";
}

KbKind kb_kind_from_string(std::string_view s) {
  if (s == "textual" || s == "text") return KbKind::kTextual;
  if (s == "multimodal" || s == "mm") return KbKind::kMultimodal;
  throw Error(ErrorCode::kInvalidArgument, "unknown KB kind: " + std::string(s));
}

KbIndex::KbIndex(KbKind kind, int image_dim, EmbeddingMatrix matrix, std::vector<KbRecord> records,
                 std::string provider_fingerprint)
    : kind_(kind),
      image_dim_(kind == KbKind::kTextual ? 0 : image_dim),
      matrix_(std::move(matrix)),
      records_(std::move(records)),
      fingerprint_(std::move(provider_fingerprint)) {
  if (static_cast<std::size_t>(matrix_.rows()) != records_.size()) {
    throw Error(ErrorCode::kCorruptBundle, "row count " + std::to_string(matrix_.rows()) +
                                               " != metadata count " + std::to_string(records_.size()));
  }
  if (kind_ == KbKind::kMultimodal && (image_dim_ <= 0 || image_dim_ >= matrix_.cols())) {
    throw Error(ErrorCode::kInvalidArgument, "multimodal KB needs 0 < image_dim < dim");
  }
  row_of_.reserve(records_.size());
  for (std::size_t i = 0; i < records_.size(); ++i) {
    if (!row_of_.emplace(records_[i].doc_id, i).second) {
      throw Error(ErrorCode::kDuplicateId, "doc_id '" + records_[i].doc_id + "' appears twice");
    }
  }
}

std::optional<std::size_t> KbIndex::find(const std::string& doc_id) const {
  auto it = row_of_.find(doc_id);
  if (it == row_of_.end()) return std::nullopt;
  return it->second;
}

ImageReader file_image_reader(fs::path root) {
  return [root = std::move(root)](const std::string& ref) {
    fs::path p(ref);
    if (p.is_relative() && !root.empty()) p = root / p;
    return read_file_bytes(p);
  };
}

std::string multimodal_fingerprint(const EmbeddingProvider& image, const EmbeddingProvider& text) {
  return "image=" + image.fingerprint() + ";text=" + text.fingerprint();
}

KbIndex build_text_kb(std::span<const TextPassage> passages, const EmbeddingProvider& provider,
                      BuildOptions options) {
  if (passages.empty()) throw Error(ErrorCode::kEmptyCorpus, "no passages to index");
  std::vector<KbRecord> records;
  records.reserve(passages.size());
  for (const auto& p : passages) {
    if (trim(p.text).empty()) {
      throw Error(ErrorCode::kSchema, "passage '" + p.doc_id + "' has empty text");
    }
    records.push_back({p.doc_id, p.title, p.text, p.summary, p.entity_id, std::nullopt});
  }
  EmbeddingMatrix m(static_cast<Eigen::Index>(passages.size()), provider.dim());
  parallel_rows(passages.size(), options.threads, [&](std::size_t i) {
    EmbeddingVector v;
    try {
      v = provider.embed_text(embed_text_of(passages[i].summary, passages[i].text));
    } catch (const std::exception& e) {
      throw Error(ErrorCode::kEmbedding, passages[i].doc_id + ": " + e.what());
    }
    m.row(static_cast<Eigen::Index>(i)) = v.cast<float>().transpose();
  });
  return KbIndex(KbKind::kTextual, 0, std::move(m), std::move(records), provider.fingerprint());
}

KbIndex build_multimodal_kb(std::span<const MultimodalEntry> entries,
                            const EmbeddingProvider& text_provider,
                            const EmbeddingProvider& image_provider, const ImageReader& read_image,
                            BuildOptions options) {
  if (entries.empty()) throw Error(ErrorCode::kEmptyCorpus, "no image-text pairs to index");
  std::vector<KbRecord> records;
  records.reserve(entries.size());
  for (const auto& e : entries) {
    records.push_back({e.doc_id, "", e.section_text, e.summary, e.entity_id, e.image_ref});
  }
  const int idim = image_provider.dim();
  const int tdim = text_provider.dim();
  EmbeddingMatrix m(static_cast<Eigen::Index>(entries.size()), idim + tdim);
  parallel_rows(entries.size(), options.threads, [&](std::size_t i) {
    const auto& e = entries[i];
    std::vector<std::uint8_t> bytes;
    try {
      bytes = read_image(e.image_ref);
    } catch (const std::exception& ex) {
      throw Error(ErrorCode::kImageRead, e.doc_id + ": " + ex.what());
    }
    EmbeddingVector img, txt;
    try {
      img = l2_normalize(image_provider.embed_image(bytes));
      txt = l2_normalize(text_provider.embed_text(embed_text_of(e.summary, e.section_text)));
    } catch (const std::exception& ex) {
      throw Error(ErrorCode::kEmbedding, e.doc_id + ": " + ex.what());
    }
    auto row = m.row(static_cast<Eigen::Index>(i));
    row.head(idim) = img.cast<float>().transpose();
    row.tail(tdim) = txt.cast<float>().transpose();
  });
  return KbIndex(KbKind::kMultimodal, idim, std::move(m), std::move(records),
                 multimodal_fingerprint(image_provider, text_provider));
}

void save_kb(const KbIndex& kb, const fs::path& dir) {
  fs::create_directories(dir);

  std::string bin;
  bin.reserve(kHeaderBytes + kb.size() * static_cast<std::size_t>(kb.dim()) * 4);
  bin.append(kMagic);
  put_u32(bin, static_cast<std::uint32_t>(kb.size()));
  put_u32(bin, static_cast<std::uint32_t>(kb.dim()));
  const auto& m = kb.matrix();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) put_u32(bin, std::bit_cast<std::uint32_t>(m(r, c)));
  }

  std::string meta;
  for (const auto& rec : kb.records()) {
    meta += record_to_json(rec, kb.kind()).dump();
    meta += '\n';
  }

  json manifest = {
      {"format", std::string(kMagic)},
      {"kind", std::string(to_string(kb.kind()))},
      {"rows", kb.size()},
      {"dim", kb.dim()},
      {"image_dim", kb.image_dim()},
      {"provider_fingerprint", kb.provider_fingerprint()},
      {"checksums",
       {{"embeddings.bin", to_hex(stable_hash64(bin))}, {"metadata.jsonl", to_hex(stable_hash64(meta))}}},
  };

  write_file_atomic(dir / "embeddings.bin", bin);
  write_file_atomic(dir / "metadata.jsonl", meta);
  write_file_atomic(dir / "manifest.json", manifest.dump(2) + "\n");
}

KbIndex load_kb(const fs::path& dir, const LoadOptions& options) {
  auto corrupt = [&](const std::string& why) {
    return Error(ErrorCode::kCorruptBundle, dir.string() + ": " + why);
  };
  for (const char* f : {"manifest.json", "metadata.jsonl", "embeddings.bin"}) {
    if (!fs::exists(dir / f)) throw corrupt(std::string("missing ") + f);
  }

  json manifest = json::parse(read_file_text(dir / "manifest.json"), nullptr, false);
  if (manifest.is_discarded() || !manifest.is_object()) throw corrupt("manifest is not JSON");
  KbKind kind;
  std::size_t rows = 0;
  int dim = 0, image_dim = 0;
  std::string fingerprint, bin_sum, meta_sum;
  try {
    if (manifest.at("format").get<std::string>() != kMagic) throw corrupt("unknown format");
    kind = kb_kind_from_string(manifest.at("kind").get<std::string>());
    rows = manifest.at("rows").get<std::size_t>();
    dim = manifest.at("dim").get<int>();
    image_dim = manifest.value("image_dim", 0);
    fingerprint = manifest.at("provider_fingerprint").get<std::string>();
    bin_sum = manifest.at("checksums").at("embeddings.bin").get<std::string>();
    meta_sum = manifest.at("checksums").at("metadata.jsonl").get<std::string>();
  } catch (const json::exception& e) {
    throw corrupt(std::string("manifest: ") + e.what());
  }

  const auto bin = read_file_bytes(dir / "embeddings.bin");
  if (bin.size() < kHeaderBytes || std::memcmp(bin.data(), kMagic.data(), kMagic.size()) != 0) {
    throw corrupt("bad embeddings header");
  }
  const std::uint32_t hdr_rows = get_u32(bin.data() + 8);
  const std::uint32_t hdr_dim = get_u32(bin.data() + 12);
  if (hdr_rows != rows || static_cast<int>(hdr_dim) != dim) throw corrupt("header/manifest shape mismatch");
  const std::size_t expected = kHeaderBytes + std::size_t{hdr_rows} * hdr_dim * 4;
  if (bin.size() != expected) {
    throw corrupt("embeddings.bin has " + std::to_string(bin.size()) + " bytes, expected " +
                  std::to_string(expected));
  }
  if (to_hex(stable_hash64(bin)) != bin_sum) throw corrupt("embeddings.bin checksum mismatch");

  const std::string meta = read_file_text(dir / "metadata.jsonl");
  if (to_hex(stable_hash64(meta)) != meta_sum) throw corrupt("metadata.jsonl checksum mismatch");

  std::vector<KbRecord> records;
  records.reserve(rows);
  std::istringstream lines(meta);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(lines, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded()) throw corrupt("metadata line " + std::to_string(line_no) + " is not JSON");
    records.push_back(record_from_json(j, kind, line_no));
  }
  if (records.size() != rows) throw corrupt("metadata row count mismatch");

  if (options.expected_fingerprint && *options.expected_fingerprint != fingerprint) {
    std::string msg = "bundle built with '" + fingerprint + "', config expects '" +
                      *options.expected_fingerprint + "'";
    if (!options.allow_fingerprint_mismatch) throw Error(ErrorCode::kFingerprintMismatch, msg);
    std::cerr << "warning: FingerprintMismatch: " << msg << "\n";
  }

  EmbeddingMatrix m(static_cast<Eigen::Index>(rows), dim);
  const std::uint8_t* p = bin.data() + kHeaderBytes;
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c, p += 4) m(r, c) = std::bit_cast<float>(get_u32(p));
  }
  return KbIndex(kind, image_dim, std::move(m), std::move(records), std::move(fingerprint));
}

namespace {

template <typename Fn>
void read_jsonl(const fs::path& path, Fn&& fn) {
  for_each_line(path, [&](std::string_view line, std::size_t line_no) {
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object()) {
      throw Error(ErrorCode::kSchema, path.string() + " line " + std::to_string(line_no) + ": not a JSON object");
    }
    fn(j, line_no);
  });
}

void check_unique(std::unordered_set<std::string>& seen, const std::string& id, std::size_t line_no) {
  if (!seen.insert(id).second) {
    throw Error(ErrorCode::kDuplicateId, "line " + std::to_string(line_no) + ": doc_id '" + id + "'");
  }
}

}  // namespace

std::vector<TextPassage> read_text_corpus(const fs::path& jsonl) {
  std::vector<TextPassage> out;
  std::unordered_set<std::string> seen;
  read_jsonl(jsonl, [&](const json& j, std::size_t line_no) {
    TextPassage p;
    p.doc_id = req_string(j, "doc_id", line_no);
    p.title = j.value("title", "");
    p.text = req_string(j, "text", line_no);
    p.summary = opt_string(j, "summary");
    p.entity_id = opt_string(j, "entity_id");
    check_unique(seen, p.doc_id, line_no);
    out.push_back(std::move(p));
  });
  return out;
}

std::vector<MultimodalEntry> read_multimodal_corpus(const fs::path& jsonl) {
  std::vector<MultimodalEntry> out;
  std::unordered_set<std::string> seen;
  read_jsonl(jsonl, [&](const json& j, std::size_t line_no) {
    MultimodalEntry e;
    e.doc_id = req_string(j, "doc_id", line_no);
    e.image_ref = req_string(j, "image_ref", line_no);
    e.section_text = req_string(j, "section_text", line_no);
    e.summary = opt_string(j, "summary");
    e.entity_id = opt_string(j, "entity_id");
    check_unique(seen, e.doc_id, line_no);
    out.push_back(std::move(e));
  });
  return out;
}

}  // namespace mirag
