#pragma once

#include <Eigen/Dense>
#include <span>
#include <string>
#include <vector>

#include "mirag/embed.hpp"
#include "mirag/kbstore.hpp"

namespace mirag {

enum class HitSource { kTextual, kMultimodal };

/// Which member of the multi-query produced a hit. kInitial marks the
/// iteration-0 query built from the image description.
enum class QuerySlot { kInitial, kExpanded, kGenerated1, kGenerated2 };

std::string_view to_string(HitSource s);
std::string_view to_string(QuerySlot s);
HitSource hit_source_from_string(std::string_view s);
QuerySlot query_slot_from_string(std::string_view s);

struct ScoredHit {
  std::string doc_id;
  /// Textual: cosine. Multimodal: mean of image and text similarity.
  double score = 0.0;
  HitSource source = HitSource::kTextual;
  QuerySlot slot = QuerySlot::kExpanded;

  friend bool operator==(const ScoredHit&, const ScoredHit&) = default;
};

/// Score descending, doc_id ascending on ties.
bool ranks_before(const ScoredHit& a, const ScoredHit& b);

/// Exact top-k by inner product over every row. Reported score is the raw
/// inner product.
std::vector<ScoredHit> mips_topk(const KbIndex& kb, const Eigen::Ref<const Eigen::VectorXd>& query,
                                 std::size_t k, QuerySlot slot = QuerySlot::kExpanded);

/// Multimodal similarity: the mean of the text-text and image-image terms.
template <typename Scalar>
constexpr Scalar mm_score(Scalar text_sim, Scalar image_sim) {
  return (text_sim + image_sim) / Scalar(2);
}

std::vector<ScoredHit> search_text(const KbIndex& kb, const EmbeddingProvider& text_provider,
                                   std::string_view query_text, std::size_t k,
                                   QuerySlot slot = QuerySlot::kExpanded);

/// Embeds `query_text`, searches with (fixed_image_vec || text_vec) and
/// reports inner product / 2, i.e. mm_score of the two similarities.
std::vector<ScoredHit> search_multimodal(const KbIndex& kb, const EmbeddingVector& fixed_image_vec,
                                         std::string_view query_text, std::size_t k,
                                         const EmbeddingProvider& text_provider,
                                         QuerySlot slot = QuerySlot::kExpanded);

struct RetrievalBudget {
  std::size_t text_k = 20;
  std::size_t mm_k = 10;
};

struct SlotQuota {
  std::size_t text_k = 0;
  std::size_t mm_k = 0;

  friend bool operator==(const SlotQuota&, const SlotQuota&) = default;
};

struct BudgetAllocation {
  SlotQuota expanded;
  SlotQuota generated1;
  SlotQuota generated2;

  const SlotQuota& generated(int index) const { return index == 0 ? generated1 : generated2; }
};

/// The expanded query keeps ceil(half) of each budget; the rest is split
/// evenly across generated sub-queries with the remainder going to the first.
BudgetAllocation allocate_budget(const RetrievalBudget& budget, int n_generated);

/// Union by doc_id keeping the best score (ties: earliest slot), sorted by
/// ranks_before and truncated to `cap`.
std::vector<ScoredHit> dedup_merge(std::span<const std::vector<ScoredHit>> hit_lists, std::size_t cap);

struct MultiQuery {
  std::string expanded;
  std::vector<std::string> generated;

  friend bool operator==(const MultiQuery&, const MultiQuery&) = default;
};

/// A KB together with the text embedder its rows were built with. A null kb
/// disables that side of the joint search.
struct KbHandle {
  const KbIndex* kb = nullptr;
  const EmbeddingProvider* text_provider = nullptr;
};

struct JointHits {
  std::vector<ScoredHit> text;
  std::vector<ScoredHit> mm;
  /// Generated slots whose search failed and were backfilled.
  std::vector<QuerySlot> failed_slots;
};

/// One iteration of joint retrieval: every slot of the multi-query hits both
/// KBs with its quota, results are unioned per KB and topped up from the
/// expanded query's ranking when duplicates or failed slots leave room.
JointHits joint_search(const KbHandle& text_kb, const KbHandle& mm_kb, const MultiQuery& multi_query,
                       const EmbeddingVector& fixed_image_vec, const RetrievalBudget& budget,
                       QuerySlot primary_slot = QuerySlot::kExpanded);

}  // namespace mirag
