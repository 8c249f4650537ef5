#include "mirag/search.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <unordered_map>

namespace mirag {

std::string_view to_string(HitSource s) {
  return s == HitSource::kTextual ? "textual" : "multimodal";
}

std::string_view to_string(QuerySlot s) {
  switch (s) {
    case QuerySlot::kInitial: return "initial";
    case QuerySlot::kExpanded: return "expanded";
    case QuerySlot::kGenerated1: return "generated-1";
    case QuerySlot::kGenerated2: return "generated-2";
  }
  return "expanded";
}

HitSource hit_source_from_string(std::string_view s) {
  if (s == "textual") return HitSource::kTextual;
  if (s == "multimodal") return HitSource::kMultimodal;
  throw Error(ErrorCode::kSchema, "unknown hit source: " + std::string(s));
}

QuerySlot query_slot_from_string(std::string_view s) {
  if (s == "initial") return QuerySlot::kInitial;
  if (s == "expanded") return QuerySlot::kExpanded;
  if (s == "generated-1") return QuerySlot::kGenerated1;
  if (s == "generated-2") return QuerySlot::kGenerated2;
  throw Error(ErrorCode::kSchema, "unknown query slot: " + std::string(s));
}

bool ranks_before(const ScoredHit& a, const ScoredHit& b) {
  if (a.score != b.score) return a.score > b.score;
  return a.doc_id < b.doc_id;
}

std::vector<ScoredHit> mips_topk(const KbIndex& kb, const Eigen::Ref<const Eigen::VectorXd>& query,
                                 std::size_t k, QuerySlot slot) {
  if (query.size() != kb.dim()) {
    throw Error(ErrorCode::kDimensionMismatch, "query dim " + std::to_string(query.size()) +
                                                   " vs KB dim " + std::to_string(kb.dim()));
  }
  const std::size_t n = kb.size();
  const std::size_t take = std::min(k, n);
  if (take == 0) return {};

  const Eigen::VectorXd scores = kb.matrix().cast<double>() * query;
  const auto& records = kb.records();
  auto better = [&](std::size_t a, std::size_t b) {
    if (scores[static_cast<Eigen::Index>(a)] != scores[static_cast<Eigen::Index>(b)]) {
      return scores[static_cast<Eigen::Index>(a)] > scores[static_cast<Eigen::Index>(b)];
    }
    return records[a].doc_id < records[b].doc_id;
  };

  std::vector<std::size_t> order;
  order.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (std::isfinite(scores[static_cast<Eigen::Index>(i)])) order.push_back(i);
  }
  const std::size_t kept = std::min(take, order.size());
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(kept), order.end(), better);

  const HitSource source = kb.kind() == KbKind::kTextual ? HitSource::kTextual : HitSource::kMultimodal;
  std::vector<ScoredHit> hits;
  hits.reserve(kept);
  for (std::size_t i = 0; i < kept; ++i) {
    hits.push_back({records[order[i]].doc_id, scores[static_cast<Eigen::Index>(order[i])], source, slot});
  }
  return hits;
}

std::vector<ScoredHit> search_text(const KbIndex& kb, const EmbeddingProvider& text_provider,
                                   std::string_view query_text, std::size_t k, QuerySlot slot) {
  if (kb.kind() != KbKind::kTextual) {
    throw Error(ErrorCode::kInvalidArgument, "search_text needs a textual KB");
  }
  return mips_topk(kb, text_provider.embed_text(query_text), k, slot);
}

std::vector<ScoredHit> search_multimodal(const KbIndex& kb, const EmbeddingVector& fixed_image_vec,
                                         std::string_view query_text, std::size_t k,
                                         const EmbeddingProvider& text_provider, QuerySlot slot) {
  if (kb.kind() != KbKind::kMultimodal) {
    throw Error(ErrorCode::kInvalidArgument, "search_multimodal needs a multimodal KB");
  }
  if (fixed_image_vec.size() != kb.image_dim()) {
    throw Error(ErrorCode::kDimensionMismatch, "image vector dim " + std::to_string(fixed_image_vec.size()) +
                                                   " vs KB image dim " + std::to_string(kb.image_dim()));
  }
  const EmbeddingVector text_vec = text_provider.embed_text(query_text);
  auto hits = mips_topk(kb, concat(fixed_image_vec, text_vec), k, slot);
  for (auto& h : hits) h.score /= 2.0;
  return hits;
}

BudgetAllocation allocate_budget(const RetrievalBudget& budget, int n_generated) {
  n_generated = std::clamp(n_generated, 0, 2);
  BudgetAllocation a;
  if (n_generated == 0) {
    a.expanded = {budget.text_k, budget.mm_k};
    return a;
  }
  auto split = [&](std::size_t total, std::size_t SlotQuota::*field) {
    const std::size_t head = (total + 1) / 2;
    const std::size_t rest = total - head;
    const auto n = static_cast<std::size_t>(n_generated);
    a.expanded.*field = head;
    a.generated1.*field = rest / n + rest % n;
    if (n == 2) a.generated2.*field = rest / n;
  };
  split(budget.text_k, &SlotQuota::text_k);
  split(budget.mm_k, &SlotQuota::mm_k);
  return a;
}

namespace {

int slot_rank(QuerySlot s) {
  switch (s) {
    case QuerySlot::kInitial:
    case QuerySlot::kExpanded: return 0;
    case QuerySlot::kGenerated1: return 1;
    case QuerySlot::kGenerated2: return 2;
  }
  return 0;
}

}  // namespace

std::vector<ScoredHit> dedup_merge(std::span<const std::vector<ScoredHit>> hit_lists, std::size_t cap) {
  std::unordered_map<std::string, ScoredHit> best;
  for (const auto& list : hit_lists) {
    for (const auto& h : list) {
      auto [it, inserted] = best.try_emplace(h.doc_id, h);
      if (inserted) continue;
      auto& cur = it->second;
      if (h.score > cur.score || (h.score == cur.score && slot_rank(h.slot) < slot_rank(cur.slot))) cur = h;
    }
  }
  std::vector<ScoredHit> out;
  out.reserve(best.size());
  for (auto& [_, h] : best) out.push_back(std::move(h));
  std::sort(out.begin(), out.end(), ranks_before);
  if (out.size() > cap) out.resize(cap);
  return out;
}

JointHits joint_search(const KbHandle& text_kb, const KbHandle& mm_kb, const MultiQuery& multi_query,
                       const EmbeddingVector& fixed_image_vec, const RetrievalBudget& budget,
                       QuerySlot primary_slot) {
  const int n_generated = static_cast<int>(std::min<std::size_t>(multi_query.generated.size(), 2));
  const BudgetAllocation alloc = allocate_budget(budget, n_generated);
  constexpr QuerySlot kGenSlots[] = {QuerySlot::kGenerated1, QuerySlot::kGenerated2};

  JointHits out;
  std::vector<bool> slot_failed(static_cast<std::size_t>(n_generated), false);

  // search(query, k, slot) for one KB; quota member selects text_k or mm_k.
  auto run_kb = [&](auto&& search, std::size_t cap, std::size_t SlotQuota::*quota) {
    std::vector<ScoredHit> result;
    if (cap == 0) return result;
    const std::vector<ScoredHit> expanded = search(multi_query.expanded, cap, primary_slot);
    const std::size_t head = std::min(alloc.expanded.*quota, expanded.size());

    std::vector<std::vector<ScoredHit>> lists;
    lists.emplace_back(expanded.begin(), expanded.begin() + static_cast<std::ptrdiff_t>(head));
    for (int g = 0; g < n_generated; ++g) {
      const std::size_t k = alloc.generated(g).*quota;
      if (k == 0) continue;
      try {
        lists.push_back(search(multi_query.generated[static_cast<std::size_t>(g)], k, kGenSlots[g]));
      } catch (const Error&) {
        slot_failed[static_cast<std::size_t>(g)] = true;
      }
    }

    std::unordered_map<std::string, bool> seen;
    for (const auto& l : lists) {
      for (const auto& h : l) seen.emplace(h.doc_id, true);
    }
    std::vector<ScoredHit> backfill;
    for (std::size_t i = head; i < expanded.size() && seen.size() < cap; ++i) {
      if (seen.emplace(expanded[i].doc_id, true).second) backfill.push_back(expanded[i]);
    }
    lists.push_back(std::move(backfill));
    return dedup_merge(lists, cap);
  };

  std::map<std::pair<const EmbeddingProvider*, std::string>, EmbeddingVector> cache;
  auto embed = [&](const EmbeddingProvider& p, const std::string& q) -> const EmbeddingVector& {
    auto key = std::make_pair(&p, q);
    auto it = cache.find(key);
    if (it == cache.end()) it = cache.emplace(key, p.embed_text(q)).first;
    return it->second;
  };

  if (text_kb.kb != nullptr) {
    const auto& kb = *text_kb.kb;
    const auto& provider = *text_kb.text_provider;
    out.text = run_kb(
        [&](const std::string& q, std::size_t k, QuerySlot slot) {
          return mips_topk(kb, embed(provider, q), k, slot);
        },
        budget.text_k, &SlotQuota::text_k);
  }
  if (mm_kb.kb != nullptr) {
    const auto& kb = *mm_kb.kb;
    const auto& provider = *mm_kb.text_provider;
    if (fixed_image_vec.size() != kb.image_dim()) {
      throw Error(ErrorCode::kDimensionMismatch, "image vector does not match multimodal KB");
    }
    out.mm = run_kb(
        [&](const std::string& q, std::size_t k, QuerySlot slot) {
          auto hits = mips_topk(kb, concat(fixed_image_vec, embed(provider, q)), k, slot);
          for (auto& h : hits) h.score /= 2.0;
          return hits;
        },
        budget.mm_k, &SlotQuota::mm_k);
  }
  for (int g = 0; g < n_generated; ++g) {
    if (slot_failed[static_cast<std::size_t>(g)]) out.failed_slots.push_back(kGenSlots[g]);
  }
  return out;
}

}  // namespace mirag
