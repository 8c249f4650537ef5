#pragma once

#include <map>
#include <string>
#include <string_view>

namespace mirag {

enum class PromptKind {
  kInitialDescription,
  kQueryExpansion,
  kQueryGeneration,
  kRecordGeneration,
  kFinalAnswer,
  kFewshotEm,
};

inline constexpr int kPromptTemplateVersion = 1;

std::string_view to_string(PromptKind kind);
PromptKind prompt_kind_from_string(std::string_view s);

using PromptSlots = std::map<std::string, std::string, std::less<>>;

/// Raw template with {slot} placeholders.
std::string_view prompt_template(PromptKind kind);

/// Fills every {slot} of the template. Throws MissingSlot naming the first
/// absent slot. Values are inserted verbatim and never re-scanned.
std::string render_prompt(PromptKind kind, const PromptSlots& slots);

/// Few-shot answer-extraction prompt with `n_demos` examples. Slots are
/// few_shot_{context,question,answer}_<i> (1-based), reasoning_records and
/// question. Each example carries an "[Image i Content]" line where the
/// demo image belongs; "[Main Image Content]" marks the query image.
std::string fewshot_template(int n_demos);
std::string render_fewshot(int n_demos, const PromptSlots& slots);

/// Substitutes {name} placeholders in an arbitrary template.
std::string fill_template(std::string_view tmpl, const PromptSlots& slots);

}  // namespace mirag
