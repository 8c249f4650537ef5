#include "mirag/prompts.hpp"

#include <array>

#include "mirag/errors.hpp"

namespace mirag {

namespace {

constexpr std::string_view kInitialDescription =
    "Question: {question}\n Concisely describe image which is relevant to question.\n";

constexpr std::string_view kQueryExpansion = "Question: {question}\n{reasoning_record}\n";

constexpr std::string_view kQueryGeneration =
    "Question: {question}\n"
    "Knowledge: {reasoning_records}\n"
    "\n"
    "Please first analyze all the information in a section named Analysis (## Analysis).\n"
    "Generate two follow-up questions to search for additional information and helpful to confirm "
    "knowledge, in a section named Queries (## Queries).\n"
    "Your output should be in the following format:\n"
    "\n"
    "## Analysis\n"
    "Analysis question and knowledge to ask context-specific queries that helps to address question.\n"
    "## Queries\n"
    "Question 1: question 1.\n"
    "Question 2: question 2.\n";

constexpr std::string_view kRecordGeneration =
    "Question: {question}\n"
    "Knowledge: {knowledge}\n"
    "\n"
    "Based on image, description and knowledge, summarize correct and relevant information with image "
    "and question.\n";

constexpr std::string_view kFinalAnswer =
    "Please answer the following question using the provided information and image.\n"
    "\n"
    "Question: {question}\n"
    "Relevant Knowledge: {reasoning_records}\n"
    "\n"
    "Based on the information, provide a detailed answer to the question.\n";

constexpr std::string_view kFewshotHeader =
    "Answer the knowledge-intensive question based on the provided image and context.\n"
    "Generate a concise and accurate answer grounded in the retrieved information.\n"
    "Use the context to support reasoning, and directly output the final answer.\n";

constexpr std::array<std::string_view, 11> kNumberWords = {
    "Zero", "One", "Two", "Three", "Four", "Five", "Six", "Seven", "Eight", "Nine", "Ten"};

std::string count_phrase(int n) {
  std::string word = n >= 0 && n < static_cast<int>(kNumberWords.size())
                         ? std::string(kNumberWords[static_cast<std::size_t>(n)])
                         : std::to_string(n);
  return n == 1 ? word + " example is shown below:" : word + " examples are shown below:";
}

const std::string& fewshot_three() {
  static const std::string t = fewshot_template(3);
  return t;
}

}  // namespace

std::string_view to_string(PromptKind kind) {
  switch (kind) {
    case PromptKind::kInitialDescription: return "initial-description";
    case PromptKind::kQueryExpansion: return "query-expansion";
    case PromptKind::kQueryGeneration: return "query-generation";
    case PromptKind::kRecordGeneration: return "record-generation";
    case PromptKind::kFinalAnswer: return "final-answer";
    case PromptKind::kFewshotEm: return "fewshot-em";
  }
  return "";
}

PromptKind prompt_kind_from_string(std::string_view s) {
  for (auto k : {PromptKind::kInitialDescription, PromptKind::kQueryExpansion, PromptKind::kQueryGeneration,
                 PromptKind::kRecordGeneration, PromptKind::kFinalAnswer, PromptKind::kFewshotEm}) {
    if (to_string(k) == s) return k;
  }
  throw Error(ErrorCode::kSchema, "unknown prompt kind: " + std::string(s));
}

std::string_view prompt_template(PromptKind kind) {
  switch (kind) {
    case PromptKind::kInitialDescription: return kInitialDescription;
    case PromptKind::kQueryExpansion: return kQueryExpansion;
    case PromptKind::kQueryGeneration: return kQueryGeneration;
    case PromptKind::kRecordGeneration: return kRecordGeneration;
    case PromptKind::kFinalAnswer: return kFinalAnswer;
    case PromptKind::kFewshotEm: return fewshot_three();
  }
  return {};
}

std::string fill_template(std::string_view tmpl, const PromptSlots& slots) {
  std::string out;
  out.reserve(tmpl.size() * 2);
  std::size_t pos = 0;
  while (pos < tmpl.size()) {
    const auto open = tmpl.find('{', pos);
    if (open == std::string_view::npos) {
      out.append(tmpl.substr(pos));
      break;
    }
    const auto close = tmpl.find('}', open);
    if (close == std::string_view::npos) {
      out.append(tmpl.substr(pos));
      break;
    }
    out.append(tmpl.substr(pos, open - pos));
    const auto name = tmpl.substr(open + 1, close - open - 1);
    auto it = slots.find(name);
    if (it == slots.end()) throw Error(ErrorCode::kMissingSlot, std::string(name));
    out.append(it->second);
    pos = close + 1;
  }
  return out;
}

std::string render_prompt(PromptKind kind, const PromptSlots& slots) {
  return fill_template(prompt_template(kind), slots);
}

std::string fewshot_template(int n_demos) {
  std::string t(kFewshotHeader);
  t += "\n" + count_phrase(n_demos) + "\n";
  for (int i = 1; i <= n_demos; ++i) {
    const auto n = std::to_string(i);
    t += "\n##Example " + n + ":\n";
    t += "[Image " + n + " Content]\n";
    t += "##Context: {few_shot_context_" + n + "}\n";
    t += "##Question: {few_shot_question_" + n + "}\n";
    t += "##Best Answer: {few_shot_answer_" + n + "}\n";
  }
  t +=
      "\nNow, answer this question\n"
      "[Main Image Content]\n"
      "##Context: {reasoning_records}\n"
      "##Question: {question}\n"
      "##Best Answer:";
  return t;
}

std::string render_fewshot(int n_demos, const PromptSlots& slots) {
  return fill_template(fewshot_template(n_demos), slots);
}

}  // namespace mirag
