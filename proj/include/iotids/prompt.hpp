#pragma once

// Flow-to-text prompt rendering, token budgets and answer extraction.
//
// Training / direct-inference layout:
//
//   Task: Network Attack Classification
//   Input Features: {Header Length = 20.0; Protocol Type = 6.0; ...}
//   Possible Classes: [benign, ddos ack fragmentation, ...]
//   Answer: benign
//
// Retrieval-augmented layout:
//
//   Retrieved Examples:
//   Input: {...}
//   Answer: recon ping sweep
//   ...
//   Task: Network Attack Classification;
//   Possible Classes: [recon ping sweep, sql injection]
//   Example Input: {...}
//   Answer:

#include <algorithm>
#include <cctype>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "iotids/common.hpp"
#include "iotids/features.hpp"
#include "iotids/flow_ingest.hpp"
#include "iotids/schema.hpp"
#include "iotids/tokenizer.hpp"

namespace iotids {

inline constexpr std::string_view kAnswerMarker = "Answer:";
inline constexpr std::string_view kTaskLine = "Task: Network Attack Classification";
inline constexpr std::string_view kUnmatched = "unmatched";
inline constexpr std::size_t kTrainingBudget = 512;
inline constexpr std::size_t kRagBudget = 1015;

struct PromptText {
  std::string text;
  std::size_t token_count = 0;
  std::size_t answer_marker_offset = 0;  // byte offset of the final "Answer:"
  std::size_t exemplars_used = 0;        // retrieval prompts only
};

struct GenSettings {
  std::size_t max_new_tokens = 6;
  double temperature = 0.0;  // greedy
  std::vector<std::string> stop_sequences;

  void validate() const {
    if (max_new_tokens < 1) throw ConfigError("generation.max_new_tokens must be >= 1");
    if (temperature < 0.0) throw ConfigError("generation.temperature must be >= 0");
  }
};

inline void to_json(nlohmann::json& j, const GenSettings& g) {
  j = nlohmann::json{{"max_new_tokens", g.max_new_tokens}, {"temperature", g.temperature}, {"stop", g.stop_sequences}};
}

inline void from_json(const nlohmann::json& j, GenSettings& g) {
  g = GenSettings{};
  if (j.contains("max_new_tokens")) j.at("max_new_tokens").get_to(g.max_new_tokens);
  if (j.contains("temperature")) j.at("temperature").get_to(g.temperature);
  if (j.contains("stop")) j.at("stop").get_to(g.stop_sequences);
}

// A retrieved example: raw selected-feature values plus its label.
struct Exemplar {
  std::vector<double> values;
  std::string label;
};

namespace detail {

inline std::string feature_block(std::span<const double> values, std::span<const std::string> display_names,
                                 std::size_t n) {
  std::string out = "{";
  for (std::size_t i = 0; i < n; ++i) {
    if (i) out += "; ";
    out += display_names[i];
    out += " = ";
    out += format_value(values[i]);
  }
  out += "}";
  return out;
}

inline std::string class_list_text(const std::vector<std::string>& classes) {
  std::string out = "[";
  for (std::size_t i = 0; i < classes.size(); ++i) {
    if (i) out += ", ";
    out += classes[i];
  }
  out += "]";
  return out;
}

inline std::vector<std::string> selected_display_names(const FeatureSchema& schema) {
  std::vector<std::string> out;
  for (auto i : schema.selected_indices()) out.push_back(schema.display_names[i]);
  return out;
}

inline PromptText finish(std::string text, const TokenizerAdapter& tok) {
  PromptText p;
  p.answer_marker_offset = text.rfind(kAnswerMarker);
  p.token_count = tok.count(text);
  p.text = std::move(text);
  return p;
}

inline std::string normalize_answer(std::string_view s) {
  std::string out;
  bool pending_space = false;
  for (char c : s) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out.push_back(' ');
    pending_space = false;
    out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  }
  return out;
}

}  // namespace detail

// Alphabetical, duplicates removed.
inline std::vector<std::string> ordered_classes(std::vector<std::string> classes) {
  std::sort(classes.begin(), classes.end());
  classes.erase(std::unique(classes.begin(), classes.end()), classes.end());
  return classes;
}

inline std::string class_list_id(const std::vector<std::string>& classes) {
  std::string joined;
  for (const auto& c : ordered_classes(classes)) joined += c + "\n";
  return "classes-" + content_id(joined);
}

// Trailing feature pairs are dropped until the prompt fits `budget`.
inline PromptText render_training_prompt(std::span<const double> values, const FeatureSchema& schema,
                                         const std::vector<std::string>& class_list,
                                         const std::optional<std::string>& label, const TokenizerAdapter& tok,
                                         std::size_t budget = kTrainingBudget) {
  const auto names = detail::selected_display_names(schema);
  if (values.size() != names.size())
    throw DataError("render_training_prompt: record has " + std::to_string(values.size()) +
                    " selected values, schema has " + std::to_string(names.size()));
  const auto classes = ordered_classes(class_list);
  if (label && !std::binary_search(classes.begin(), classes.end(), *label))
    throw DataError("render_training_prompt: label '" + *label + "' is not in the class list");

  const std::string classes_line = "Possible Classes: " + detail::class_list_text(classes) + "\n";
  std::string answer_line(kAnswerMarker);
  if (label) answer_line += " " + *label;

  for (std::size_t n = names.size();; --n) {
    std::string text(kTaskLine);
    text += "\nInput Features: ";
    text += detail::feature_block(values, names, n);
    text += "\n";
    text += classes_line;
    text += answer_line;
    if (tok.count(text) <= budget) return detail::finish(std::move(text), tok);
    if (n == 0) break;
  }
  throw BudgetError("training prompt exceeds " + std::to_string(budget) + " tokens with every feature dropped");
}

inline PromptText render_training_prompt(const FlowRecord& record, const FeatureSchema& schema,
                                         const std::vector<std::string>& class_list,
                                         const std::optional<std::string>& label, const TokenizerAdapter& tok,
                                         std::size_t budget = kTrainingBudget) {
  return render_training_prompt(schema.project(record.features), schema, class_list, label, tok, budget);
}

// Labels of exemplars, first-appearance order, duplicates removed.
inline std::vector<std::string> exemplar_classes(std::span<const Exemplar> exemplars) {
  std::vector<std::string> out;
  for (const auto& e : exemplars)
    if (std::find(out.begin(), out.end(), e.label) == out.end()) out.push_back(e.label);
  return out;
}

// Exemplars beyond the budget are dropped from the end of the list.
inline PromptText render_rag_prompt(std::span<const double> query, std::span<const Exemplar> exemplars,
                                    const FeatureSchema& schema, const TokenizerAdapter& tok,
                                    std::size_t budget = kRagBudget) {
  if (exemplars.empty() || exemplars.size() > 3)
    throw std::invalid_argument("render_rag_prompt: needs 1 to 3 exemplars, got " + std::to_string(exemplars.size()));
  const auto names = detail::selected_display_names(schema);
  if (query.size() != names.size()) throw DataError("render_rag_prompt: query does not match schema");
  for (const auto& e : exemplars)
    if (e.values.size() != names.size()) throw DataError("render_rag_prompt: exemplar does not match schema");

  for (std::size_t m = exemplars.size(); m > 0; --m) {
    const auto kept = exemplars.first(m);
    std::string text = "Retrieved Examples:\n";
    for (const auto& e : kept) {
      text += "Input: " + detail::feature_block(e.values, names, names.size()) + "\n";
      text += std::string(kAnswerMarker) + " " + e.label + "\n";
    }
    text += std::string(kTaskLine) + ";\n";
    text += "Possible Classes: " + detail::class_list_text(exemplar_classes(kept)) + "\n";
    text += "Example Input: " + detail::feature_block(query, names, names.size()) + "\n";
    text += kAnswerMarker;
    if (tok.count(text) <= budget) {
      auto p = detail::finish(std::move(text), tok);
      p.exemplars_used = m;
      return p;
    }
  }
  throw BudgetError("retrieval prompt exceeds " + std::to_string(budget) + " tokens with a single exemplar");
}

// Label after the final "Answer:" (whole text when there is none): exact
// class match, else the longest class ending on a word boundary that
// prefixes the answer, else "unmatched".
inline std::string extract_answer(std::string_view generated, const std::vector<std::string>& class_list) {
  auto pos = generated.rfind(kAnswerMarker);
  auto tail = pos == std::string_view::npos ? generated : generated.substr(pos + kAnswerMarker.size());
  const auto answer = detail::normalize_answer(tail);
  if (answer.empty()) return std::string(kUnmatched);

  std::string best;
  for (const auto& raw : class_list) {
    const auto cls = detail::normalize_answer(raw);
    if (cls.empty()) continue;
    if (answer == cls) return cls;
    if (answer.size() > cls.size() && answer.compare(0, cls.size(), cls) == 0 &&
        !std::isalnum(static_cast<unsigned char>(answer[cls.size()])) && cls.size() > best.size())
      best = cls;
  }
  return best.empty() ? std::string(kUnmatched) : best;
}

// One line of the prompt hand-off file consumed by the fine-tuning harness.
inline std::string prompt_jsonl_line(const PromptText& prompt, const std::string& label, std::string_view split,
                                     const std::string& classes_id) {
  nlohmann::json j{{"prompt", prompt.text}, {"label", label}, {"split", split}, {"class_list_id", classes_id}};
  return j.dump();
}

}  // namespace iotids
