#pragma once

#include <cctype>
#include <cstddef>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace iotids {

// Counts and truncates text in model tokens. Implementations must be safe
// for concurrent const use.
class TokenizerAdapter {
 public:
  virtual ~TokenizerAdapter() = default;
  virtual std::string name() const = 0;
  virtual std::size_t count(std::string_view text) const = 0;
  // Longest prefix of `text` whose count is <= budget.
  virtual std::string truncate(std::string_view text, std::size_t budget) const = 0;
};

// Model-free segmentation that over-counts relative to typical BPE
// vocabularies: each letter run is one token, digit runs are cut into groups
// of three, every other non-space byte is its own token.
class PunctuationTokenizer final : public TokenizerAdapter {
 public:
  std::string name() const override { return "whitespace-punct"; }

  std::size_t count(std::string_view text) const override { return segments(text).size(); }

  std::string truncate(std::string_view text, std::size_t budget) const override {
    const auto segs = segments(text);
    if (segs.size() <= budget) return std::string(text);
    if (budget == 0) return {};
    return std::string(text.substr(0, segs[budget - 1].second));
  }

  // [begin, end) byte ranges, one per token.
  static std::vector<std::pair<std::size_t, std::size_t>> segments(std::string_view text) {
    std::vector<std::pair<std::size_t, std::size_t>> out;
    std::size_t i = 0;
    const std::size_t n = text.size();
    auto is_letter = [](unsigned char c) { return std::isalpha(c) || c >= 0x80; };
    while (i < n) {
      const auto c = static_cast<unsigned char>(text[i]);
      if (std::isspace(c)) {
        ++i;
      } else if (is_letter(c)) {
        std::size_t j = i;
        while (j < n && is_letter(static_cast<unsigned char>(text[j]))) ++j;
        out.emplace_back(i, j);
        i = j;
      } else if (std::isdigit(c)) {
        std::size_t j = i;
        while (j < n && std::isdigit(static_cast<unsigned char>(text[j])) && j - i < 3) ++j;
        out.emplace_back(i, j);
        i = j;
      } else {
        out.emplace_back(i, i + 1);
        ++i;
      }
    }
    return out;
  }
};

}  // namespace iotids
