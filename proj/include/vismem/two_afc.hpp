#pragma once

// Two-alternative forced choice: which of two options is closer (by cosine
// similarity) to a reference, and agreement of those judgments with humans.

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace vismem {

struct TwoAfcTrial {
  std::vector<float> reference;
  std::vector<float> option0;
  std::vector<float> option1;
  std::optional<int> human_choice;
};

// 1 when option1 is strictly more similar to the reference, otherwise 0.
int two_afc_judge(const TwoAfcTrial& trial);

struct AlignmentResult {
  std::size_t trials = 0;
  std::size_t matches = 0;
  double proportion = 0.0;
  double standard_error = 0.0;
};

AlignmentResult two_afc_alignment(std::span<const TwoAfcTrial> trials);

// One manifest row; each field is a key resolved by an embedder.
struct TwoAfcItem {
  std::string reference;
  std::string option0;
  std::string option1;
  std::optional<int> human_choice;
};

using Embedder = std::function<std::vector<float>(const std::string& key)>;

AlignmentResult two_afc_alignment(std::span<const TwoAfcItem> items, const Embedder& embed);

// JSON-lines: {"reference": .., "option0": .., "option1": .., "human_choice": 0|1}.
// Integer references are kept as their decimal string.
std::vector<TwoAfcItem> parse_two_afc_manifest(std::string_view jsonl);

}  // namespace vismem
