#include "vismem/two_afc.hpp"

#include <cmath>
#include <sstream>

#include <nlohmann/json.hpp>

#include "vismem/error.hpp"
#include "vismem/kernels.hpp"
#include "vismem/stats.hpp"

namespace vismem {

namespace {

double cosine(std::span<const float> a, std::span<const float> b) {
  const double na = kernels::norm(a);
  const double nb = kernels::norm(b);
  if (na == 0.0 || nb == 0.0) throw Error(Errc::invariant, "2AFC trial has a zero-norm vector");
  return kernels::dot(a, b) / (na * nb);
}

void validate(const TwoAfcTrial& t) {
  if (t.reference.empty() || t.reference.size() != t.option0.size() ||
      t.reference.size() != t.option1.size()) {
    throw Error(Errc::invariant, "2AFC trial vectors must share a nonzero dimension");
  }
  for (const auto* v : {&t.reference, &t.option0, &t.option1}) {
    for (float x : *v) {
      if (!std::isfinite(x)) throw Error(Errc::invariant, "2AFC trial has a non-finite component");
    }
  }
  if (t.human_choice && *t.human_choice != 0 && *t.human_choice != 1) {
    throw Error(Errc::invariant, "human_choice must be 0 or 1");
  }
}

std::string key_of(const nlohmann::json& v, const char* field, std::size_t line) {
  if (v.is_number_integer()) return std::to_string(v.get<std::int64_t>());
  if (v.is_string()) return v.get<std::string>();
  throw Error(Errc::format, "2AFC manifest line " + std::to_string(line) + ": field '" + field +
                                "' must be an id or a path");
}

}  // namespace

int two_afc_judge(const TwoAfcTrial& trial) {
  validate(trial);
  const double s0 = cosine(trial.reference, trial.option0);
  const double s1 = cosine(trial.reference, trial.option1);
  return s1 > s0 ? 1 : 0;
}

AlignmentResult two_afc_alignment(std::span<const TwoAfcTrial> trials) {
  if (trials.empty()) throw Error(Errc::usage, "no 2AFC trials");
  AlignmentResult r;
  r.trials = trials.size();
  for (std::size_t i = 0; i < trials.size(); ++i) {
    if (!trials[i].human_choice) {
      throw Error(Errc::invariant, "2AFC trial " + std::to_string(i) + " has no human_choice");
    }
    if (two_afc_judge(trials[i]) == *trials[i].human_choice) ++r.matches;
  }
  r.proportion = static_cast<double>(r.matches) / static_cast<double>(r.trials);
  r.standard_error = proportion_se(r.proportion, r.trials);
  return r;
}

AlignmentResult two_afc_alignment(std::span<const TwoAfcItem> items, const Embedder& embed) {
  std::vector<TwoAfcTrial> trials;
  trials.reserve(items.size());
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (!items[i].human_choice) {
      throw Error(Errc::invariant, "2AFC trial " + std::to_string(i) + " has no human_choice");
    }
    trials.push_back({embed(items[i].reference), embed(items[i].option0),
                      embed(items[i].option1), items[i].human_choice});
  }
  return two_afc_alignment(trials);
}

std::vector<TwoAfcItem> parse_two_afc_manifest(std::string_view jsonl) {
  std::vector<TwoAfcItem> items;
  std::istringstream in{std::string(jsonl)};
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json row;
    try {
      row = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw Error(Errc::format, "2AFC manifest line " + std::to_string(line_no) + ": " + e.what());
    }
    for (const char* field : {"reference", "option0", "option1"}) {
      if (!row.contains(field)) {
        throw Error(Errc::format, "2AFC manifest line " + std::to_string(line_no) +
                                      ": missing '" + field + "'");
      }
    }
    TwoAfcItem item{key_of(row["reference"], "reference", line_no),
                    key_of(row["option0"], "option0", line_no),
                    key_of(row["option1"], "option1", line_no), std::nullopt};
    if (row.contains("human_choice") && !row["human_choice"].is_null()) {
      item.human_choice = row["human_choice"].get<int>();
    }
    items.push_back(std::move(item));
  }
  return items;
}

}  // namespace vismem
