#pragma once

// Exact cosine k-nearest-neighbor search over an EmbeddingStore, majority-vote
// classification, and classification accuracy reports.

#include <cstdint>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vismem/kernels.hpp"
#include "vismem/store.hpp"

namespace vismem {

inline constexpr std::size_t kDefaultK = 10;
// Prediction of an empty memory; distinct from every class label.
inline constexpr std::int64_t kNullLabel = std::numeric_limits<std::int64_t>::min();

// Exactly the top-min(k, size) records by cosine similarity, ties broken by
// ascending id. Throws on an empty store, k == 0, or a dimension mismatch.
NeighborList knn_search(const EmbeddingStore& store, std::span<const float> query,
                        std::size_t k, std::int64_t query_id = -1);

// One NeighborList per row of `queries` (parallel over queries).
std::vector<NeighborList> knn_search_batch(const EmbeddingStore& store,
                                           const EmbeddingStore& queries, std::size_t k);

struct Prediction {
  std::int64_t label = kNullLabel;
  std::map<std::int64_t, std::size_t> votes;
  std::size_t margin = 0;  // top count minus runner-up count
  std::vector<std::uint64_t> neighbor_ids;
  bool k_clamped = false;  // requested k exceeded the store size

  friend bool operator==(const Prediction&, const Prediction&) = default;
};

// Majority vote over ranked neighbors. A vote tie goes to the tied label whose
// best-ranked neighbor comes first. An empty list yields kNullLabel. Throws if
// a neighbor is unlabeled.
Prediction majority_vote(const EmbeddingStore& store, std::span<const Neighbor> ranked);

Prediction classify(const EmbeddingStore& store, std::span<const float> query, std::size_t k);
std::vector<Prediction> classify_batch(const EmbeddingStore& store,
                                       const EmbeddingStore& queries, std::size_t k);

struct ClassAccuracy {
  std::size_t total = 0;
  std::size_t correct = 0;
  double accuracy = 0.0;
};

struct AccuracyReport {
  std::size_t k = 0;
  std::size_t queries = 0;
  std::size_t correct = 0;
  double accuracy = 0.0;
  bool k_clamped = false;
  std::map<std::int64_t, ClassAccuracy> per_class;
  std::map<std::int64_t, std::map<std::int64_t, std::size_t>> confusion;  // truth -> predicted -> count
  std::vector<std::string> class_names;
};

// Top-1 accuracy of `memory` on labeled `queries`. Throws when the label
// spaces disagree or a query is unlabeled.
AccuracyReport evaluate_classification(const EmbeddingStore& memory,
                                       const EmbeddingStore& queries, std::size_t k);

nlohmann::json to_json(const Prediction& prediction);
nlohmann::json to_json(const AccuracyReport& report);
// Per-class table: "label,name,total,correct,accuracy".
std::string to_csv(const AccuracyReport& report);

}  // namespace vismem
