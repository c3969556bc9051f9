#include "vismem/knn.hpp"

#include <algorithm>
#include <sstream>

#include "vismem/error.hpp"

namespace vismem {

namespace {

void check_search_args(const EmbeddingStore& store, std::size_t k) {
  if (store.empty()) throw Error(Errc::invariant, "cannot search an empty store");
  if (k == 0) throw Error(Errc::usage, "k must be positive");
}

}  // namespace

NeighborList knn_search(const EmbeddingStore& store, std::span<const float> query,
                        std::size_t k, std::int64_t query_id) {
  check_search_args(store, k);
  return kernels::top_k(store, query, k, query_id);
}

std::vector<NeighborList> knn_search_batch(const EmbeddingStore& store,
                                           const EmbeddingStore& queries, std::size_t k) {
  check_search_args(store, k);
  if (queries.size() > 0 && queries.dim() != store.dim()) {
    throw Error(Errc::invariant, "query dimension " + std::to_string(queries.dim()) +
                                     " does not match store dimension " +
                                     std::to_string(store.dim()));
  }
  return kernels::batch_top_k_parallel(store, queries, k);
}

Prediction majority_vote(const EmbeddingStore& store, std::span<const Neighbor> ranked) {
  Prediction p;
  p.neighbor_ids.reserve(ranked.size());
  // First rank at which each label appears, for the tie-break.
  std::map<std::int64_t, std::size_t> first_rank;
  for (std::size_t r = 0; r < ranked.size(); ++r) {
    const std::int64_t label = store.label(ranked[r].row);
    if (label == kUnlabeled) {
      throw Error(Errc::invariant, "neighbor " + std::to_string(ranked[r].id) + " is unlabeled");
    }
    p.neighbor_ids.push_back(ranked[r].id);
    ++p.votes[label];
    first_rank.emplace(label, r);
  }
  if (ranked.empty()) return p;

  std::size_t best = 0, runner_up = 0;
  std::size_t best_rank = ranked.size();
  for (const auto& [label, count] : p.votes) {
    const std::size_t rank = first_rank[label];
    if (count > best || (count == best && rank < best_rank)) {
      runner_up = std::max(runner_up, best);
      best = count;
      best_rank = rank;
      p.label = label;
    } else {
      runner_up = std::max(runner_up, count);
    }
  }
  p.margin = best - runner_up;
  return p;
}

Prediction classify(const EmbeddingStore& store, std::span<const float> query, std::size_t k) {
  const NeighborList list = knn_search(store, query, k);
  Prediction p = majority_vote(store, list.entries);
  p.k_clamped = k > store.size();
  return p;
}

std::vector<Prediction> classify_batch(const EmbeddingStore& store,
                                       const EmbeddingStore& queries, std::size_t k) {
  const auto lists = knn_search_batch(store, queries, k);
  std::vector<Prediction> out;
  out.reserve(lists.size());
  for (const auto& list : lists) {
    out.push_back(majority_vote(store, list.entries));
    out.back().k_clamped = k > store.size();
  }
  return out;
}

AccuracyReport evaluate_classification(const EmbeddingStore& memory,
                                       const EmbeddingStore& queries, std::size_t k) {
  if (!memory.class_names().empty() && !queries.class_names().empty() &&
      memory.class_names() != queries.class_names()) {
    throw Error(Errc::invariant, "memory and query class_names differ");
  }
  const auto& names = memory.class_names().empty() ? queries.class_names() : memory.class_names();
  for (std::size_t q = 0; q < queries.size(); ++q) {
    const auto label = queries.label(q);
    if (label == kUnlabeled) {
      throw Error(Errc::invariant, "query " + std::to_string(queries.id(q)) + " is unlabeled");
    }
    if (!names.empty() && label >= static_cast<std::int64_t>(names.size())) {
      throw Error(Errc::invariant, "query " + std::to_string(queries.id(q)) +
                                       " label outside the memory label space");
    }
  }

  AccuracyReport report;
  report.k = k;
  report.queries = queries.size();
  report.class_names = names;
  report.k_clamped = k > memory.size();
  const auto predictions = classify_batch(memory, queries, k);
  for (std::size_t q = 0; q < queries.size(); ++q) {
    const auto truth = queries.label(q);
    const auto predicted = predictions[q].label;
    auto& cls = report.per_class[truth];
    ++cls.total;
    if (predicted == truth) {
      ++cls.correct;
      ++report.correct;
    }
    ++report.confusion[truth][predicted];
  }
  for (auto& [label, cls] : report.per_class) {
    cls.accuracy = static_cast<double>(cls.correct) / static_cast<double>(cls.total);
  }
  report.accuracy = report.queries == 0
                        ? 0.0
                        : static_cast<double>(report.correct) / static_cast<double>(report.queries);
  return report;
}

nlohmann::json to_json(const Prediction& p) {
  nlohmann::json votes = nlohmann::json::object();
  for (const auto& [label, count] : p.votes) votes[std::to_string(label)] = count;
  nlohmann::json out = {
      {"label", p.label == kNullLabel ? nlohmann::json(nullptr) : nlohmann::json(p.label)},
      {"votes", votes},
      {"margin", p.margin},
      {"neighbor_ids", p.neighbor_ids},
      {"k_clamped", p.k_clamped},
  };
  return out;
}

nlohmann::json to_json(const AccuracyReport& r) {
  nlohmann::json per_class = nlohmann::json::object();
  for (const auto& [label, cls] : r.per_class) {
    per_class[std::to_string(label)] = {
        {"total", cls.total}, {"correct", cls.correct}, {"accuracy", cls.accuracy}};
  }
  nlohmann::json confusion = nlohmann::json::object();
  for (const auto& [truth, row] : r.confusion) {
    nlohmann::json cells = nlohmann::json::object();
    for (const auto& [pred, count] : row) {
      cells[pred == kNullLabel ? std::string("null") : std::to_string(pred)] = count;
    }
    confusion[std::to_string(truth)] = cells;
  }
  return {
      {"k", r.k},           {"queries", r.queries},     {"correct", r.correct},
      {"accuracy", r.accuracy}, {"k_clamped", r.k_clamped}, {"per_class", per_class},
      {"confusion", confusion}, {"class_names", r.class_names},
  };
}

std::string to_csv(const AccuracyReport& r) {
  std::ostringstream out;
  out.precision(17);
  out << "label,name,total,correct,accuracy\n";
  for (const auto& [label, cls] : r.per_class) {
    const std::string name =
        label >= 0 && label < static_cast<std::int64_t>(r.class_names.size())
            ? r.class_names[static_cast<std::size_t>(label)]
            : std::string();
    out << label << ',' << name << ',' << cls.total << ',' << cls.correct << ','
        << cls.accuracy << '\n';
  }
  return out.str();
}

}  // namespace vismem
