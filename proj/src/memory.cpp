#include "vismem/memory.hpp"

#include <omp.h>

#include <algorithm>
#include <cmath>
#include <exception>
#include <sstream>

#include "vismem/error.hpp"
#include "vismem/kernels.hpp"
#include "vismem/knn.hpp"
#include "vismem/parallel.hpp"

namespace vismem {

namespace {

EmbeddingStore empty_like(const EmbeddingStore& store) {
  EmbeddingStore out(store.dim());
  out.set_class_names(store.class_names());
  out.set_metadata(store.metadata());
  return out;
}

void check_auditable(const EmbeddingStore& memory, const EmbeddingStore& queries,
                     std::size_t k) {
  if (memory.empty()) throw Error(Errc::invariant, "cannot audit an empty memory");
  if (queries.empty()) throw Error(Errc::usage, "privacy audit needs at least one query");
  if (k == 0) throw Error(Errc::usage, "k must be positive");
  if (queries.dim() != memory.dim()) {
    throw Error(Errc::invariant, "query dimension does not match memory dimension");
  }
  if (!memory.all_labeled()) throw Error(Errc::invariant, "privacy audit needs a fully labeled memory");
  kernels::require_nonzero_norms(memory);
}

void finish(PrivacyAuditReport& report) {
  for (auto& [id, queries] : report.affected) {
    std::sort(queries.begin(), queries.end());
    report.non_private_ids.insert(id);
  }
  report.fraction_non_private = static_cast<double>(report.non_private_ids.size()) /
                                static_cast<double>(report.memory_size);
}

}  // namespace

MemoryHandle remove_records(const MemoryHandle& memory, const std::set<std::uint64_t>& ids) {
  const EmbeddingStore& store = memory.store();
  std::vector<std::uint64_t> missing;
  for (auto id : ids) {
    if (!store.find(id)) missing.push_back(id);
  }
  if (!missing.empty()) {
    std::string list;
    for (auto id : missing) list += (list.empty() ? "" : ",") + std::to_string(id);
    throw Error(Errc::invariant, "unknown record ids: " + list);
  }
  if (store.dim() == 0) return MemoryHandle(store, memory.generation() + 1);

  EmbeddingStore out = empty_like(store);
  out.reserve(store.size() - ids.size());
  for (std::size_t i = 0; i < store.size(); ++i) {
    if (!ids.contains(store.id(i))) out.append(store.id(i), store.vector(i), store.label(i));
  }
  out.set_normalized(store.normalized());
  return MemoryHandle(std::move(out), memory.generation() + 1);
}

MemoryHandle add_records(const MemoryHandle& memory, std::span<const EmbeddingRecord> records) {
  const EmbeddingStore& store = memory.store();
  const std::uint32_t dim =
      store.dim() != 0 ? store.dim()
                       : (records.empty() ? 0 : static_cast<std::uint32_t>(records[0].vector.size()));
  if (dim == 0) return MemoryHandle(store, memory.generation() + 1);

  std::vector<const EmbeddingRecord*> incoming;
  incoming.reserve(records.size());
  for (const auto& r : records) {
    if (r.vector.size() != dim) {
      throw Error(Errc::invariant, "record " + std::to_string(r.id) + " has dimension " +
                                       std::to_string(r.vector.size()) + ", memory expects " +
                                       std::to_string(dim));
    }
    if (store.find(r.id)) {
      throw Error(Errc::invariant, "duplicate record id " + std::to_string(r.id));
    }
    incoming.push_back(&r);
  }
  std::sort(incoming.begin(), incoming.end(),
            [](const EmbeddingRecord* a, const EmbeddingRecord* b) { return a->id < b->id; });
  for (std::size_t i = 1; i < incoming.size(); ++i) {
    if (incoming[i]->id == incoming[i - 1]->id) {
      throw Error(Errc::invariant, "duplicate record id " + std::to_string(incoming[i]->id));
    }
  }

  EmbeddingStore out(dim);
  if (store.dim() != 0) {
    out.set_class_names(store.class_names());
    out.set_metadata(store.metadata());
  }
  out.reserve(store.size() + incoming.size());
  bool unit = store.dim() == 0 || store.normalized();
  std::size_t i = 0, j = 0;
  while (i < store.size() || j < incoming.size()) {
    if (j == incoming.size() || (i < store.size() && store.id(i) < incoming[j]->id)) {
      out.append(store.id(i), store.vector(i), store.label(i));
      ++i;
    } else {
      out.append(*incoming[j]);
      unit = unit && std::abs(out.norm(out.size() - 1) - 1.0) <= 1e-5;
      ++j;
    }
  }
  if (store.normalized() && unit) out.set_normalized(true);
  return MemoryHandle(std::move(out), memory.generation() + 1);
}

MemoryHandle add_records(const MemoryHandle& memory, const EmbeddingStore& records) {
  std::vector<EmbeddingRecord> batch;
  batch.reserve(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) batch.push_back(records.record(i));
  return add_records(memory, batch);
}

PrivacyAuditReport audit_privacy_naive(const MemoryHandle& memory,
                                       const EmbeddingStore& queries, std::size_t k) {
  const EmbeddingStore& store = memory.store();
  check_auditable(store, queries, k);

  std::vector<std::int64_t> baseline(queries.size());
  for (std::size_t q = 0; q < queries.size(); ++q) {
    baseline[q] = majority_vote(store, kernels::top_k(store, queries.vector(q), k).entries).label;
  }

  std::vector<std::vector<std::int64_t>> flipped(store.size());
  const auto n = static_cast<std::int64_t>(store.size());
  std::exception_ptr failure;
#pragma omp parallel for schedule(dynamic) num_threads(num_threads())
  for (std::int64_t x = 0; x < n; ++x) {
    try {
      const MemoryHandle without = remove_records(memory, {store.id(static_cast<std::size_t>(x))});
      const EmbeddingStore& reduced = without.store();
      for (std::size_t q = 0; q < queries.size(); ++q) {
        std::int64_t label = kNullLabel;
        if (!reduced.empty()) {
          label = majority_vote(reduced, kernels::top_k(reduced, queries.vector(q), k).entries).label;
        }
        if (label != baseline[q]) flipped[x].push_back(static_cast<std::int64_t>(queries.id(q)));
      }
    } catch (...) {
#pragma omp critical(vismem_audit_failure)
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);

  PrivacyAuditReport report;
  report.k = k;
  report.memory_size = store.size();
  for (std::size_t x = 0; x < store.size(); ++x) {
    if (!flipped[x].empty()) report.affected[store.id(x)] = std::move(flipped[x]);
  }
  finish(report);
  return report;
}

PrivacyAuditReport audit_privacy_fast(const MemoryHandle& memory,
                                      const EmbeddingStore& queries, std::size_t k) {
  const EmbeddingStore& store = memory.store();
  check_auditable(store, queries, k);

  // Up to k+1 entries: the top-k plus the record that moves up on a removal.
  const auto lists = kernels::batch_top_k_parallel(store, queries, k + 1);
  const std::size_t used = std::min(k, store.size());

  std::vector<std::vector<std::uint64_t>> flips_by_query(queries.size());
  const auto m = static_cast<std::int64_t>(queries.size());
  std::exception_ptr failure;
#pragma omp parallel num_threads(num_threads())
  {
    std::vector<Neighbor> reduced;
#pragma omp for schedule(dynamic, 8)
    for (std::int64_t q = 0; q < m; ++q) {
      try {
        const auto& entries = lists[q].entries;
        const std::int64_t base =
            majority_vote(store, std::span(entries).first(used)).label;
        for (std::size_t r = 0; r < used; ++r) {
          reduced.assign(entries.begin(), entries.end());
          reduced.erase(reduced.begin() + static_cast<std::ptrdiff_t>(r));
          if (majority_vote(store, reduced).label != base) {
            flips_by_query[q].push_back(entries[r].id);
          }
        }
      } catch (...) {
#pragma omp critical(vismem_audit_failure)
        if (!failure) failure = std::current_exception();
      }
    }
  }
  if (failure) std::rethrow_exception(failure);

  PrivacyAuditReport report;
  report.k = k;
  report.memory_size = store.size();
  for (std::size_t q = 0; q < queries.size(); ++q) {
    for (auto id : flips_by_query[q]) {
      report.affected[id].push_back(static_cast<std::int64_t>(queries.id(q)));
    }
  }
  finish(report);
  return report;
}

nlohmann::json to_json(const PrivacyAuditReport& report) {
  nlohmann::json affected = nlohmann::json::object();
  for (const auto& [id, queries] : report.affected) affected[std::to_string(id)] = queries;
  return {
      {"k", report.k},
      {"memory_size", report.memory_size},
      {"fraction_non_private", report.fraction_non_private},
      {"non_private_ids", report.non_private_ids},
      {"affected", affected},
  };
}

std::vector<CurvePoint> privacy_accuracy_curve(std::span<const NamedMemory> memories,
                                               const EmbeddingStore& queries, std::size_t k) {
  std::vector<CurvePoint> points;
  points.reserve(memories.size());
  for (const auto& m : memories) {
    const auto accuracy = evaluate_classification(m.memory.store(), queries, k);
    const auto audit = audit_privacy_fast(m.memory, queries, k);
    points.push_back({m.name, accuracy.accuracy, audit.fraction_non_private});
  }
  return points;
}

std::string curve_to_csv(std::span<const CurvePoint> points) {
  std::ostringstream out;
  out.precision(17);
  out << "memory,accuracy,fraction_non_private\n";
  for (const auto& p : points) {
    out << p.memory << ',' << p.accuracy << ',' << p.fraction_non_private << '\n';
  }
  return out.str();
}

}  // namespace vismem
