#pragma once

// Learning and unlearning by editing the visual memory, and exact
// leave-one-out privacy auditing of the deterministic KNN classifier.
//
// A record x is private (epsilon = 0) when removing it leaves every query
// prediction unchanged; otherwise it is non-private and the queries whose
// label flips are listed in `affected`.

#include <cstdint>
#include <map>
#include <memory>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vismem/store.hpp"

namespace vismem {

// Immutable snapshot of a memory. Mutations return a new handle with a higher
// generation; the old snapshot stays valid for concurrent readers.
class MemoryHandle {
 public:
  MemoryHandle() : MemoryHandle(EmbeddingStore{}) {}
  explicit MemoryHandle(EmbeddingStore store, std::uint64_t generation = 0)
      : store_(std::make_shared<const EmbeddingStore>(std::move(store))),
        generation_(generation) {}

  const EmbeddingStore& store() const noexcept { return *store_; }
  std::uint64_t generation() const noexcept { return generation_; }

 private:
  std::shared_ptr<const EmbeddingStore> store_;
  std::uint64_t generation_ = 0;
};

// Removes exactly `ids`. Unknown ids are an error listing all of them and
// nothing is removed.
MemoryHandle remove_records(const MemoryHandle& memory, const std::set<std::uint64_t>& ids);

// Inserts records (any order) keeping ids sorted. Duplicate ids, within the
// batch or against the memory, are an error. The normalized flag survives only
// if every added vector is unit norm.
MemoryHandle add_records(const MemoryHandle& memory, std::span<const EmbeddingRecord> records);
MemoryHandle add_records(const MemoryHandle& memory, const EmbeddingStore& records);

struct PrivacyAuditReport {
  std::size_t k = 0;
  std::size_t memory_size = 0;
  std::set<std::uint64_t> non_private_ids;
  double fraction_non_private = 0.0;
  std::map<std::uint64_t, std::vector<std::int64_t>> affected;  // record id -> query ids

  friend bool operator==(const PrivacyAuditReport&, const PrivacyAuditReport&) = default;
};

// Ground truth: rebuild the memory without each record in turn and
// reclassify every query. O(N * M) classifications.
PrivacyAuditReport audit_privacy_naive(const MemoryHandle& memory,
                                       const EmbeddingStore& queries, std::size_t k);

// Same report from one top-(k+1) search per query: only a record inside a
// query's top-k can flip it, and without it the neighbor set is the top-(k+1)
// list minus that record.
PrivacyAuditReport audit_privacy_fast(const MemoryHandle& memory,
                                      const EmbeddingStore& queries, std::size_t k);

nlohmann::json to_json(const PrivacyAuditReport& report);

struct NamedMemory {
  std::string name;
  MemoryHandle memory;
};

struct CurvePoint {
  std::string memory;
  double accuracy = 0.0;
  double fraction_non_private = 0.0;
};

std::vector<CurvePoint> privacy_accuracy_curve(std::span<const NamedMemory> memories,
                                               const EmbeddingStore& queries, std::size_t k);

// "memory,accuracy,fraction_non_private" with one row per point.
std::string curve_to_csv(std::span<const CurvePoint> points);

}  // namespace vismem
