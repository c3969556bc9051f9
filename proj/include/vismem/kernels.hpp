#pragma once

// Exhaustive cosine-similarity scan and top-k selection.
//
// Every kernel exists twice: a `*_serial` reference kept for testing and
// benchmarking, and a `*_parallel` OpenMP version. Both evaluate each
// similarity with the same arithmetic (double accumulation in a fixed order),
// so their outputs are bit-identical for any thread count.

#include <cstdint>
#include <span>
#include <vector>

#include "vismem/store.hpp"

namespace vismem {

struct Neighbor {
  std::uint64_t id = 0;
  double similarity = 0.0;
  std::size_t row = 0;  // position in the searched store

  friend bool operator==(const Neighbor&, const Neighbor&) = default;
};

// Total order on search results: similarity descending, then id ascending.
inline bool ranks_before(const Neighbor& a, const Neighbor& b) noexcept {
  if (a.similarity != b.similarity) return a.similarity > b.similarity;
  return a.id < b.id;
}

struct NeighborList {
  std::int64_t query_id = -1;
  std::vector<Neighbor> entries;

  friend bool operator==(const NeighborList&, const NeighborList&) = default;
};

namespace kernels {

double dot(std::span<const float> a, std::span<const float> b) noexcept;
double norm(std::span<const float> v) noexcept;

// Cosine similarity of `query` (with precomputed norm) against every record.
void similarities_serial(const EmbeddingStore& store, std::span<const float> query,
                         double query_norm, std::span<double> out);
void similarities_parallel(const EmbeddingStore& store, std::span<const float> query,
                           double query_norm, std::span<double> out);

// Top-k under `ranks_before` from a full similarity row; k is clamped to the
// store size.
std::vector<Neighbor> select_top_k(const EmbeddingStore& store,
                                   std::span<const double> similarities, std::size_t k);

// One query: scan plus selection.
NeighborList top_k(const EmbeddingStore& store, std::span<const float> query,
                   std::size_t k, std::int64_t query_id = -1);

// Each row of `queries` searched against `store`; query ids taken from `queries`.
std::vector<NeighborList> batch_top_k_serial(const EmbeddingStore& store,
                                             const EmbeddingStore& queries, std::size_t k);
std::vector<NeighborList> batch_top_k_parallel(const EmbeddingStore& store,
                                               const EmbeddingStore& queries, std::size_t k);

// Throws if any record has zero norm (cosine undefined).
void require_nonzero_norms(const EmbeddingStore& store);

}  // namespace kernels
}  // namespace vismem
