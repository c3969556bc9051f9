#include "vismem/kernels.hpp"

#include <omp.h>

#include <algorithm>
#include <cmath>
#include <exception>
#include <queue>

#include "vismem/error.hpp"
#include "vismem/parallel.hpp"

namespace vismem::kernels {

double dot(std::span<const float> a, std::span<const float> b) noexcept {
  // Four fixed lanes keep the summation order independent of the caller.
  double acc0 = 0.0, acc1 = 0.0, acc2 = 0.0, acc3 = 0.0;
  const std::size_t n = a.size();
  std::size_t j = 0;
  for (; j + 4 <= n; j += 4) {
    acc0 += static_cast<double>(a[j]) * b[j];
    acc1 += static_cast<double>(a[j + 1]) * b[j + 1];
    acc2 += static_cast<double>(a[j + 2]) * b[j + 2];
    acc3 += static_cast<double>(a[j + 3]) * b[j + 3];
  }
  for (; j < n; ++j) acc0 += static_cast<double>(a[j]) * b[j];
  return (acc0 + acc1) + (acc2 + acc3);
}

double norm(std::span<const float> v) noexcept { return std::sqrt(dot(v, v)); }

namespace {

inline double cosine_row(const EmbeddingStore& store, std::size_t row,
                         std::span<const float> query, double query_norm) {
  return dot(store.vector(row), query) / (store.norm(row) * query_norm);
}

void check_query(const EmbeddingStore& store, std::span<const float> query, double query_norm) {
  if (query.size() != store.dim()) {
    throw Error(Errc::invariant, "query dimension " + std::to_string(query.size()) +
                                     " does not match store dimension " +
                                     std::to_string(store.dim()));
  }
  if (!(query_norm > 0.0)) throw Error(Errc::invariant, "query vector has zero norm");
}

}  // namespace

void require_nonzero_norms(const EmbeddingStore& store) {
  for (std::size_t i = 0; i < store.size(); ++i) {
    if (store.norm(i) == 0.0) {
      throw Error(Errc::invariant, "record " + std::to_string(store.id(i)) +
                                       " has zero norm; cosine similarity is undefined");
    }
  }
}

void similarities_serial(const EmbeddingStore& store, std::span<const float> query,
                         double query_norm, std::span<double> out) {
  check_query(store, query, query_norm);
  for (std::size_t i = 0; i < store.size(); ++i) {
    out[i] = cosine_row(store, i, query, query_norm);
  }
}

void similarities_parallel(const EmbeddingStore& store, std::span<const float> query,
                           double query_norm, std::span<double> out) {
  check_query(store, query, query_norm);
  const auto n = static_cast<std::int64_t>(store.size());
#pragma omp parallel for schedule(static) num_threads(num_threads())
  for (std::int64_t i = 0; i < n; ++i) {
    out[i] = cosine_row(store, static_cast<std::size_t>(i), query, query_norm);
  }
}

std::vector<Neighbor> select_top_k(const EmbeddingStore& store,
                                   std::span<const double> similarities, std::size_t k) {
  k = std::min(k, store.size());
  // Max-heap on "ranks worse", so the top is the current k-th best.
  auto worse = [](const Neighbor& a, const Neighbor& b) { return ranks_before(a, b); };
  std::priority_queue<Neighbor, std::vector<Neighbor>, decltype(worse)> heap(worse);
  for (std::size_t i = 0; i < store.size() && k > 0; ++i) {
    Neighbor cand{store.id(i), similarities[i], i};
    if (heap.size() < k) {
      heap.push(cand);
    } else if (ranks_before(cand, heap.top())) {
      heap.pop();
      heap.push(cand);
    }
  }
  std::vector<Neighbor> out;
  out.reserve(heap.size());
  while (!heap.empty()) {
    out.push_back(heap.top());
    heap.pop();
  }
  std::reverse(out.begin(), out.end());
  return out;
}

NeighborList top_k(const EmbeddingStore& store, std::span<const float> query,
                   std::size_t k, std::int64_t query_id) {
  require_nonzero_norms(store);
  std::vector<double> sims(store.size());
  similarities_serial(store, query, norm(query), sims);
  return {query_id, select_top_k(store, sims, k)};
}

std::vector<NeighborList> batch_top_k_serial(const EmbeddingStore& store,
                                             const EmbeddingStore& queries, std::size_t k) {
  std::vector<NeighborList> out(queries.size());
  for (std::size_t q = 0; q < queries.size(); ++q) {
    out[q] = top_k(store, queries.vector(q), k, static_cast<std::int64_t>(queries.id(q)));
  }
  return out;
}

std::vector<NeighborList> batch_top_k_parallel(const EmbeddingStore& store,
                                               const EmbeddingStore& queries, std::size_t k) {
  require_nonzero_norms(store);
  std::vector<NeighborList> out(queries.size());
  const auto m = static_cast<std::int64_t>(queries.size());
  // Exceptions may not escape an OpenMP region; capture the first one.
  std::exception_ptr failure;
#pragma omp parallel num_threads(num_threads())
  {
    std::vector<double> sims(store.size());
#pragma omp for schedule(dynamic, 8)
    for (std::int64_t q = 0; q < m; ++q) {
      try {
        auto query = queries.vector(static_cast<std::size_t>(q));
        similarities_serial(store, query, norm(query), sims);
        out[q] = {static_cast<std::int64_t>(queries.id(static_cast<std::size_t>(q))),
                  select_top_k(store, sims, k)};
      } catch (...) {
#pragma omp critical(vismem_batch_failure)
        if (!failure) failure = std::current_exception();
      }
    }
  }
  if (failure) std::rethrow_exception(failure);
  return out;
}

}  // namespace vismem::kernels
