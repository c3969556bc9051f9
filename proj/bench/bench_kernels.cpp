// Serial reference kernels against their OpenMP counterparts, plus the fast
// privacy audit against the leave-one-out rebuild it replaces.
//
//   VISMEM_THREADS=4 ./vismem_bench --benchmark_filter=Similarities

#include <benchmark/benchmark.h>

#include <map>

#include "support/generators.hpp"
#include "vismem/kernels.hpp"
#include "vismem/memory.hpp"

using namespace vismem;

namespace {

const EmbeddingStore& memory_of(std::size_t n, std::uint32_t dim) {
  static std::map<std::pair<std::size_t, std::uint32_t>, EmbeddingStore> cache;
  auto it = cache.find({n, dim});
  if (it == cache.end()) {
    testing::Rng rng(n * 31 + dim);
    it = cache.emplace(std::pair{n, dim}, testing::random_store(rng, n, dim, 10)).first;
  }
  return it->second;
}

const EmbeddingStore& queries_of(std::size_t m, std::uint32_t dim) {
  static std::map<std::pair<std::size_t, std::uint32_t>, EmbeddingStore> cache;
  auto it = cache.find({m, dim});
  if (it == cache.end()) {
    testing::Rng rng(m * 17 + dim + 1);
    it = cache.emplace(std::pair{m, dim}, testing::random_queries(rng, m, dim)).first;
  }
  return it->second;
}

template <bool Parallel>
void Similarities(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto dim = static_cast<std::uint32_t>(state.range(1));
  const EmbeddingStore& store = memory_of(n, dim);
  const EmbeddingStore& q = queries_of(1, dim);
  const auto query = q.vector(0);
  const double qn = kernels::norm(query);
  std::vector<double> out(n);
  for (auto _ : state) {
    if constexpr (Parallel) {
      kernels::similarities_parallel(store, query, qn, out);
    } else {
      kernels::similarities_serial(store, query, qn, out);
    }
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n));
}

template <bool Parallel>
void BatchTopK(benchmark::State& state) {
  const EmbeddingStore& store = memory_of(static_cast<std::size_t>(state.range(0)), 64);
  const EmbeddingStore& queries = queries_of(static_cast<std::size_t>(state.range(1)), 64);
  for (auto _ : state) {
    auto lists = Parallel ? kernels::batch_top_k_parallel(store, queries, 10)
                          : kernels::batch_top_k_serial(store, queries, 10);
    benchmark::DoNotOptimize(lists.data());
  }
  state.SetItemsProcessed(state.iterations() * state.range(1));
}

template <bool Fast>
void Audit(benchmark::State& state) {
  const MemoryHandle memory(memory_of(static_cast<std::size_t>(state.range(0)), 32));
  const EmbeddingStore& queries = queries_of(static_cast<std::size_t>(state.range(1)), 32);
  for (auto _ : state) {
    auto report = Fast ? audit_privacy_fast(memory, queries, 10) : audit_privacy_naive(memory, queries, 10);
    benchmark::DoNotOptimize(report.fraction_non_private);
  }
}

}  // namespace

BENCHMARK(Similarities<false>)->Name("Similarities/serial")->Args({100000, 64})->Args({100000, 384});
BENCHMARK(Similarities<true>)->Name("Similarities/parallel")->Args({100000, 64})->Args({100000, 384});
BENCHMARK(BatchTopK<false>)->Name("BatchTopK/serial")->Args({20000, 256});
BENCHMARK(BatchTopK<true>)->Name("BatchTopK/parallel")->Args({20000, 256});
BENCHMARK(Audit<true>)->Name("Audit/fast")->Args({500, 200})->Unit(benchmark::kMillisecond);
BENCHMARK(Audit<false>)->Name("Audit/naive")->Args({500, 200})->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
