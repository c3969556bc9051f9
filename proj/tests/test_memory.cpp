#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>

#include "support/generators.hpp"
#include "support/oracles.hpp"
#include "vismem/error.hpp"
#include "vismem/knn.hpp"
#include "vismem/memory.hpp"

using namespace vismem;
using vismem::testing::Rng;

namespace {

std::set<std::uint64_t> random_subset(Rng& rng, const EmbeddingStore& s, double p) {
  std::bernoulli_distribution take(p);
  std::set<std::uint64_t> out;
  for (auto id : s.ids()) {
    if (take(rng)) out.insert(id);
  }
  return out;
}

std::vector<std::int64_t> labels_of(const EmbeddingStore& memory, const EmbeddingStore& queries,
                                    std::size_t k) {
  std::vector<std::int64_t> out;
  for (std::size_t i = 0; i < queries.size(); ++i) {
    out.push_back(memory.empty() ? kNullLabel : classify(memory, queries.vector(i), k).label);
  }
  return out;
}

EmbeddingStore two_points() {
  EmbeddingStore s(2);
  s.append(1, std::vector<float>{1, 0}, 0);
  s.append(2, std::vector<float>{0, 1}, 1);
  return s;
}

EmbeddingStore one_query(std::vector<float> v) {
  EmbeddingStore q(static_cast<std::uint32_t>(v.size()));
  q.append(0, v);
  return q;
}

}  // namespace

TEST_CASE("remove_records basics") {
  Rng rng(1);
  const MemoryHandle m(testing::random_store(rng, 20, 4));
  std::set<std::uint64_t> all(m.store().ids().begin(), m.store().ids().end());
  const auto emptied = remove_records(m, all);
  CHECK(emptied.store().empty());
  CHECK(emptied.store().dim() == 4);
  CHECK(emptied.generation() == m.generation() + 1);

  const auto same = remove_records(m, {});
  CHECK(same.store() == m.store());
  CHECK(same.generation() == 1);

  const auto first = m.store().id(0);
  try {
    (void)remove_records(m, {first, 999999, 888888});
    FAIL("expected error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("888888") != std::string::npos);
    CHECK(std::string(e.what()).find("999999") != std::string::npos);
  }
  CHECK(m.store().size() == 20);
}

TEST_CASE("remove then classify equals rebuild then classify") {
  Rng rng(2024);
  std::uniform_int_distribution<std::size_t> n(2, 120), k(1, 15);
  for (int trial = 0; trial < 200; ++trial) {
    const MemoryHandle m(testing::random_store(rng, n(rng), 6, 3));
    const auto q = testing::random_queries(rng, 5, 6);
    const auto removed = random_subset(rng, m.store(), 0.3);
    const auto after = remove_records(m, removed);
    const auto rebuilt =
        testing::rebuild_without(m.store(), [&](std::uint64_t id) { return removed.contains(id); });
    CHECK(after.store().size() == rebuilt.size());
    const std::size_t kk = k(rng);
    CHECK(labels_of(after.store(), q, kk) == labels_of(rebuilt, q, kk));
  }
}

TEST_CASE("add_records") {
  Rng rng(3);
  const MemoryHandle m(testing::random_store(rng, 50, 5, 3));
  const auto q = testing::random_queries(rng, 30, 5);
  const auto before = labels_of(m.store(), q, 5);

  EmbeddingStore extra(5);
  std::normal_distribution<float> g;
  for (std::uint64_t id = 1000; id < 1020; ++id) {
    extra.append(id, std::vector<float>{g(rng), g(rng), g(rng), g(rng), g(rng)}, 2);
  }
  const auto grown = add_records(m, extra);
  CHECK(grown.store().size() == 70);
  CHECK(grown.generation() == 1);
  std::set<std::uint64_t> ids(extra.ids().begin(), extra.ids().end());
  const auto back = remove_records(grown, ids);
  CHECK(back.generation() == 2);
  CHECK(labels_of(back.store(), q, 5) == before);
  CHECK(back.store() == m.store());

  SUBCASE("self-match wins at k=1") {
    EmbeddingRecord r{77777, testing::row(q, 3), 9};
    const auto with = add_records(m, std::vector{r});
    CHECK(classify(with.store(), q.vector(3), 1).label == 9);
  }
  SUBCASE("two batches equal one batch") {
    std::vector<EmbeddingRecord> all, a, b;
    for (std::size_t i = 0; i < extra.size(); ++i) {
      all.push_back(extra.record(i));
      (i % 2 ? a : b).push_back(extra.record(i));
    }
    std::reverse(all.begin(), all.end());
    const auto twice = add_records(add_records(m, a), b);
    const auto once = add_records(m, all);
    CHECK(twice.store() == once.store());
    CHECK(labels_of(twice.store(), q, 7) == labels_of(once.store(), q, 7));
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(add_records(m, std::vector{m.store().record(0)}), Error);
    EmbeddingRecord wrong{5555, {1, 2}, 0};
    CHECK_THROWS_AS(add_records(m, std::vector{wrong}), Error);
    EmbeddingRecord r1{6000, testing::row(q, 0), 0};
    CHECK_THROWS_AS(add_records(m, std::vector{r1, r1}), Error);
  }
  SUBCASE("normalized flag survives unit additions only") {
    const MemoryHandle unit(l2_normalize(m.store()));
    const auto ok = add_records(unit, l2_normalize(extra));
    CHECK(ok.store().normalized());
    const auto raw = add_records(unit, extra);
    CHECK_FALSE(raw.store().normalized());
  }
}

TEST_CASE("privacy audit worked examples") {
  SUBCASE("two records, one query") {
    const MemoryHandle m(two_points());
    const auto q = one_query({1, 0});
    for (const auto& r : {audit_privacy_naive(m, q, 1), audit_privacy_fast(m, q, 1)}) {
      CHECK(r.non_private_ids == std::set<std::uint64_t>{1});
      CHECK(r.fraction_non_private == 0.5);
      CHECK(r.affected.at(1) == std::vector<std::int64_t>{0});
    }
  }
  SUBCASE("single label memory is fully private") {
    Rng rng(8);
    const MemoryHandle m(testing::random_store(rng, 40, 3, 1));
    const auto q = testing::random_queries(rng, 20, 3);
    for (std::size_t k : {1u, 3u}) {
      CHECK(audit_privacy_naive(m, q, k).fraction_non_private == 0.0);
      CHECK(audit_privacy_fast(m, q, k).fraction_non_private == 0.0);
    }
  }
  SUBCASE("singleton memory: removal yields the null prediction") {
    EmbeddingStore s(2);
    s.append(3, std::vector<float>{1, 1}, 0);
    const MemoryHandle m(s);
    const auto q = one_query({1, 0});
    CHECK(audit_privacy_naive(m, q, 5).fraction_non_private == 1.0);
    CHECK(audit_privacy_fast(m, q, 5).fraction_non_private == 1.0);
  }
  SUBCASE("errors") {
    const MemoryHandle empty(EmbeddingStore(2));
    CHECK_THROWS_AS(audit_privacy_fast(empty, one_query({1, 0}), 1), Error);
    CHECK_THROWS_AS(audit_privacy_naive(MemoryHandle(two_points()), EmbeddingStore(2), 1), Error);
    EmbeddingStore unlabeled(2);
    unlabeled.append(1, std::vector<float>{1, 0});
    CHECK_THROWS_AS(audit_privacy_fast(MemoryHandle(unlabeled), one_query({1, 0}), 1), Error);
  }
}

TEST_CASE("fast audit equals naive audit") {
  Rng rng(31337);
  std::uniform_int_distribution<std::size_t> n(1, 300), m(1, 100);
  std::uniform_int_distribution<std::int64_t> classes(2, 5);
  const std::size_t ks[] = {1, 3, 10};
  for (int trial = 0; trial < 24; ++trial) {
    const MemoryHandle mem(testing::random_store(rng, n(rng), 4, classes(rng)));
    const auto q = testing::random_queries(rng, m(rng), 4);
    const std::size_t k = ks[trial % 3];
    const auto naive = audit_privacy_naive(mem, q, k);
    const auto fast = audit_privacy_fast(mem, q, k);
    CHECK(fast == naive);
  }
  SUBCASE("k equals memory size") {
    const MemoryHandle mem(testing::random_store(rng, 9, 3, 3));
    const auto q = testing::random_queries(rng, 40, 3);
    CHECK(audit_privacy_fast(mem, q, 9) == audit_privacy_naive(mem, q, 9));
    CHECK(audit_privacy_fast(mem, q, 20) == audit_privacy_naive(mem, q, 20));
  }
  SUBCASE("duplicate vectors straddling the k boundary") {
    for (int t = 0; t < 10; ++t) {
      const MemoryHandle mem(testing::tied_store(rng, 120, 3, 6, 3));
      const auto q = testing::queries_from(rng, mem.store(), 30);
      for (std::size_t k : {1u, 3u, 10u, 25u}) {
        CHECK(audit_privacy_fast(mem, q, k) == audit_privacy_naive(mem, q, k));
      }
    }
  }
}

TEST_CASE("k=1: non-private iff rank-1 of a query whose rank-2 has another label") {
  Rng rng(12);
  for (int t = 0; t < 20; ++t) {
    const MemoryHandle mem(testing::random_store(rng, 60, 3, 3));
    const auto q = testing::random_queries(rng, 25, 3);
    std::set<std::uint64_t> expected;
    for (std::size_t i = 0; i < q.size(); ++i) {
      const auto hits = testing::oracle_knn(mem.store(), testing::row(q, i), 2);
      const auto l0 = mem.store().label(*mem.store().find(hits[0].id));
      const auto l1 = mem.store().label(*mem.store().find(hits[1].id));
      if (l0 != l1) expected.insert(hits[0].id);
    }
    CHECK(audit_privacy_fast(mem, q, 1).non_private_ids == expected);
  }
}

TEST_CASE("report JSON and privacy-accuracy curve") {
  const MemoryHandle m(two_points());
  const auto q = one_query({1, 0});
  const auto json = to_json(audit_privacy_fast(m, q, 1));
  CHECK(json["k"] == 1);
  CHECK(json["fraction_non_private"] == 0.5);
  CHECK(json["non_private_ids"] == nlohmann::json::array({1}));
  CHECK(json["affected"]["1"] == nlohmann::json::array({0}));

  Rng rng(44);
  // Clean mixture vs the same memory with half its labels randomized.
  std::normal_distribution<float> g(0.0f, 0.5f);
  EmbeddingStore clean(4), noisy(4), queries(4);
  std::uniform_int_distribution<std::int64_t> any(0, 3);
  std::bernoulli_distribution flip(0.5);
  for (std::uint64_t i = 0; i < 800; ++i) {
    const auto label = static_cast<std::int64_t>(i % 4);
    std::vector<float> v{g(rng), g(rng), g(rng), g(rng)};
    v[label] += 2.0f;
    clean.append(i, v, label);
    noisy.append(i, v, flip(rng) ? any(rng) : label);
  }
  for (std::uint64_t i = 0; i < 200; ++i) {
    const auto label = static_cast<std::int64_t>(i % 4);
    std::vector<float> v{g(rng), g(rng), g(rng), g(rng)};
    v[label] += 2.0f;
    queries.append(i, v, label);
  }
  const std::vector<NamedMemory> memories{{"clean", MemoryHandle(clean)},
                                          {"noisy", MemoryHandle(noisy)}};
  const auto curve = privacy_accuracy_curve(memories, queries, 5);
  REQUIRE(curve.size() == 2);
  CHECK(curve[0].accuracy == evaluate_classification(clean, queries, 5).accuracy);
  CHECK(curve[0].fraction_non_private ==
        audit_privacy_fast(memories[0].memory, queries, 5).fraction_non_private);
  CHECK(curve[1].accuracy < curve[0].accuracy);
  const auto csv = curve_to_csv(curve);
  CHECK(csv.rfind("memory,accuracy,fraction_non_private\nclean,", 0) == 0);
}
