// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fail.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include "support/generators.hpp"
#include "support/oracles.hpp"
#include "support/temp_dir.hpp"
#include "vismem/file_util.hpp"
#include "vismem/image_io.hpp"
#include "vismem/knn.hpp"
#include "vismem/memory.hpp"
#include "vismem/procgen.hpp"
#include "vismem/random.hpp"
#include "vismem/segmentation.hpp"
#include "vismem/stats.hpp"

using namespace vismem;
using vismem::testing::Rng;
using Clock = std::chrono::steady_clock;

namespace {

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
  bool pass = true;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// ------------------------------------------------------------------ knn

Outcome knn_exactness() {
  const auto t0 = Clock::now();
  Rng rng(20240601);
  std::uniform_int_distribution<std::size_t> n(1, 2000), k(1, 25), m(1, 10);
  std::uniform_int_distribution<std::uint32_t> d(1, 64);
  std::size_t queries = 0, mismatches = 0;
  for (int trial = 0; trial < 100; ++trial) {
    // Every fifth instance draws from a small vector pool so ties are common.
    const auto dim = d(rng);
    const auto store = trial % 5 == 4 ? testing::tied_store(rng, n(rng), dim, 7, 4)
                                      : testing::random_store(rng, n(rng), dim);
    const auto q = trial % 5 == 4 ? testing::queries_from(rng, store, m(rng))
                                  : testing::random_queries(rng, m(rng), dim);
    const std::size_t kk = k(rng);
    const auto batch = knn_search_batch(store, q, kk);
    for (std::size_t i = 0; i < q.size(); ++i) {
      ++queries;
      const auto got = knn_search(store, q.vector(i), kk);
      const auto want = testing::oracle_knn(store, testing::row(q, i), kk);
      bool same = got.entries.size() == want.size() && batch[i].entries == got.entries;
      for (std::size_t r = 0; same && r < want.size(); ++r) same = got.entries[r].id == want[r].id;
      mismatches += !same;
    }
  }
  const double secs = seconds_since(t0);
  return {mismatches == 0 && secs < 10.0,
          fmt("100 instances, %zu queries, %zu mismatches, %.2f s (limit 10 s)", queries,
              mismatches, secs)};
}

// ------------------------------------------------------------ unlearning

Outcome unlearning_exactness() {
  Rng rng(77);
  std::uniform_int_distribution<std::size_t> n(1, 400), k(1, 25);
  std::uniform_int_distribution<std::uint32_t> d(1, 16);
  std::uniform_real_distribution<double> frac(0.0, 0.6);
  std::size_t disagreements = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const auto store = trial % 4 == 3 ? testing::tied_store(rng, n(rng), d(rng), 5, 3)
                                      : testing::random_store(rng, n(rng), d(rng), 4);
    std::bernoulli_distribution take(frac(rng));
    std::set<std::uint64_t> removed;
    for (auto id : store.ids())
      if (take(rng)) removed.insert(id);
    if (removed.size() == store.size()) removed.erase(removed.begin());

    const MemoryHandle edited = remove_records(MemoryHandle(store), removed);
    const auto rebuilt = testing::rebuild_without(store, [&](auto id) { return removed.count(id) > 0; });
    const auto query = testing::random_queries(rng, 1, store.dim());
    const std::size_t kk = k(rng);
    const auto a = classify(edited.store(), query.vector(0), kk);
    const auto b = classify(rebuilt, query.vector(0), kk);
    disagreements += a.label != b.label || a.neighbor_ids != b.neighbor_ids;
  }
  return {disagreements == 0, fmt("200 triples, %zu disagreements", disagreements)};
}

// ---------------------------------------------------------------- audit

Outcome audit_equivalence() {
  Rng rng(4242);
  std::uniform_int_distribution<std::size_t> n(30, 500), m(1, 200);
  std::uniform_int_distribution<std::uint32_t> d(2, 32);
  std::uniform_int_distribution<std::int64_t> classes(2, 6);
  const std::size_t ks[] = {1, 3, 10, 25};
  std::size_t differ = 0, instances = 0;
  for (int trial = 0; trial < 60; ++trial) {
    const bool tie = trial >= 50;
    const MemoryHandle mem(tie ? testing::tied_store(rng, n(rng), 3, 8, classes(rng))
                               : testing::random_store(rng, n(rng), d(rng), classes(rng)));
    const auto q = tie ? testing::queries_from(rng, mem.store(), m(rng))
                       : testing::random_queries(rng, m(rng), mem.store().dim());
    const std::size_t k = ks[trial % 4];
    ++instances;
    differ += !(audit_privacy_fast(mem, q, k) == audit_privacy_naive(mem, q, k));
  }

  const MemoryHandle mem(testing::random_store(rng, 500, 32, 5));
  const auto q = testing::random_queries(rng, 200, 32);
  double fast = 1e300;
  for (int rep = 0; rep < 5; ++rep) {
    const auto t0 = Clock::now();
    (void)audit_privacy_fast(mem, q, 10);
    fast = std::min(fast, seconds_since(t0));
  }
  const auto t0 = Clock::now();
  (void)audit_privacy_naive(mem, q, 10);
  const double naive = seconds_since(t0);
  const double speedup = naive / fast;
  return {differ == 0 && speedup >= 20.0,
          fmt("%zu instances (10 tie-heavy), %zu differ; speedup %.1fx at N=500 M=200 k=10 "
              "(fast %.2f ms, naive %.0f ms, need 20x)",
              instances, differ, speedup, fast * 1e3, naive * 1e3)};
}

// ----------------------------------------------------------- statistics

Outcome statistics_reproduction() {
  const double se1 = proportion_se(0.8331, 1720), se2 = proportion_se(0.8244, 1720);
  const auto z = two_proportion_ztest(0.8331, 1720, 0.8244, 1720);
  const bool pass = std::abs(se1 - 0.0090) <= 1e-4 && std::abs(se2 - 0.0092) <= 1e-4 &&
                    !z.significant_at_5pct;
  return {pass, fmt("se %.5f and %.5f, z = %.3f (%s at 5%%)", se1, se2, z.z,
                    z.significant_at_5pct ? "significant" : "not significant")};
}

// ------------------------------------------------------------------- r2

Outcome r2_oracle() {
  Rng rng(555);
  std::uniform_int_distribution<std::uint32_t> side(4, 48), chans(1, 8);
  std::uniform_int_distribution<int> ncls(2, 5);
  std::normal_distribution<double> g;
  double worst_oracle = 0, worst_affine = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const auto rows = side(rng), cols = side(rng), c = chans(rng);
    const int classes = ncls(rng);
    std::uniform_int_distribution<int> l(-1, classes - 1);
    LabelMask mask(rows, cols);
    for (auto& x : mask.labels) x = l(rng);
    mask.labels[0] = 0;
    mask.labels[1] = 1;
    std::vector<double> v(std::size_t{rows} * cols * c);
    for (auto& x : v) x = g(rng);
    const auto r = r2_score(FeatureGrid{rows, cols, c, v}, mask);
    worst_oracle = std::max(
        worst_oracle, std::abs(r.r2_raw - static_cast<double>(testing::oracle_r2(v, c, mask.labels))));

    std::vector<double> a(c * c), b(c), mixed(v.size());
    for (std::uint32_t i = 0; i < c; ++i) {
      b[i] = 3.0 * g(rng);
      for (std::uint32_t j = 0; j < c; ++j) a[i * c + j] = (i == j ? 2.0 : 0.0) + 0.3 * g(rng);
    }
    for (std::size_t cell = 0; cell < std::size_t{rows} * cols; ++cell)
      for (std::uint32_t j = 0; j < c; ++j) {
        double s = b[j];
        for (std::uint32_t i = 0; i < c; ++i) s += v[cell * c + i] * a[i * c + j];
        mixed[cell * c + j] = s;
      }
    worst_affine = std::max(
        worst_affine, std::abs(r2_score(FeatureGrid{rows, cols, c, mixed}, mask).r2_raw - r.r2_raw));
  }

  // One-hot features fit exactly; constant features explain nothing.
  LabelMask mask(6, 9);
  for (std::uint32_t r = 0; r < 6; ++r)
    for (std::uint32_t c = 0; c < 9; ++c) mask.at(r, c) = static_cast<std::int32_t>((r + c) % 3);
  std::vector<double> onehot;
  for (auto l : mask.labels)
    for (int j = 0; j < 3; ++j) onehot.push_back(l == j ? 1.0 : 0.0);
  const double perfect = r2_score(FeatureGrid{6, 9, 3, onehot}, mask).r2;
  const double constant = r2_score(FeatureGrid{6, 9, 2, std::vector<double>(108, 4.25)}, mask).r2;

  const bool pass = worst_oracle <= 1e-9 && worst_affine <= 1e-7 &&
                    std::abs(perfect - 1.0) <= 1e-9 && constant == 0.0;
  return {pass, fmt("oracle max err %.2e (tol 1e-9), affine max err %.2e (tol 1e-7), "
                    "perfect fit %.12f, constant %.12f",
                    worst_oracle, worst_affine, perfect, constant)};
}

// ------------------------------------------------------------------ pca

Outcome pca_numerics() {
  Rng rng(909);
  std::normal_distribution<float> g;
  double ortho = 0, conservation = 0, recon = 0;
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 300, d = 8 + trial % 9, c = 1 + trial % 6;
    std::vector<float> pts(n * d);
    for (auto& x : pts) x = g(rng);
    // Anisotropic scales followed by a random shear so axes are not aligned.
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < d; ++j) pts[i * d + j] *= static_cast<float>(1 + j);
      for (std::size_t j = 1; j < d; ++j) pts[i * d + j] += 0.5f * pts[i * d + j - 1];
    }
    const auto m = fit_pca(pts, static_cast<std::uint32_t>(d), c);
    for (std::size_t a = 0; a < c; ++a)
      for (std::size_t b = 0; b < c; ++b) {
        double dot = 0;
        for (std::size_t j = 0; j < d; ++j) dot += m.component(a)[j] * m.component(b)[j];
        ortho = std::max(ortho, std::abs(dot - (a == b ? 1.0 : 0.0)));
      }

    const auto cov = testing::sample_covariance(pts, n, d);
    const auto eig = testing::jacobi_eigenvalues(cov);
    long double trace = 0;
    for (std::size_t j = 0; j < d; ++j) trace += cov[j][j];
    const double spectrum_sum = std::accumulate(m.spectrum.begin(), m.spectrum.end(), 0.0);
    conservation = std::max({conservation,
                             std::abs(spectrum_sum - static_cast<double>(trace)) / static_cast<double>(trace),
                             std::abs(m.total_variance - static_cast<double>(trace)) / static_cast<double>(trace)});

    // Mean squared residual after projecting onto c components equals the
    // sum of the discarded oracle eigenvalues.
    long double residual = 0;
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<double> x(d), r(d, 0.0);
      for (std::size_t j = 0; j < d; ++j) x[j] = pts[i * d + j] - m.mean[j];
      for (std::size_t a = 0; a < c; ++a) {
        double s = 0;
        for (std::size_t j = 0; j < d; ++j) s += x[j] * m.component(a)[j];
        for (std::size_t j = 0; j < d; ++j) r[j] += s * m.component(a)[j];
      }
      for (std::size_t j = 0; j < d; ++j) residual += (x[j] - r[j]) * (x[j] - r[j]);
    }
    residual /= (n - 1);
    long double discarded = 0;
    for (std::size_t i = c; i < d; ++i) discarded += eig[i];
    recon = std::max(recon, static_cast<double>(std::fabs(residual - discarded) / discarded));
  }
  return {ortho <= 1e-6 && conservation <= 1e-6 && recon <= 1e-6,
          fmt("20 fits: orthonormality %.2e, variance conservation %.2e rel, "
              "reconstruction identity %.2e rel (tol 1e-6)",
              ortho, conservation, recon)};
}

// --------------------------------------------------------------- kmeans

Outcome kmeans_criteria() {
  const TextureKind kinds[] = {TextureKind::value_noise, TextureKind::sine_grating,
                               TextureKind::voronoi, TextureKind::gradient_blend};
  std::size_t increases = 0, steps = 0;
  for (std::uint64_t i = 0; i < 100; ++i) {
    TextureParams p;
    p.kind = kinds[i % 4];
    p.width = p.height = 32;
    p.octaves = 3;
    p.shading = 0.3;
    const ProcImage img = gen_texture(p, i);
    const ClusterMask m = kmeans_rgb(img, 2 + i % 7, i);
    for (std::size_t s = 1; s < m.inertia_history.size(); ++s, ++steps)
      increases += m.inertia_history[s] > m.inertia_history[s - 1];
  }

  // Two colours scattered at random must be split exactly, for every seed.
  Engine rng(3);
  std::size_t wrong = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    ProcImage img(24, 17);
    const Rgb a{float(unit_double(rng)), float(unit_double(rng)), float(unit_double(rng))};
    const Rgb b{a[0] * 0.5f, 1.0f - a[1], 0.25f};
    std::vector<int> side(img.pixels());
    for (std::size_t i = 0; i < img.pixels(); ++i) {
      side[i] = i == 0 ? 0 : i == 1 ? 1 : static_cast<int>(uniform_index(rng, 2));
      const Rgb& c = side[i] ? b : a;
      std::copy(c.begin(), c.end(), img.pixel(i));
    }
    const ClusterMask m = kmeans_rgb(img, 2, seed);
    bool ok = m.inertia == 0.0 && m.k == 2 && m.assignment[0] != m.assignment[1];
    for (std::size_t i = 0; ok && i < img.pixels(); ++i)
      ok = m.assignment[i] == m.assignment[side[i]];
    wrong += !ok;
  }
  return {increases == 0 && wrong == 0,
          fmt("100 images, %zu Lloyd steps, %zu inertia increases; two-colour split wrong on "
              "%zu of 20 seeds",
              steps, increases, wrong)};
}

// -------------------------------------------------------------- procgen

ProcImage noise_image(std::uint32_t w, std::uint32_t h, std::uint64_t seed) {
  Engine rng(seed);
  ProcImage img(w, h);
  for (auto& v : img.data) v = static_cast<float>(unit_double(rng));
  return img;
}

Outcome procgen_determinism() {
  const auto tmp_start = Clock::now();
  testing::TempDir dir;
  PipelineConfig config;
  config.width = config.height = 64;
  const auto rows = write_dataset(config, 2024, 1000, dir.path());
  const auto manifest = read_manifest(dir.path());
  std::size_t regen_bad = manifest.size() == 1000 ? 0 : 1000;
  for (const auto& row : manifest) {
    const ProcImage img = regenerate(row);
    const std::string bytes = read_file(dir / row["file"].get<std::string>());
    regen_bad += encode_png(quantize(img)) != bytes || !(img == generate_sample(config, row["seed"]));
  }

  std::size_t mix_bad = 0;
  Engine rng(8);
  for (std::uint64_t t = 0; t < 200; ++t) {
    const ProcImage a = noise_image(13, 11, 2 * t), b = noise_image(13, 11, 2 * t + 1);
    const double lambda = unit_double(rng);
    mix_bad += mixup(a, b, {1.0, 1.0, 0}).data != a.data;
    mix_bad += mixup(a, b, {1.0, 0.0, 0}).data != b.data;
    mix_bad += mixup(a, a, {1.0, lambda, 0}).data != a.data;
  }

  std::size_t prov_bad = 0;
  for (std::uint64_t s = 0; s < 10000; ++s) {
    const ProcImage s1 = noise_image(12, 12, 3 * s), s2 = noise_image(12, 12, 3 * s + 1),
                    s3 = noise_image(12, 12, 3 * s + 2);
    const auto rule = s % 2 ? AssignmentRule::random : AssignmentRule::luminance;
    const auto r = kml_compose_detailed(s1, s2, s3, 2 + s % 5, s, rule);
    for (std::size_t i = 0; i < s1.pixels(); ++i) {
      const ProcImage& src = r.source_of_cluster[r.mask.assignment[i]] ? s3 : s2;
      if (!std::equal(r.image.pixel(i), r.image.pixel(i) + 3, src.pixel(i))) {
        ++prov_bad;
        break;
      }
    }
  }
  return {regen_bad == 0 && mix_bad == 0 && prov_bad == 0 && rows.size() == 1000,
          fmt("1000 manifest rows, %zu not bit-identical; 600 mixup identities, %zu wrong; "
              "10000 KML samples, %zu with foreign pixels (%.1f s)",
              regen_bad, mix_bad, prov_bad, seconds_since(tmp_start))};
}

// ----------------------------------------------------------- end to end

// Accuracy of the Bayes rule (argmax coordinate) for `classes` unit-variance
// Gaussians centred at s * e_i: integral of phi(z) Phi(z + s)^(classes - 1).
double bayes_accuracy(double s, int classes) {
  const auto Phi = [](double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); };
  const double lo = -12, hi = 12;
  const int steps = 24000;  // even, Simpson
  const double h = (hi - lo) / steps;
  double sum = 0;
  for (int i = 0; i <= steps; ++i) {
    const double z = lo + i * h;
    const double f = std::exp(-0.5 * z * z) / std::sqrt(2 * M_PI) * std::pow(Phi(z + s), classes - 1);
    sum += f * (i == 0 || i == steps ? 1 : i % 2 ? 4 : 2);
  }
  return sum * h / 3;
}

double separation_for(double target, int classes) {
  double lo = 0, hi = 10;
  for (int i = 0; i < 100; ++i) {
    const double mid = 0.5 * (lo + hi);
    (bayes_accuracy(mid, classes) < target ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

// Mixture samples share their noise and labels across separations so the
// curve compares like with like.
struct Mixture {
  std::vector<std::int64_t> labels;
  std::vector<float> noise;
};

Mixture draw_mixture(Rng& rng, std::size_t n, int classes) {
  std::uniform_int_distribution<std::int64_t> cls(0, classes - 1);
  std::normal_distribution<float> g;
  Mixture m{std::vector<std::int64_t>(n), std::vector<float>(n * classes)};
  for (auto& l : m.labels) l = cls(rng);
  for (auto& x : m.noise) x = g(rng);
  return m;
}

EmbeddingStore mixture_store(const Mixture& m, int classes, double s) {
  EmbeddingStore store(static_cast<std::uint32_t>(classes));
  std::vector<float> v(classes);
  for (std::size_t i = 0; i < m.labels.size(); ++i) {
    for (int j = 0; j < classes; ++j) v[j] = m.noise[i * classes + j];
    v[m.labels[i]] += static_cast<float>(s);
    store.append(i, v, m.labels[i]);
  }
  return store;
}

Outcome end_to_end(Clock::time_point suite_start) {
  constexpr int kClasses = 10;
  const double s = separation_for(0.95, kClasses);
  const double bayes = bayes_accuracy(s, kClasses);

  Rng rng(1234);
  const auto train = draw_mixture(rng, 20000, kClasses);
  const auto test = draw_mixture(rng, 4000, kClasses);
  const auto memory = mixture_store(train, kClasses, s);
  const auto queries = mixture_store(test, kClasses, s);
  const double knn = evaluate_classification(memory, queries, 25).accuracy;

  // Monte-Carlo check of the quadrature: the Bayes rule on the same queries.
  std::size_t bayes_hits = 0;
  for (std::size_t i = 0; i < queries.size(); ++i) {
    const auto v = queries.vector(i);
    bayes_hits += std::max_element(v.begin(), v.end()) - v.begin() == queries.label(i);
  }
  const double bayes_mc = static_cast<double>(bayes_hits) / queries.size();

  const double seps[] = {2.0, 2.5, 3.0, 3.42, 4.0};
  const auto curve_train = draw_mixture(rng, 5000, kClasses);
  const auto curve_test = draw_mixture(rng, 500, kClasses);
  std::vector<CurvePoint> curve;
  for (double sep : seps) {
    const NamedMemory nm{fmt("separation_%.2f", sep), MemoryHandle(mixture_store(curve_train, kClasses, sep))};
    const auto pts = privacy_accuracy_curve({&nm, 1}, mixture_store(curve_test, kClasses, sep), 10);
    curve.push_back(pts.front());
  }
  const std::string csv = curve_to_csv(curve);
  std::ofstream("privacy_accuracy_curve.csv") << csv;
  bool curve_ok = true;
  std::string fr;
  for (std::size_t i = 0; i < curve.size(); ++i) {
    const double f = curve[i].fraction_non_private;
    curve_ok &= f >= 0.0 && f <= 1.0;
    if (i > 0) curve_ok &= f < curve[i - 1].fraction_non_private;
    fr += fmt("%s%.4f", i ? " > " : "", f);
  }

  const double total = seconds_since(suite_start);
  const bool pass = std::abs(knn - bayes) <= 0.02 && curve_ok && total < 300.0;
  return {pass, fmt("separation %.5f, Bayes %.4f (Monte-Carlo %.4f), KNN %.4f (tol 0.02); "
                    "non-private fraction %s; suite %.1f s (limit 300 s)",
                    s, bayes, bayes_mc, knn, fr.c_str(), total)};
}

}  // namespace

int main() {
  const auto start = Clock::now();
  struct Criterion {
    const char* name;
    std::function<Outcome()> run;
  };
  const Criterion criteria[] = {
      {"knn-exactness", knn_exactness},
      {"unlearning-exactness", unlearning_exactness},
      {"audit-equivalence", audit_equivalence},
      {"statistics-reproduction", statistics_reproduction},
      {"r2-oracle", r2_oracle},
      {"pca-numerics", pca_numerics},
      {"kmeans", kmeans_criteria},
      {"procgen-determinism", procgen_determinism},
      {"end-to-end", [&] { return end_to_end(start); }},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    Outcome o;
    const auto t0 = Clock::now();
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("%s %-24s %s [%.1f s]\n", o.pass ? "PASS" : "FAIL", c.name, o.detail.c_str(),
                seconds_since(t0));
    std::fflush(stdout);
  }
  std::printf("%d of %zu criteria passed\n", static_cast<int>(std::size(criteria)) - failed,
              std::size(criteria));
  return failed ? 1 : 0;
}
