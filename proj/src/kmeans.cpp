#include "vismem/kmeans.hpp"

#include <algorithm>
#include <limits>

#include "vismem/error.hpp"
#include "vismem/random.hpp"

namespace vismem {

namespace {

double sq_dist(std::span<const float> p, const double* c, std::size_t dim) {
  double s = 0.0;
  for (std::size_t j = 0; j < dim; ++j) {
    const double d = static_cast<double>(p[j]) - c[j];
    s += d * d;
  }
  return s;
}

std::span<const float> point(std::span<const float> points, std::size_t dim, std::size_t i) {
  return points.subspan(i * dim, dim);
}

// Returns true when any assignment changed.
bool assign(std::span<const float> points, std::size_t dim, const std::vector<double>& centroids,
            std::size_t k, std::vector<std::uint32_t>& assignment, bool initial) {
  bool changed = false;
  const std::size_t n = assignment.size();
  for (std::size_t i = 0; i < n; ++i) {
    const auto p = point(points, dim, i);
    std::uint32_t best = initial ? 0 : assignment[i];
    double best_d = sq_dist(p, centroids.data() + best * dim, dim);
    for (std::uint32_t c = 0; c < k; ++c) {
      const double d = sq_dist(p, centroids.data() + c * dim, dim);
      if (d < best_d) {
        best_d = d;
        best = c;
      }
    }
    if (initial || best != assignment[i]) changed = true;
    assignment[i] = best;
  }
  return changed;
}

}  // namespace

double kmeans_inertia(std::span<const float> points, std::size_t dim,
                      std::span<const std::uint32_t> assignment,
                      std::span<const double> centroids) {
  double total = 0.0;
  for (std::size_t i = 0; i < assignment.size(); ++i) {
    total += sq_dist(point(points, dim, i), centroids.data() + assignment[i] * dim, dim);
  }
  return total;
}

std::vector<double> kmeans_plus_plus(std::span<const float> points, std::size_t dim,
                                     std::size_t k, std::uint64_t seed) {
  const std::size_t n = dim == 0 ? 0 : points.size() / dim;
  if (n == 0 || k == 0) throw Error(Errc::usage, "k-means++ needs points and k >= 1");
  Engine rng(seed);
  std::vector<double> centroids;
  centroids.reserve(k * dim);
  auto add_center = [&](std::size_t i) {
    for (float x : point(points, dim, i)) centroids.push_back(x);
  };
  add_center(uniform_index(rng, n));

  std::vector<double> d2(n);
  for (std::size_t i = 0; i < n; ++i) d2[i] = sq_dist(point(points, dim, i), centroids.data(), dim);
  while (centroids.size() / dim < k) {
    double total = 0.0;
    for (double d : d2) total += d;
    if (!(total > 0.0)) break;  // every point already coincides with a center
    const double target = unit_double(rng) * total;
    double acc = 0.0;
    std::size_t pick = n;
    for (std::size_t i = 0; i < n; ++i) {
      if (d2[i] <= 0.0) continue;
      acc += d2[i];
      pick = i;
      if (acc > target) break;
    }
    add_center(pick);
    const double* c = centroids.data() + centroids.size() - dim;
    for (std::size_t i = 0; i < n; ++i) {
      d2[i] = std::min(d2[i], sq_dist(point(points, dim, i), c, dim));
    }
  }
  return centroids;
}

KMeansResult lloyd(std::span<const float> points, std::size_t dim,
                   std::vector<double> centroids, std::size_t max_iters) {
  if (dim == 0 || points.size() % dim != 0 || centroids.empty() || centroids.size() % dim != 0) {
    throw Error(Errc::usage, "lloyd: inconsistent point/centroid shapes");
  }
  const std::size_t n = points.size() / dim;
  const std::size_t k = centroids.size() / dim;
  KMeansResult r;
  r.k = k;
  r.dim = dim;
  r.assignment.assign(n, 0);
  assign(points, dim, centroids, k, r.assignment, /*initial=*/true);
  r.inertia_history.push_back(kmeans_inertia(points, dim, r.assignment, centroids));

  std::vector<double> sums(k * dim);
  std::vector<std::size_t> counts(k);
  for (std::size_t it = 0; it < max_iters; ++it) {
    std::fill(sums.begin(), sums.end(), 0.0);
    std::fill(counts.begin(), counts.end(), 0);
    for (std::size_t i = 0; i < n; ++i) {
      const auto c = r.assignment[i];
      ++counts[c];
      const auto p = point(points, dim, i);
      for (std::size_t j = 0; j < dim; ++j) sums[c * dim + j] += p[j];
    }
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] == 0) continue;
      for (std::size_t j = 0; j < dim; ++j) {
        centroids[c * dim + j] = sums[c * dim + j] / static_cast<double>(counts[c]);
      }
    }
    bool reseeded = false;
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] != 0) continue;
      std::size_t far = n;
      double far_d = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double d = sq_dist(point(points, dim, i), centroids.data() + r.assignment[i] * dim, dim);
        if (d > far_d) {
          far_d = d;
          far = i;
        }
      }
      if (far == n) break;  // every point sits on its centroid
      const auto p = point(points, dim, far);
      for (std::size_t j = 0; j < dim; ++j) centroids[c * dim + j] = p[j];
      --counts[r.assignment[far]];
      r.assignment[far] = static_cast<std::uint32_t>(c);
      counts[c] = 1;
      reseeded = true;
    }
    ++r.iterations;
    const bool changed = assign(points, dim, centroids, k, r.assignment, /*initial=*/false);
    r.inertia_history.push_back(kmeans_inertia(points, dim, r.assignment, centroids));
    if (!changed && !reseeded) {
      r.converged = true;
      break;
    }
  }
  r.inertia = r.inertia_history.back();
  r.centroids = std::move(centroids);
  return r;
}

KMeansResult kmeans(std::span<const float> points, std::size_t dim, std::size_t k,
                    std::uint64_t seed, std::size_t max_iters) {
  if (dim == 0) throw Error(Errc::usage, "k-means needs dim >= 1");
  const std::size_t n = points.size() / dim;
  if (k == 0) throw Error(Errc::usage, "k-means needs k >= 1");
  if (k > n) {
    throw Error(Errc::usage, "k-means cluster count " + std::to_string(k) + " exceeds " +
                                 std::to_string(n) + " points");
  }
  auto init = kmeans_plus_plus(points, dim, k, seed);
  KMeansResult r = lloyd(points, dim, std::move(init), max_iters);
  r.reduced_k = r.k < k;
  return r;
}

}  // namespace vismem
