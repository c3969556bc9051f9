#pragma once

// Lloyd's K-Means with k-means++ seeding, shared by patch segmentation and the
// RGB masks of the procedural compositor.

#include <cstdint>
#include <span>
#include <vector>

namespace vismem {

struct KMeansResult {
  std::size_t k = 0;       // clusters actually used
  bool reduced_k = false;  // fewer distinct points than requested clusters
  std::size_t dim = 0;
  std::vector<std::uint32_t> assignment;
  std::vector<double> centroids;        // k x dim, row-major
  std::vector<double> inertia_history;  // after every assignment step
  double inertia = 0.0;
  std::size_t iterations = 0;
  bool converged = false;
};

// k-means++ seeding from `seed`. Returns at most k centroids; fewer when the
// data has fewer than k distinct points.
std::vector<double> kmeans_plus_plus(std::span<const float> points, std::size_t dim,
                                     std::size_t k, std::uint64_t seed);

// Lloyd iterations from the given centroids. The first assignment breaks
// distance ties toward the lower cluster index; later steps move a point only
// to a strictly closer centroid. Empty clusters are re-seeded from the point
// farthest from its centroid.
KMeansResult lloyd(std::span<const float> points, std::size_t dim,
                   std::vector<double> centroids, std::size_t max_iters);

// Seeding plus Lloyd. Throws when k == 0 or k exceeds the number of points.
KMeansResult kmeans(std::span<const float> points, std::size_t dim, std::size_t k,
                    std::uint64_t seed, std::size_t max_iters = 100);

// Sum of squared distances of points to their assigned centroids.
double kmeans_inertia(std::span<const float> points, std::size_t dim,
                      std::span<const std::uint32_t> assignment,
                      std::span<const double> centroids);

}  // namespace vismem
