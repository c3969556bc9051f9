#pragma once

// Patch-grid segmentation analysis: PCA features, R^2 of features against
// label masks, one-shot in-context segmentation, KNN patch labeling and
// unsupervised K-Means segmentation.

#include <cstdint>
#include <map>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "vismem/kmeans.hpp"
#include "vismem/store.hpp"

namespace vismem {

inline constexpr std::int32_t kIgnoreLabel = -1;

struct LabelMask {
  std::uint32_t rows = 0;
  std::uint32_t cols = 0;
  std::vector<std::int32_t> labels;  // row-major, kIgnoreLabel = ignore

  LabelMask() = default;
  LabelMask(std::uint32_t rows, std::uint32_t cols, std::int32_t fill = kIgnoreLabel)
      : rows(rows), cols(cols), labels(static_cast<std::size_t>(rows) * cols, fill) {}

  std::size_t cells() const noexcept { return labels.size(); }
  std::int32_t& at(std::uint32_t r, std::uint32_t c) { return labels[std::size_t{r} * cols + c]; }
  std::int32_t at(std::uint32_t r, std::uint32_t c) const { return labels[std::size_t{r} * cols + c]; }

  friend bool operator==(const LabelMask&, const LabelMask&) = default;
};

enum class MaskPolicy { nearest, majority };

// Resamples a pixel-resolution mask to a patch grid. `nearest` takes the pixel
// under each cell centre; `majority` takes the most frequent non-ignore label
// in the cell's pixel block (ties to the smaller label).
LabelMask downsample_mask(const LabelMask& mask, std::uint32_t rows, std::uint32_t cols,
                          MaskPolicy policy = MaskPolicy::nearest);

// Intersection over union of the cells equal to `positive`.
double mask_iou(const LabelMask& a, const LabelMask& b, std::int32_t positive = 1);

// rows x cols x channels, row-major with channels innermost.
struct FeatureGrid {
  std::uint32_t rows = 0;
  std::uint32_t cols = 0;
  std::uint32_t channels = 0;
  std::vector<double> values;

  std::size_t cells() const noexcept { return std::size_t{rows} * cols; }
  std::span<const double> cell(std::size_t i) const {
    return {values.data() + i * channels, channels};
  }
};

struct PcaModel {
  std::uint32_t dim = 0;
  std::size_t samples = 0;
  std::vector<double> mean;                // dim
  std::vector<double> components;          // c x dim, row-major, orthonormal rows
  std::vector<double> explained_variance;  // c, non-increasing
  std::vector<double> spectrum;            // all dim eigenvalues, non-increasing
  double total_variance = 0.0;             // trace of the sample covariance

  std::size_t count() const noexcept { return explained_variance.size(); }
  std::span<const double> component(std::size_t i) const {
    return {components.data() + i * dim, dim};
  }
};

// Mean-centred PCA by eigendecomposition of the sample covariance (divisor
// n - 1). `patches` is n x dim row-major; requires n >= c + 1 and c <= dim.
// Each component's largest-magnitude entry is made positive.
PcaModel fit_pca(std::span<const float> patches, std::uint32_t dim, std::size_t c);
PcaModel fit_pca(const PatchGrid& grid, std::size_t c);
// Dataset-level fit over the patches of several grids.
PcaModel fit_pca(std::span<const PatchGrid> grids, std::size_t c);

FeatureGrid project_grid(const PcaModel& model, const PatchGrid& grid);

// First three channels, each min-max scaled to 0..255, as interleaved RGB.
std::vector<std::uint8_t> pca_rgb(const FeatureGrid& features);

struct R2Result {
  double r2 = 0.0;      // clamped to [0, 1]
  double r2_raw = 0.0;  // unclamped 1 - SSE/SST
  std::map<std::int32_t, double> per_class;
  std::size_t channels = 0;
  std::size_t cells = 0;
};

// Ordinary least squares (with intercept, minimum-norm when rank deficient)
// from the feature channels to one-hot label indicators over the non-ignore
// cells; R^2 pools SSE and SST over every indicator. Throws when fewer than two
// labels are present or shapes disagree.
R2Result r2_score(const FeatureGrid& features, const LabelMask& mask);

nlohmann::json to_json(const R2Result& result);

struct InContextResult {
  LabelMask mask;                  // 1 where similarity >= threshold, else 0
  std::vector<double> similarity;  // cosine to the normalized-average prototype
  // Same map with the prototype formed as the plain mean of prompt patches.
  std::vector<double> similarity_mean_prototype;
};

// Prototype = mean of the L2-normalized prompt patches labeled 1 in
// `prompt_mask`; every query patch is scored by cosine to it.
InContextResult in_context_segment(const PatchGrid& prompt, const LabelMask& prompt_mask,
                                   const PatchGrid& query, double threshold);

// Labels each query patch by KNN majority vote against a labeled patch memory.
LabelMask knn_segment(const PatchGrid& query, const EmbeddingStore& patch_memory, std::size_t k);

struct KMeansSegmentation {
  LabelMask mask;
  KMeansResult clustering;
};

// Requires 2 <= clusters <= cells.
KMeansSegmentation kmeans_segment(const PatchGrid& grid, std::size_t clusters,
                                  std::uint64_t seed, std::size_t max_iters = 100);

}  // namespace vismem
