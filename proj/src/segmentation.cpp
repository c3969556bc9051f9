#include "vismem/segmentation.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include "vismem/error.hpp"
#include "vismem/kernels.hpp"
#include "vismem/knn.hpp"

namespace vismem {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

void check_mask(const LabelMask& mask) {
  if (mask.labels.size() != std::size_t{mask.rows} * mask.cols) {
    throw Error(Errc::invariant, "label mask size does not match its shape");
  }
}

}  // namespace

LabelMask downsample_mask(const LabelMask& mask, std::uint32_t rows, std::uint32_t cols,
                          MaskPolicy policy) {
  check_mask(mask);
  if (rows == 0 || cols == 0 || mask.rows == 0 || mask.cols == 0) {
    throw Error(Errc::usage, "cannot resample an empty mask");
  }
  LabelMask out(rows, cols);
  for (std::uint32_t r = 0; r < rows; ++r) {
    for (std::uint32_t c = 0; c < cols; ++c) {
      if (policy == MaskPolicy::nearest) {
        const auto sr = static_cast<std::uint32_t>((r + 0.5) * mask.rows / rows);
        const auto sc = static_cast<std::uint32_t>((c + 0.5) * mask.cols / cols);
        out.at(r, c) = mask.at(std::min(sr, mask.rows - 1), std::min(sc, mask.cols - 1));
        continue;
      }
      const std::uint32_t r0 = static_cast<std::uint32_t>(std::uint64_t{r} * mask.rows / rows);
      const std::uint32_t r1 = std::max<std::uint32_t>(
          r0 + 1, static_cast<std::uint32_t>(std::uint64_t{r + 1} * mask.rows / rows));
      const std::uint32_t c0 = static_cast<std::uint32_t>(std::uint64_t{c} * mask.cols / cols);
      const std::uint32_t c1 = std::max<std::uint32_t>(
          c0 + 1, static_cast<std::uint32_t>(std::uint64_t{c + 1} * mask.cols / cols));
      std::map<std::int32_t, std::size_t> counts;
      for (std::uint32_t y = r0; y < std::min(r1, mask.rows); ++y) {
        for (std::uint32_t x = c0; x < std::min(c1, mask.cols); ++x) {
          if (mask.at(y, x) != kIgnoreLabel) ++counts[mask.at(y, x)];
        }
      }
      std::int32_t best = kIgnoreLabel;
      std::size_t best_count = 0;
      for (const auto& [label, n] : counts) {
        if (n > best_count) {
          best = label;
          best_count = n;
        }
      }
      out.at(r, c) = best;
    }
  }
  return out;
}

double mask_iou(const LabelMask& a, const LabelMask& b, std::int32_t positive) {
  if (a.rows != b.rows || a.cols != b.cols) throw Error(Errc::usage, "mask shapes differ");
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < a.cells(); ++i) {
    const bool pa = a.labels[i] == positive, pb = b.labels[i] == positive;
    inter += pa && pb;
    uni += pa || pb;
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

PcaModel fit_pca(std::span<const float> patches, std::uint32_t dim, std::size_t c) {
  if (dim == 0 || patches.size() % dim != 0) throw Error(Errc::usage, "PCA input shape mismatch");
  const std::size_t n = patches.size() / dim;
  if (c == 0 || c > dim) {
    throw Error(Errc::usage, "PCA component count must be in [1, " + std::to_string(dim) + "]");
  }
  if (n < c + 1) {
    throw Error(Errc::usage, "PCA with " + std::to_string(c) + " components needs at least " +
                                 std::to_string(c + 1) + " patches, got " + std::to_string(n));
  }
  Eigen::Map<const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> raw(
      patches.data(), static_cast<Eigen::Index>(n), dim);
  const RowMatrix x = raw.cast<double>();
  const Eigen::RowVectorXd mean = x.colwise().mean();
  const RowMatrix centered = x.rowwise() - mean;
  const Eigen::MatrixXd cov =
      (centered.transpose() * centered) / static_cast<double>(n - 1);

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
  if (solver.info() != Eigen::Success) throw Error(Errc::invariant, "PCA eigendecomposition failed");

  PcaModel m;
  m.dim = dim;
  m.samples = n;
  m.mean.assign(mean.data(), mean.data() + dim);
  m.total_variance = cov.trace();
  // Eigen orders eigenvalues ascending.
  for (Eigen::Index i = dim - 1; i >= 0; --i) {
    m.spectrum.push_back(std::max(0.0, solver.eigenvalues()(i)));
  }
  m.components.reserve(c * dim);
  for (std::size_t i = 0; i < c; ++i) {
    Eigen::VectorXd v = solver.eigenvectors().col(static_cast<Eigen::Index>(dim - 1 - i));
    Eigen::Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v(arg) < 0) v = -v;
    m.components.insert(m.components.end(), v.data(), v.data() + dim);
    m.explained_variance.push_back(m.spectrum[i]);
  }
  return m;
}

PcaModel fit_pca(const PatchGrid& grid, std::size_t c) {
  return fit_pca(grid.data(), grid.dim(), c);
}

PcaModel fit_pca(std::span<const PatchGrid> grids, std::size_t c) {
  if (grids.empty()) throw Error(Errc::usage, "PCA needs at least one grid");
  std::vector<float> all;
  for (const auto& g : grids) {
    if (g.dim() != grids[0].dim()) throw Error(Errc::invariant, "grids differ in dimension");
    all.insert(all.end(), g.data().begin(), g.data().end());
  }
  return fit_pca(all, grids[0].dim(), c);
}

FeatureGrid project_grid(const PcaModel& model, const PatchGrid& grid) {
  if (model.dim != grid.dim()) {
    throw Error(Errc::invariant, "PCA model dimension " + std::to_string(model.dim) +
                                     " does not match grid dimension " +
                                     std::to_string(grid.dim()));
  }
  FeatureGrid f;
  f.rows = grid.rows();
  f.cols = grid.cols();
  f.channels = static_cast<std::uint32_t>(model.count());
  f.values.resize(grid.cells() * f.channels);
  std::vector<double> centered(model.dim);
  for (std::size_t i = 0; i < grid.cells(); ++i) {
    const auto p = grid.patch(i);
    for (std::size_t j = 0; j < model.dim; ++j) centered[j] = p[j] - model.mean[j];
    for (std::size_t k = 0; k < f.channels; ++k) {
      const auto comp = model.component(k);
      double s = 0.0;
      for (std::size_t j = 0; j < model.dim; ++j) s += centered[j] * comp[j];
      f.values[i * f.channels + k] = s;
    }
  }
  return f;
}

std::vector<std::uint8_t> pca_rgb(const FeatureGrid& features) {
  std::vector<std::uint8_t> rgb(features.cells() * 3, 0);
  for (std::uint32_t ch = 0; ch < std::min<std::uint32_t>(3, features.channels); ++ch) {
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (std::size_t i = 0; i < features.cells(); ++i) {
      lo = std::min(lo, features.cell(i)[ch]);
      hi = std::max(hi, features.cell(i)[ch]);
    }
    const double span = hi - lo;
    for (std::size_t i = 0; i < features.cells(); ++i) {
      const double t = span > 0 ? (features.cell(i)[ch] - lo) / span : 0.0;
      rgb[i * 3 + ch] = static_cast<std::uint8_t>(std::lround(t * 255.0));
    }
  }
  return rgb;
}

R2Result r2_score(const FeatureGrid& features, const LabelMask& mask) {
  check_mask(mask);
  if (features.rows != mask.rows || features.cols != mask.cols) {
    throw Error(Errc::usage, "feature grid " + std::to_string(features.rows) + "x" +
                                 std::to_string(features.cols) + " and mask " +
                                 std::to_string(mask.rows) + "x" + std::to_string(mask.cols) +
                                 " are not aligned");
  }
  std::vector<std::size_t> cells;
  std::map<std::int32_t, Eigen::Index> classes;
  for (std::size_t i = 0; i < mask.cells(); ++i) {
    if (mask.labels[i] < 0) continue;
    cells.push_back(i);
    classes.emplace(mask.labels[i], 0);
  }
  if (classes.size() < 2) throw Error(Errc::usage, "R^2 needs at least two distinct labels");
  Eigen::Index next = 0;
  for (auto& [label, col] : classes) col = next++;

  const auto n = static_cast<Eigen::Index>(cells.size());
  const auto c = static_cast<Eigen::Index>(features.channels);
  const auto t = static_cast<Eigen::Index>(classes.size());
  Eigen::MatrixXd x(n, c);
  Eigen::MatrixXd y = Eigen::MatrixXd::Zero(n, t);
  for (Eigen::Index r = 0; r < n; ++r) {
    const auto f = features.cell(cells[static_cast<std::size_t>(r)]);
    for (Eigen::Index j = 0; j < c; ++j) x(r, j) = f[static_cast<std::size_t>(j)];
    y(r, classes[mask.labels[cells[static_cast<std::size_t>(r)]]]) = 1.0;
  }
  // Centering both sides absorbs the intercept.
  x.rowwise() -= x.colwise().mean();
  y.rowwise() -= y.colwise().mean();

  Eigen::MatrixXd residual = y;
  if (c > 0) {
    Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(x);
    residual -= x * cod.solve(y);
  }
  R2Result out;
  out.channels = static_cast<std::size_t>(c);
  out.cells = cells.size();
  double sse = 0.0, sst = 0.0;
  for (const auto& [label, col] : classes) {
    const double e = residual.col(col).squaredNorm();
    const double s = y.col(col).squaredNorm();
    sse += e;
    sst += s;
    out.per_class[label] = 1.0 - e / s;
  }
  out.r2_raw = 1.0 - sse / sst;
  out.r2 = std::clamp(out.r2_raw, 0.0, 1.0);
  return out;
}

nlohmann::json to_json(const R2Result& r) {
  nlohmann::json per_class = nlohmann::json::object();
  for (const auto& [label, v] : r.per_class) per_class[std::to_string(label)] = v;
  return {{"r2", r.r2}, {"r2_raw", r.r2_raw}, {"per_class", per_class},
          {"c", r.channels}, {"cells", r.cells}};
}

InContextResult in_context_segment(const PatchGrid& prompt, const LabelMask& prompt_mask,
                                   const PatchGrid& query, double threshold) {
  check_mask(prompt_mask);
  if (prompt.dim() != query.dim()) throw Error(Errc::invariant, "prompt and query dimensions differ");
  if (prompt_mask.rows != prompt.rows() || prompt_mask.cols != prompt.cols()) {
    throw Error(Errc::usage, "prompt mask shape does not match the prompt grid");
  }
  const std::size_t d = prompt.dim();
  std::vector<double> unit_mean(d, 0.0), raw_mean(d, 0.0);
  std::size_t positives = 0;
  for (std::size_t i = 0; i < prompt.cells(); ++i) {
    if (prompt_mask.labels[i] != 1) continue;
    const auto p = prompt.patch(i);
    const double norm = kernels::norm(p);
    if (norm == 0.0) {
      throw Error(Errc::invariant, "prompt patch " + std::to_string(i) + " has zero norm");
    }
    for (std::size_t j = 0; j < d; ++j) {
      unit_mean[j] += p[j] / norm;
      raw_mean[j] += p[j];
    }
    ++positives;
  }
  if (positives == 0) throw Error(Errc::usage, "prompt mask has no positive cells");

  auto normalized = [](std::vector<double> v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    s = std::sqrt(s);
    if (s == 0.0) throw Error(Errc::invariant, "prompt prototype has zero norm");
    for (double& x : v) x /= s;
    return v;
  };
  const auto proto = normalized(unit_mean);
  const auto proto_raw = normalized(raw_mean);

  InContextResult out;
  out.mask = LabelMask(query.rows(), query.cols(), 0);
  out.similarity.resize(query.cells());
  out.similarity_mean_prototype.resize(query.cells());
  for (std::size_t i = 0; i < query.cells(); ++i) {
    const auto q = query.patch(i);
    const double norm = kernels::norm(q);
    if (norm == 0.0) throw Error(Errc::invariant, "query patch " + std::to_string(i) + " has zero norm");
    double a = 0.0, b = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      a += q[j] * proto[j];
      b += q[j] * proto_raw[j];
    }
    out.similarity[i] = a / norm;
    out.similarity_mean_prototype[i] = b / norm;
    out.mask.labels[i] = out.similarity[i] >= threshold ? 1 : 0;
  }
  return out;
}

LabelMask knn_segment(const PatchGrid& query, const EmbeddingStore& patch_memory, std::size_t k) {
  if (query.dim() != patch_memory.dim()) {
    throw Error(Errc::invariant, "query grid and patch memory dimensions differ");
  }
  EmbeddingStore patches(query.dim());
  patches.reserve(query.cells());
  for (std::size_t i = 0; i < query.cells(); ++i) patches.append(i, query.patch(i));
  const auto predictions = classify_batch(patch_memory, patches, k);
  LabelMask out(query.rows(), query.cols());
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const auto label = predictions[i].label;
    if (label > std::numeric_limits<std::int32_t>::max()) {
      throw Error(Errc::invariant, "patch label does not fit a mask");
    }
    out.labels[i] = static_cast<std::int32_t>(label);
  }
  return out;
}

KMeansSegmentation kmeans_segment(const PatchGrid& grid, std::size_t clusters,
                                  std::uint64_t seed, std::size_t max_iters) {
  if (clusters < 2) throw Error(Errc::usage, "K-Means segmentation needs at least 2 clusters");
  if (clusters > grid.cells()) {
    throw Error(Errc::usage, "cluster count " + std::to_string(clusters) + " exceeds " +
                                 std::to_string(grid.cells()) + " patches");
  }
  KMeansSegmentation out;
  out.clustering = kmeans(grid.data(), grid.dim(), clusters, seed, max_iters);
  out.mask = LabelMask(grid.rows(), grid.cols());
  for (std::size_t i = 0; i < grid.cells(); ++i) {
    out.mask.labels[i] = static_cast<std::int32_t>(out.clustering.assignment[i]);
  }
  return out;
}

}  // namespace vismem
