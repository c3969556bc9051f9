#pragma once

// Seed-reproducible procedural imagery: closed-form texture generators, RGB
// K-Means masks, K-Means-Leaves (KML) compositing, Mixup, and the KML-Mixup
// pipeline, plus a dataset writer whose manifest regenerates every sample
// bit-for-bit.
//
// Every image carries its provenance as JSON with at least
//   { "pipeline": <name>, "seed": <u64>, "params": {...} }
// which `regenerate` turns back into the identical image.

#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vismem/image_io.hpp"

namespace vismem {

using Rgb = std::array<float, 3>;

struct ProcImage {
  std::uint32_t width = 0;
  std::uint32_t height = 0;
  std::vector<float> data;  // row-major RGB, values in [0, 1]
  nlohmann::json provenance;

  ProcImage() = default;
  ProcImage(std::uint32_t width, std::uint32_t height)
      : width(width), height(height), data(std::size_t{width} * height * 3, 0.0f) {}

  std::size_t pixels() const noexcept { return std::size_t{width} * height; }
  float* pixel(std::size_t i) noexcept { return data.data() + i * 3; }
  const float* pixel(std::size_t i) const noexcept { return data.data() + i * 3; }

  friend bool operator==(const ProcImage&, const ProcImage&) = default;
};

// Round half away from zero after scaling [0, 1] to [0, 255].
std::uint8_t quantize(float value) noexcept;
Image8 quantize(const ProcImage& image);
// Ingests an external RGB PNG; provenance records the path.
ProcImage load_proc_image(const std::filesystem::path& png);

// ---------------------------------------------------------------- textures

enum class TextureKind { value_noise, sine_grating, voronoi, gradient_blend };

std::string to_string(TextureKind kind);
TextureKind parse_texture_kind(const std::string& name);

struct TextureParams {
  TextureKind kind = TextureKind::value_noise;
  std::uint32_t width = 256;
  std::uint32_t height = 256;
  // value-noise: lattice cells across the width, octave count and falloff
  double scale = 8.0;
  std::uint32_t octaves = 1;
  double persistence = 0.5;
  // sine-grating: cycles across the width, orientation (radians), phase (cycles)
  double frequency = 4.0;
  double angle = 0.0;
  double phase = 0.0;
  // voronoi: site count and distance shading in [0, 1]
  std::uint32_t cells = 16;
  double shading = 0.0;
  // grating / gradient endpoint colors; drawn from the seed when absent
  std::optional<Rgb> color_a;
  std::optional<Rgb> color_b;
};

nlohmann::json to_json(const TextureParams& params);
TextureParams texture_params_from_json(const nlohmann::json& j);

// Deterministic in (params, seed); throws Errc::usage on invalid params.
ProcImage gen_texture(const TextureParams& params, std::uint64_t seed);

// ---------------------------------------------------------------- K-Means masks

struct ClusterMask {
  std::uint32_t width = 0;
  std::uint32_t height = 0;
  std::size_t k = 0;            // clusters used
  std::size_t requested_k = 0;
  bool reduced_k = false;       // image had fewer distinct colors than requested_k
  std::vector<std::uint32_t> assignment;
  std::vector<Rgb> centroids;
  double inertia = 0.0;
  std::vector<double> inertia_history;
  std::size_t iterations = 0;
  bool converged = false;
};

// Lloyd's algorithm in RGB space with k-means++ seeding. Throws when k == 0
// or k exceeds the pixel count.
ClusterMask kmeans_rgb(const ProcImage& image, std::size_t k, std::uint64_t seed,
                       std::size_t max_iters = 100);

// ---------------------------------------------------------------- compositing

// How mask clusters pick a source. `luminance`: clusters sorted by centroid
// luminance (ties by id), even ranks take s2, odd ranks s3. `random`: one fair
// coin per cluster from the seed.
enum class AssignmentRule { luminance, random };

std::string to_string(AssignmentRule rule);
AssignmentRule parse_assignment_rule(const std::string& name);

struct KmlResult {
  ProcImage image;
  ClusterMask mask;
  std::vector<int> source_of_cluster;  // 0 -> s2, 1 -> s3
};

// Clusters s1 into a mask, then copies each pixel from s2 or s3 by its
// cluster's source.
KmlResult kml_compose_detailed(const ProcImage& s1, const ProcImage& s2, const ProcImage& s3,
                               std::size_t k, std::uint64_t seed,
                               AssignmentRule rule = AssignmentRule::luminance,
                               std::size_t max_iters = 100);
ProcImage kml_compose(const ProcImage& s1, const ProcImage& s2, const ProcImage& s3,
                      std::size_t k, std::uint64_t seed,
                      AssignmentRule rule = AssignmentRule::luminance);

struct MixParams {
  double alpha = 1.0;   // Beta(alpha, alpha) concentration
  double lambda = 0.5;  // realized weight of the first image
  std::uint64_t seed = 0;
};

// Draws lambda ~ Beta(alpha, alpha) from `seed`.
MixParams sample_mix_params(double alpha, std::uint64_t seed);

// lambda * a + (1 - lambda) * b per channel.
ProcImage mixup(const ProcImage& a, const ProcImage& b, const MixParams& params);

// ---------------------------------------------------------------- pipelines

enum class Pipeline { texture, kml, mixup, kml_mixup };

std::string to_string(Pipeline pipeline);
Pipeline parse_pipeline(const std::string& name);

struct PipelineConfig {
  Pipeline pipeline = Pipeline::kml_mixup;
  std::uint32_t width = 256;
  std::uint32_t height = 256;
  std::size_t clusters = 2;
  double alpha = 1.0;
  std::optional<double> lambda;  // forces the Mixup weight instead of sampling it
  AssignmentRule rule = AssignmentRule::luminance;
  std::vector<TextureKind> kinds{TextureKind::value_noise, TextureKind::sine_grating,
                                 TextureKind::voronoi, TextureKind::gradient_blend};
  std::size_t max_iters = 100;
  // Optional external PNGs used as s1, s2, s3 in place of random textures
  // (kml and kml_mixup). Must match width x height.
  std::vector<std::string> sources;
};

// Throws Errc::usage on an invalid config; touches no files.
void validate_pipeline_config(const PipelineConfig& config);

nlohmann::json to_json(const PipelineConfig& config);
PipelineConfig pipeline_config_from_json(const nlohmann::json& j);

// Texture with parameters drawn from `seed` within `config`.
ProcImage random_texture(const PipelineConfig& config, std::uint64_t seed);
// Three random textures composited by kml_compose.
ProcImage kml_sample(const PipelineConfig& config, std::uint64_t seed);
// Two independent kml_sample draws mixed with lambda ~ Beta(alpha, alpha).
ProcImage kml_mixup_sample(const PipelineConfig& config, std::uint64_t seed);
// Dispatches on config.pipeline.
ProcImage generate_sample(const PipelineConfig& config, std::uint64_t seed);

// Seed of sample `index` in a dataset; independent of generation order.
std::uint64_t sample_seed(std::uint64_t master_seed, std::uint64_t index);

// Rebuilds an image from its provenance (or a manifest row).
ProcImage regenerate(const nlohmann::json& provenance);

// ---------------------------------------------------------------- datasets

inline constexpr const char* kManifestFile = "manifest.jsonl";

// Writes sample PNGs and appends one JSON-lines manifest row per sample:
//   { "index", "seed", "pipeline", "params", "file" }.
class DatasetWriter {
 public:
  explicit DatasetWriter(std::filesystem::path dir);

  // Returns the manifest row written for the sample.
  nlohmann::json append(const ProcImage& sample);
  std::size_t count() const noexcept { return next_index_; }
  const std::filesystem::path& dir() const noexcept { return dir_; }

 private:
  std::filesystem::path dir_;
  std::ofstream manifest_;
  std::size_t next_index_ = 0;
};

// Generates `count` samples (parallel, chunked) and writes them in index order.
std::vector<nlohmann::json> write_dataset(const PipelineConfig& config, std::uint64_t master_seed,
                                          std::size_t count, const std::filesystem::path& dir);

std::vector<nlohmann::json> read_manifest(const std::filesystem::path& dir);

}  // namespace vismem
