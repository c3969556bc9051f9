#include "vismem/procgen.hpp"

#include <omp.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <exception>
#include <numbers>
#include <numeric>

#include "vismem/error.hpp"
#include "vismem/kmeans.hpp"
#include "vismem/parallel.hpp"
#include "vismem/random.hpp"

namespace vismem {

namespace {

using nlohmann::json;

constexpr double kTwoPi = 2.0 * std::numbers::pi;

void require(bool ok, const std::string& what) {
  if (!ok) throw Error(Errc::usage, what);
}

bool finite(double v) { return std::isfinite(v); }

void check_image(const ProcImage& image, const char* role) {
  if (image.width == 0 || image.height == 0) {
    throw Error(Errc::usage, std::string(role) + " image is empty");
  }
  if (image.data.size() != image.pixels() * 3) {
    throw Error(Errc::invariant, std::string(role) + " image buffer does not match its shape");
  }
}

void check_same_shape(const ProcImage& a, const ProcImage& b, const char* what) {
  if (a.width != b.width || a.height != b.height) {
    throw Error(Errc::usage, std::string(what) + ": image dimensions differ (" +
                                 std::to_string(a.width) + "x" + std::to_string(a.height) + " vs " +
                                 std::to_string(b.width) + "x" + std::to_string(b.height) + ")");
  }
}

Rgb random_color(Engine& rng) {
  Rgb c;
  for (auto& v : c) v = static_cast<float>(unit_double(rng));
  return c;
}

json color_json(const std::optional<Rgb>& c) {
  if (!c) return nullptr;
  return json::array({(*c)[0], (*c)[1], (*c)[2]});
}

std::optional<Rgb> color_from_json(const json& j) {
  if (j.is_null()) return std::nullopt;
  Rgb c;
  for (std::size_t i = 0; i < 3; ++i) c[i] = j.at(i).get<float>();
  return c;
}

float blend(float a, float b, double t) {
  return static_cast<float>((1.0 - t) * static_cast<double>(a) + t * static_cast<double>(b));
}

void validate(const TextureParams& p) {
  require(p.width > 0 && p.height > 0, "texture dimensions must be positive");
  for (const auto& c : {p.color_a, p.color_b}) {
    if (!c) continue;
    for (float v : *c) require(v >= 0.0f && v <= 1.0f, "texture colors must lie in [0, 1]");
  }
  switch (p.kind) {
    case TextureKind::value_noise:
      require(finite(p.scale) && p.scale > 0.0 && p.scale <= 4096.0,
              "value-noise scale must be in (0, 4096]");
      require(p.octaves >= 1 && p.octaves <= 12, "value-noise octaves must be in [1, 12]");
      require(finite(p.persistence) && p.persistence > 0.0 && p.persistence <= 1.0,
              "value-noise persistence must be in (0, 1]");
      require(p.scale * std::ldexp(1.0, static_cast<int>(p.octaves) - 1) <= 65536.0,
              "value-noise lattice too fine");
      break;
    case TextureKind::sine_grating:
      require(finite(p.frequency) && p.frequency >= 0.0, "grating frequency must be finite and >= 0");
      require(finite(p.angle) && finite(p.phase), "grating angle and phase must be finite");
      break;
    case TextureKind::voronoi:
      require(p.cells >= 1 && p.cells <= 65536, "voronoi cells must be in [1, 65536]");
      require(finite(p.shading) && p.shading >= 0.0 && p.shading <= 1.0,
              "voronoi shading must be in [0, 1]");
      break;
    case TextureKind::gradient_blend:
      require(finite(p.angle), "gradient angle must be finite");
      break;
  }
}

// Smoothstep-interpolated lattice noise, one independent lattice per channel
// and octave, octaves weighted by persistence^o and normalized back to [0, 1).
void value_noise(const TextureParams& p, Engine& rng, ProcImage& img) {
  const double w = p.width, h = p.height;
  std::vector<double> weight(p.octaves);
  double total = 0.0;
  for (std::uint32_t o = 0; o < p.octaves; ++o) total += weight[o] = std::pow(p.persistence, o);

  std::vector<double> acc(img.data.size(), 0.0);
  for (std::uint32_t ch = 0; ch < 3; ++ch) {
    for (std::uint32_t o = 0; o < p.octaves; ++o) {
      const double cells_x = p.scale * std::ldexp(1.0, static_cast<int>(o));
      const double cells_y = cells_x * h / w;
      const auto nx = static_cast<std::size_t>(std::ceil(cells_x)) + 1;
      const auto ny = static_cast<std::size_t>(std::ceil(cells_y)) + 1;
      std::vector<double> lattice(nx * ny);
      for (auto& v : lattice) v = unit_double(rng);

      for (std::uint32_t y = 0; y < p.height; ++y) {
        const double v = (y + 0.5) / h * cells_y;
        const auto iy = std::min(static_cast<std::size_t>(v), ny - 2);
        double fy = v - static_cast<double>(iy);
        fy = fy * fy * (3.0 - 2.0 * fy);
        for (std::uint32_t x = 0; x < p.width; ++x) {
          const double u = (x + 0.5) / w * cells_x;
          const auto ix = std::min(static_cast<std::size_t>(u), nx - 2);
          double fx = u - static_cast<double>(ix);
          fx = fx * fx * (3.0 - 2.0 * fx);
          const double* r0 = &lattice[iy * nx + ix];
          const double* r1 = r0 + nx;
          const double top = r0[0] + (r0[1] - r0[0]) * fx;
          const double bot = r1[0] + (r1[1] - r1[0]) * fx;
          acc[(std::size_t{y} * p.width + x) * 3 + ch] += weight[o] * (top + (bot - top) * fy);
        }
      }
    }
  }
  for (std::size_t i = 0; i < acc.size(); ++i) {
    img.data[i] = static_cast<float>(std::clamp(acc[i] / total, 0.0, 1.0));
  }
}

void sine_grating(const TextureParams& p, const Rgb& a, const Rgb& b, ProcImage& img) {
  const double c = std::cos(p.angle), s = std::sin(p.angle);
  for (std::uint32_t y = 0; y < p.height; ++y) {
    for (std::uint32_t x = 0; x < p.width; ++x) {
      const double pos = ((x + 0.5) * c + (y + 0.5) * s) / p.width;
      const double t = 0.5 + 0.5 * std::sin(kTwoPi * p.frequency * (pos + p.phase));
      float* px = img.pixel(std::size_t{y} * p.width + x);
      for (int ch = 0; ch < 3; ++ch) px[ch] = std::clamp(blend(a[ch], b[ch], t), 0.0f, 1.0f);
    }
  }
}

void voronoi(const TextureParams& p, Engine& rng, ProcImage& img) {
  struct Site {
    double x, y;
    Rgb color;
  };
  std::vector<Site> sites(p.cells);
  for (auto& site : sites) {
    site.x = unit_double(rng) * p.width;
    site.y = unit_double(rng) * p.height;
    site.color = random_color(rng);
  }
  std::vector<double> dist(img.pixels());
  std::vector<std::uint32_t> owner(img.pixels());
  double dmax = 0.0;
  for (std::uint32_t y = 0; y < p.height; ++y) {
    for (std::uint32_t x = 0; x < p.width; ++x) {
      const double px = x + 0.5, py = y + 0.5;
      double best = std::numeric_limits<double>::infinity();
      std::uint32_t arg = 0;
      for (std::uint32_t i = 0; i < p.cells; ++i) {
        const double dx = px - sites[i].x, dy = py - sites[i].y;
        const double d = dx * dx + dy * dy;
        if (d < best) best = d, arg = i;
      }
      const std::size_t idx = std::size_t{y} * p.width + x;
      dist[idx] = std::sqrt(best);
      owner[idx] = arg;
      dmax = std::max(dmax, dist[idx]);
    }
  }
  for (std::size_t i = 0; i < img.pixels(); ++i) {
    const double f = dmax > 0.0 ? 1.0 - p.shading * dist[i] / dmax : 1.0;
    for (int ch = 0; ch < 3; ++ch) {
      img.pixel(i)[ch] = std::clamp(static_cast<float>(sites[owner[i]].color[ch] * f), 0.0f, 1.0f);
    }
  }
}

void gradient_blend(const TextureParams& p, const Rgb& a, const Rgb& b, ProcImage& img) {
  const double c = std::cos(p.angle), s = std::sin(p.angle);
  const double cx = p.width / 2.0, cy = p.height / 2.0;
  // Projection extent over the image corners.
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (double x : {0.0, static_cast<double>(p.width)}) {
    for (double y : {0.0, static_cast<double>(p.height)}) {
      const double proj = (x - cx) * c + (y - cy) * s;
      lo = std::min(lo, proj);
      hi = std::max(hi, proj);
    }
  }
  const double span = hi - lo;
  for (std::uint32_t y = 0; y < p.height; ++y) {
    for (std::uint32_t x = 0; x < p.width; ++x) {
      const double proj = (x + 0.5 - cx) * c + (y + 0.5 - cy) * s;
      const double t = span > 0.0 ? std::clamp((proj - lo) / span, 0.0, 1.0) : 0.5;
      float* px = img.pixel(std::size_t{y} * p.width + x);
      for (int ch = 0; ch < 3; ++ch) px[ch] = std::clamp(blend(a[ch], b[ch], t), 0.0f, 1.0f);
    }
  }
}

TextureParams draw_texture_params(const PipelineConfig& config, Engine& rng) {
  TextureParams p;
  p.kind = config.kinds[uniform_index(rng, config.kinds.size())];
  p.width = config.width;
  p.height = config.height;
  switch (p.kind) {
    case TextureKind::value_noise:
      p.scale = 2.0 + 14.0 * unit_double(rng);
      p.octaves = 1 + static_cast<std::uint32_t>(uniform_index(rng, 4));
      p.persistence = 0.5;
      break;
    case TextureKind::sine_grating:
      p.frequency = 1.0 + 15.0 * unit_double(rng);
      p.angle = std::numbers::pi * unit_double(rng);
      p.phase = unit_double(rng);
      p.color_a = random_color(rng);
      p.color_b = random_color(rng);
      break;
    case TextureKind::voronoi:
      p.cells = 4 + static_cast<std::uint32_t>(uniform_index(rng, 61));
      p.shading = 0.5 * unit_double(rng);
      break;
    case TextureKind::gradient_blend:
      p.angle = kTwoPi * unit_double(rng);
      p.color_a = random_color(rng);
      p.color_b = random_color(rng);
      break;
  }
  return p;
}

void validate_config(const PipelineConfig& c) {
  require(c.width > 0 && c.height > 0, "image dimensions must be positive");
  require(c.clusters >= 1, "cluster count must be at least 1");
  require(c.clusters <= std::size_t{c.width} * c.height, "cluster count exceeds the pixel count");
  require(finite(c.alpha) && c.alpha > 0.0, "mixup alpha must be positive");
  if (c.lambda) require(*c.lambda >= 0.0 && *c.lambda <= 1.0, "mixup lambda must be in [0, 1]");
  require(!c.kinds.empty(), "at least one texture kind is required");
  require(c.max_iters >= 1, "max_iters must be at least 1");
  require(c.sources.empty() || c.sources.size() == 3, "sources must list exactly three PNGs");
}

ProcImage with_pipeline(ProcImage image, Pipeline pipeline, const PipelineConfig& config,
                        std::uint64_t seed) {
  json detail = std::move(image.provenance);
  image.provenance = {{"pipeline", to_string(pipeline)},
                      {"seed", seed},
                      {"params", to_json(config)},
                      {"components", std::move(detail)}};
  return image;
}

ProcImage source_image(const PipelineConfig& config, std::size_t index, std::uint64_t seed) {
  if (config.sources.empty()) return random_texture(config, seed);
  ProcImage img = load_proc_image(config.sources[index]);
  if (img.width != config.width || img.height != config.height) {
    throw Error(Errc::usage, "source " + config.sources[index] + " is " + std::to_string(img.width) +
                                 "x" + std::to_string(img.height) + ", expected " +
                                 std::to_string(config.width) + "x" + std::to_string(config.height));
  }
  return img;
}

}  // namespace

// ---------------------------------------------------------------- basics

std::uint8_t quantize(float value) noexcept {
  if (!(value > 0.0f)) return 0;
  if (value >= 1.0f) return 255;
  return static_cast<std::uint8_t>(std::lround(static_cast<double>(value) * 255.0));
}

Image8 quantize(const ProcImage& image) {
  check_image(image, "quantized");
  Image8 out;
  out.width = image.width;
  out.height = image.height;
  out.channels = 3;
  out.pixels.resize(image.data.size());
  std::transform(image.data.begin(), image.data.end(), out.pixels.begin(),
                 [](float v) { return quantize(v); });
  return out;
}

ProcImage load_proc_image(const std::filesystem::path& png) {
  const Image8 raw = read_png(png, 3);
  ProcImage img(raw.width, raw.height);
  for (std::size_t i = 0; i < raw.pixels.size(); ++i) img.data[i] = raw.pixels[i] / 255.0f;
  img.provenance = {{"pipeline", "png"}, {"seed", 0}, {"params", {{"path", png.string()}}}};
  return img;
}

// ---------------------------------------------------------------- textures

std::string to_string(TextureKind kind) {
  switch (kind) {
    case TextureKind::value_noise: return "value-noise";
    case TextureKind::sine_grating: return "sine-grating";
    case TextureKind::voronoi: return "voronoi";
    case TextureKind::gradient_blend: return "gradient-blend";
  }
  return "?";
}

TextureKind parse_texture_kind(const std::string& name) {
  for (auto k : {TextureKind::value_noise, TextureKind::sine_grating, TextureKind::voronoi,
                 TextureKind::gradient_blend}) {
    if (to_string(k) == name) return k;
  }
  throw Error(Errc::usage, "unknown texture kind '" + name +
                               "' (expected value-noise, sine-grating, voronoi or gradient-blend)");
}

json to_json(const TextureParams& p) {
  return {{"kind", to_string(p.kind)},   {"width", p.width},
          {"height", p.height},          {"scale", p.scale},
          {"octaves", p.octaves},        {"persistence", p.persistence},
          {"frequency", p.frequency},    {"angle", p.angle},
          {"phase", p.phase},            {"cells", p.cells},
          {"shading", p.shading},        {"color_a", color_json(p.color_a)},
          {"color_b", color_json(p.color_b)}};
}

TextureParams texture_params_from_json(const json& j) {
  try {
    TextureParams p;
    p.kind = parse_texture_kind(j.at("kind").get<std::string>());
    p.width = j.value("width", p.width);
    p.height = j.value("height", p.height);
    p.scale = j.value("scale", p.scale);
    p.octaves = j.value("octaves", p.octaves);
    p.persistence = j.value("persistence", p.persistence);
    p.frequency = j.value("frequency", p.frequency);
    p.angle = j.value("angle", p.angle);
    p.phase = j.value("phase", p.phase);
    p.cells = j.value("cells", p.cells);
    p.shading = j.value("shading", p.shading);
    if (j.contains("color_a")) p.color_a = color_from_json(j["color_a"]);
    if (j.contains("color_b")) p.color_b = color_from_json(j["color_b"]);
    return p;
  } catch (const json::exception& e) {
    throw Error(Errc::format, std::string("bad texture params: ") + e.what());
  }
}

ProcImage gen_texture(const TextureParams& params, std::uint64_t seed) {
  validate(params);
  Engine rng(seed);
  ProcImage img(params.width, params.height);
  // Endpoint colors are always drawn so the stream layout does not depend on
  // which colors the caller fixed.
  Rgb a = random_color(rng);
  Rgb b = random_color(rng);
  if (params.color_a) a = *params.color_a;
  if (params.color_b) b = *params.color_b;

  switch (params.kind) {
    case TextureKind::value_noise: value_noise(params, rng, img); break;
    case TextureKind::sine_grating: sine_grating(params, a, b, img); break;
    case TextureKind::voronoi: voronoi(params, rng, img); break;
    case TextureKind::gradient_blend: gradient_blend(params, a, b, img); break;
  }
  img.provenance = {{"pipeline", "gen_texture"}, {"seed", seed}, {"params", to_json(params)}};
  return img;
}

// ---------------------------------------------------------------- K-Means masks

ClusterMask kmeans_rgb(const ProcImage& image, std::size_t k, std::uint64_t seed,
                       std::size_t max_iters) {
  check_image(image, "kmeans_rgb");
  if (k == 0) throw Error(Errc::usage, "kmeans_rgb: K must be at least 1");
  if (k > image.pixels()) {
    throw Error(Errc::usage, "kmeans_rgb: K=" + std::to_string(k) + " exceeds the pixel count " +
                                 std::to_string(image.pixels()));
  }
  KMeansResult r = kmeans(image.data, 3, k, seed, max_iters);
  ClusterMask m;
  m.width = image.width;
  m.height = image.height;
  m.k = r.k;
  m.requested_k = k;
  m.reduced_k = r.reduced_k;
  m.assignment = std::move(r.assignment);
  m.centroids.resize(r.k);
  for (std::size_t c = 0; c < r.k; ++c) {
    for (std::size_t ch = 0; ch < 3; ++ch) {
      m.centroids[c][ch] = static_cast<float>(r.centroids[c * 3 + ch]);
    }
  }
  m.inertia = r.inertia;
  m.inertia_history = std::move(r.inertia_history);
  m.iterations = r.iterations;
  m.converged = r.converged;
  return m;
}

// ---------------------------------------------------------------- compositing

std::string to_string(AssignmentRule rule) {
  return rule == AssignmentRule::luminance ? "luminance" : "random";
}

AssignmentRule parse_assignment_rule(const std::string& name) {
  if (name == "luminance") return AssignmentRule::luminance;
  if (name == "random") return AssignmentRule::random;
  throw Error(Errc::usage, "unknown assignment rule '" + name + "' (expected luminance or random)");
}

KmlResult kml_compose_detailed(const ProcImage& s1, const ProcImage& s2, const ProcImage& s3,
                               std::size_t k, std::uint64_t seed, AssignmentRule rule,
                               std::size_t max_iters) {
  check_image(s1, "s1");
  check_image(s2, "s2");
  check_image(s3, "s3");
  check_same_shape(s1, s2, "kml_compose");
  check_same_shape(s1, s3, "kml_compose");

  KmlResult out;
  out.mask = kmeans_rgb(s1, k, seed, max_iters);
  const std::size_t used = out.mask.k;
  out.source_of_cluster.assign(used, 0);

  if (rule == AssignmentRule::luminance) {
    std::vector<double> lum(used);
    for (std::size_t c = 0; c < used; ++c) {
      const auto& m = out.mask.centroids[c];
      lum[c] = 0.2126 * m[0] + 0.7152 * m[1] + 0.0722 * m[2];
    }
    std::vector<std::size_t> order(used);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return lum[a] != lum[b] ? lum[a] < lum[b] : a < b;
    });
    for (std::size_t rank = 0; rank < used; ++rank) out.source_of_cluster[order[rank]] = rank % 2;
  } else {
    Engine rng(derive_seed(seed, 1));
    for (auto& src : out.source_of_cluster) src = unit_double(rng) < 0.5 ? 0 : 1;
  }

  out.image = ProcImage(s1.width, s1.height);
  for (std::size_t i = 0; i < s1.pixels(); ++i) {
    const ProcImage& from = out.source_of_cluster[out.mask.assignment[i]] == 0 ? s2 : s3;
    std::copy_n(from.pixel(i), 3, out.image.pixel(i));
  }
  out.image.provenance = {{"pipeline", "kml_compose"},
                          {"seed", seed},
                          {"params",
                           {{"k", k},
                            {"k_used", used},
                            {"rule", to_string(rule)},
                            {"max_iters", max_iters},
                            {"source_of_cluster", out.source_of_cluster},
                            {"sources", json::array({s1.provenance, s2.provenance, s3.provenance})}}}};
  return out;
}

ProcImage kml_compose(const ProcImage& s1, const ProcImage& s2, const ProcImage& s3, std::size_t k,
                      std::uint64_t seed, AssignmentRule rule) {
  return kml_compose_detailed(s1, s2, s3, k, seed, rule).image;
}

MixParams sample_mix_params(double alpha, std::uint64_t seed) {
  require(finite(alpha) && alpha > 0.0, "mixup alpha must be positive");
  Engine rng(seed);
  std::gamma_distribution<double> gamma(alpha, 1.0);
  const double x = gamma(rng);
  const double y = gamma(rng);
  MixParams p;
  p.alpha = alpha;
  p.seed = seed;
  p.lambda = x + y > 0.0 ? x / (x + y) : 0.5;
  return p;
}

ProcImage mixup(const ProcImage& a, const ProcImage& b, const MixParams& params) {
  check_image(a, "mixup a");
  check_image(b, "mixup b");
  check_same_shape(a, b, "mixup");
  require(params.lambda >= 0.0 && params.lambda <= 1.0, "mixup lambda must be in [0, 1]");
  ProcImage out(a.width, a.height);
  const double lambda = params.lambda;
  // lerp is exact at both endpoints and never leaves [min(a, b), max(a, b)].
  for (std::size_t i = 0; i < out.data.size(); ++i) {
    out.data[i] = static_cast<float>(std::lerp(static_cast<double>(b.data[i]),
                                               static_cast<double>(a.data[i]), lambda));
  }
  out.provenance = {{"pipeline", "mixup_images"},
                    {"seed", params.seed},
                    {"params",
                     {{"alpha", params.alpha},
                      {"lambda", params.lambda},
                      {"a", a.provenance},
                      {"b", b.provenance}}}};
  return out;
}

// ---------------------------------------------------------------- pipelines

void validate_pipeline_config(const PipelineConfig& config) { validate_config(config); }

std::string to_string(Pipeline pipeline) {
  switch (pipeline) {
    case Pipeline::texture: return "texture";
    case Pipeline::kml: return "kml";
    case Pipeline::mixup: return "mixup";
    case Pipeline::kml_mixup: return "kml_mixup";
  }
  return "?";
}

Pipeline parse_pipeline(const std::string& name) {
  for (auto p : {Pipeline::texture, Pipeline::kml, Pipeline::mixup, Pipeline::kml_mixup}) {
    if (to_string(p) == name) return p;
  }
  throw Error(Errc::usage,
              "unknown pipeline '" + name + "' (expected texture, kml, mixup or kml_mixup)");
}

json to_json(const PipelineConfig& c) {
  json kinds = json::array();
  for (auto k : c.kinds) kinds.push_back(to_string(k));
  return {{"pipeline", to_string(c.pipeline)},
          {"width", c.width},
          {"height", c.height},
          {"clusters", c.clusters},
          {"alpha", c.alpha},
          {"lambda", c.lambda ? json(*c.lambda) : json(nullptr)},
          {"rule", to_string(c.rule)},
          {"kinds", kinds},
          {"max_iters", c.max_iters},
          {"sources", c.sources}};
}

PipelineConfig pipeline_config_from_json(const json& j) {
  try {
    PipelineConfig c;
    c.pipeline = parse_pipeline(j.at("pipeline").get<std::string>());
    c.width = j.value("width", c.width);
    c.height = j.value("height", c.height);
    c.clusters = j.value("clusters", c.clusters);
    c.alpha = j.value("alpha", c.alpha);
    if (j.contains("lambda") && !j["lambda"].is_null()) c.lambda = j["lambda"].get<double>();
    c.rule = parse_assignment_rule(j.value("rule", std::string("luminance")));
    if (j.contains("kinds")) {
      c.kinds.clear();
      for (const auto& k : j["kinds"]) c.kinds.push_back(parse_texture_kind(k.get<std::string>()));
    }
    c.max_iters = j.value("max_iters", c.max_iters);
    if (j.contains("sources")) c.sources = j["sources"].get<std::vector<std::string>>();
    return c;
  } catch (const json::exception& e) {
    throw Error(Errc::format, std::string("bad pipeline config: ") + e.what());
  }
}

ProcImage random_texture(const PipelineConfig& config, std::uint64_t seed) {
  validate_config(config);
  Engine rng(derive_seed(seed, 0));
  return gen_texture(draw_texture_params(config, rng), derive_seed(seed, 1));
}

ProcImage kml_sample(const PipelineConfig& config, std::uint64_t seed) {
  validate_config(config);
  const ProcImage s1 = source_image(config, 0, derive_seed(seed, 0));
  const ProcImage s2 = source_image(config, 1, derive_seed(seed, 1));
  const ProcImage s3 = source_image(config, 2, derive_seed(seed, 2));
  return kml_compose_detailed(s1, s2, s3, config.clusters, derive_seed(seed, 3), config.rule,
                              config.max_iters)
      .image;
}

namespace {

MixParams pipeline_mix(const PipelineConfig& config, std::uint64_t seed) {
  const std::uint64_t mix_seed = derive_seed(seed, 2);
  if (!config.lambda) return sample_mix_params(config.alpha, mix_seed);
  return MixParams{config.alpha, *config.lambda, mix_seed};
}

}  // namespace

ProcImage kml_mixup_sample(const PipelineConfig& config, std::uint64_t seed) {
  validate_config(config);
  const ProcImage a = kml_sample(config, derive_seed(seed, 0));
  const ProcImage b = kml_sample(config, derive_seed(seed, 1));
  return mixup(a, b, pipeline_mix(config, seed));
}

ProcImage generate_sample(const PipelineConfig& config, std::uint64_t seed) {
  validate_config(config);
  ProcImage img;
  switch (config.pipeline) {
    case Pipeline::texture: img = random_texture(config, seed); break;
    case Pipeline::kml: img = kml_sample(config, seed); break;
    case Pipeline::mixup:
      img = mixup(random_texture(config, derive_seed(seed, 0)),
                  random_texture(config, derive_seed(seed, 1)), pipeline_mix(config, seed));
      break;
    case Pipeline::kml_mixup: img = kml_mixup_sample(config, seed); break;
  }
  return with_pipeline(std::move(img), config.pipeline, config, seed);
}

std::uint64_t sample_seed(std::uint64_t master_seed, std::uint64_t index) {
  return derive_seed(master_seed, index);
}

ProcImage regenerate(const json& provenance) {
  try {
    const std::string name = provenance.at("pipeline").get<std::string>();
    const auto seed = provenance.at("seed").get<std::uint64_t>();
    const json& params = provenance.at("params");
    if (name == "gen_texture") return gen_texture(texture_params_from_json(params), seed);
    if (name == "png") return load_proc_image(params.at("path").get<std::string>());
    if (name == "kml_compose") {
      const json& src = params.at("sources");
      return kml_compose_detailed(regenerate(src.at(0)), regenerate(src.at(1)), regenerate(src.at(2)),
                                  params.at("k").get<std::size_t>(), seed,
                                  parse_assignment_rule(params.at("rule").get<std::string>()),
                                  params.at("max_iters").get<std::size_t>())
          .image;
    }
    if (name == "mixup_images") {
      const MixParams mp{params.at("alpha").get<double>(), params.at("lambda").get<double>(), seed};
      return mixup(regenerate(params.at("a")), regenerate(params.at("b")), mp);
    }
    const PipelineConfig config = pipeline_config_from_json(params);
    if (to_string(config.pipeline) != name) {
      throw Error(Errc::format, "provenance pipeline '" + name + "' disagrees with its params");
    }
    return generate_sample(config, seed);
  } catch (const json::exception& e) {
    throw Error(Errc::format, std::string("bad provenance record: ") + e.what());
  }
}

// ---------------------------------------------------------------- datasets

DatasetWriter::DatasetWriter(std::filesystem::path dir) : dir_(std::move(dir)) {
  std::error_code ec;
  std::filesystem::create_directories(dir_, ec);
  if (ec) throw Error(Errc::io, "cannot create " + dir_.string() + ": " + ec.message());
  manifest_.open(dir_ / kManifestFile, std::ios::trunc);
  if (!manifest_) throw Error(Errc::io, "cannot open " + (dir_ / kManifestFile).string());
}

json DatasetWriter::append(const ProcImage& sample) {
  const json& prov = sample.provenance;
  if (!prov.is_object() || !prov.contains("pipeline") || !prov.contains("seed") ||
      !prov.contains("params")) {
    throw Error(Errc::invariant, "sample has no regenerable provenance");
  }
  char name[32];
  std::snprintf(name, sizeof name, "sample_%06zu.png", next_index_);
  write_png(quantize(sample), dir_ / name);

  json row = {{"index", next_index_},
              {"seed", prov["seed"]},
              {"pipeline", prov["pipeline"]},
              {"params", prov["params"]},
              {"file", name}};
  manifest_ << row.dump() << '\n';
  manifest_.flush();
  if (!manifest_) throw Error(Errc::io, "failed writing " + (dir_ / kManifestFile).string());
  ++next_index_;
  return row;
}

std::vector<json> write_dataset(const PipelineConfig& config, std::uint64_t master_seed,
                                std::size_t count, const std::filesystem::path& dir) {
  validate_config(config);
  DatasetWriter writer(dir);
  std::vector<json> rows;
  rows.reserve(count);
  constexpr std::size_t kChunk = 32;
  std::vector<ProcImage> batch;
  for (std::size_t start = 0; start < count; start += kChunk) {
    const std::size_t n = std::min(kChunk, count - start);
    batch.assign(n, ProcImage{});
    std::exception_ptr failure;
#pragma omp parallel for schedule(dynamic, 1) num_threads(num_threads())
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(n); ++i) {
      try {
        batch[i] = generate_sample(config, sample_seed(master_seed, start + i));
      } catch (...) {
#pragma omp critical(vismem_dataset_error)
        if (!failure) failure = std::current_exception();
      }
    }
    if (failure) std::rethrow_exception(failure);
    for (const auto& img : batch) rows.push_back(writer.append(img));
  }
  return rows;
}

std::vector<json> read_manifest(const std::filesystem::path& dir) {
  std::ifstream in(dir / kManifestFile);
  if (!in) throw Error(Errc::io, "cannot open " + (dir / kManifestFile).string());
  std::vector<json> rows;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      rows.push_back(json::parse(line));
    } catch (const json::exception& e) {
      throw Error(Errc::format, "manifest line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return rows;
}

}  // namespace vismem
