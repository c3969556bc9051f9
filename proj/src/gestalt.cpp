#include "vismem/gestalt.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "vismem/error.hpp"
#include "vismem/random.hpp"

namespace vismem {

namespace {

using nlohmann::json;

constexpr Rgb kBlack{0.0f, 0.0f, 0.0f};
constexpr Rgb kWhite{1.0f, 1.0f, 1.0f};

// Well-separated hues for the similarity grid.
constexpr Rgb kPalette[] = {
    {0.85f, 0.10f, 0.10f}, {0.10f, 0.35f, 0.85f}, {0.10f, 0.65f, 0.20f},
    {0.95f, 0.60f, 0.05f}, {0.55f, 0.15f, 0.70f}, {0.05f, 0.05f, 0.05f},
};

void require(bool ok, const std::string& what) {
  if (!ok) throw Error(Errc::usage, "gestalt: " + what);
}

struct Box {
  double x0 = std::numeric_limits<double>::infinity(), y0 = x0;
  double x1 = -x0, y1 = -x0;
  void add(double ax0, double ay0, double ax1, double ay1) {
    x0 = std::min(x0, ax0), y0 = std::min(y0, ay0);
    x1 = std::max(x1, ax1), y1 = std::max(y1, ay1);
  }
};

Box bounds(const Shape& s) {
  Box b;
  if (auto* d = std::get_if<Disk>(&s)) {
    b.add(d->cx - d->r, d->cy - d->r, d->cx + d->r, d->cy + d->r);
  } else if (auto* c = std::get_if<Capsule>(&s)) {
    b.add(std::min(c->x0, c->x1) - c->r, std::min(c->y0, c->y1) - c->r,
          std::max(c->x0, c->x1) + c->r, std::max(c->y0, c->y1) + c->r);
  } else {
    const auto& r = std::get<Rect>(s);
    b.add(r.x0, r.y0, r.x1, r.y1);
  }
  return b;
}

void translate(Shape& s, double dx, double dy) {
  std::visit(
      [&](auto& v) {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, Disk>) {
          v.cx += dx, v.cy += dy;
        } else {
          v.x0 += dx, v.y0 += dy, v.x1 += dx, v.y1 += dy;
        }
      },
      s);
}

GestaltElement dot(double x, double y, double r, Rgb color, std::int32_t label) {
  return {Disk{x, y, r}, false, true, color, label};
}

// Layouts are built around the origin and centered afterwards.

std::vector<GestaltElement> proximity(const GestaltParams& p) {
  std::vector<GestaltElement> out;
  const double gap = 3.0 * p.spacing;
  const double group_w = (p.count - 1) * p.spacing;
  for (std::int32_t g = 0; g < 2; ++g) {
    const double x0 = g * (group_w + gap);
    for (std::uint32_t i = 0; i < p.count; ++i) {
      for (std::uint32_t j = 0; j < p.count; ++j) {
        out.push_back(dot(x0 + j * p.spacing, i * p.spacing, p.radius, kBlack, g));
      }
    }
  }
  return out;
}

std::vector<GestaltElement> similarity(const GestaltParams& p, Engine& rng) {
  const std::size_t a = uniform_index(rng, std::size(kPalette));
  std::size_t b = uniform_index(rng, std::size(kPalette) - 1);
  if (b >= a) ++b;
  std::vector<GestaltElement> out;
  for (std::uint32_t i = 0; i < p.count; ++i) {
    for (std::uint32_t j = 0; j < 2 * p.count; ++j) {
      const std::int32_t g = j % 2;
      out.push_back(dot(j * p.spacing, i * p.spacing, p.radius, kPalette[g ? b : a], g));
    }
  }
  return out;
}

std::vector<GestaltElement> frame(double x0, double y0, double x1, double y1, double stroke) {
  const double r = stroke / 2.0;
  std::vector<GestaltElement> out;
  for (const Capsule& c : {Capsule{x0, y0, x1, y0, r}, Capsule{x1, y0, x1, y1, r},
                           Capsule{x1, y1, x0, y1, r}, Capsule{x0, y1, x0, y0, r}}) {
    out.push_back({c, false, true, kBlack, kIgnoreLabel});
  }
  return out;
}

std::vector<GestaltElement> enclosure(const GestaltParams& p) {
  require(p.spacing / 2.0 - p.stroke / 2.0 > p.radius + 0.5,
          "enclosure frame would touch the dots; increase spacing");
  std::vector<GestaltElement> out;
  const double h = p.spacing / 2.0;
  out = frame(-h, -h, (p.count - 1) * p.spacing + h, h, p.stroke);
  for (std::uint32_t j = 0; j < 2 * p.count; ++j) {
    out.push_back(dot(j * p.spacing, 0.0, p.radius, kBlack, j < p.count ? 1 : 0));
  }
  return out;
}

std::vector<GestaltElement> connection(const GestaltParams& p) {
  std::vector<GestaltElement> out;
  const double r = p.stroke / 2.0;
  for (std::uint32_t pair = 0; pair < p.count; ++pair) {
    const double x0 = 2 * pair * p.spacing, x1 = x0 + p.spacing;
    const auto label = static_cast<std::int32_t>(pair);
    out.push_back({Capsule{x0, 0.0, x1, 0.0, r}, false, true, kBlack, label});
    out.push_back(dot(x0, 0.0, p.radius, kBlack, label));
    out.push_back(dot(x1, 0.0, p.radius, kBlack, label));
  }
  return out;
}

std::vector<GestaltElement> continuity(const GestaltParams& p) {
  std::vector<GestaltElement> out;
  const auto n = static_cast<std::int32_t>(p.count);
  const double diag = std::numbers::sqrt2 / 2.0;
  for (std::int32_t i = -n; i <= n; ++i) out.push_back(dot(i * p.spacing, 0.0, p.radius, kBlack, 0));
  const double clear = 2.0 * p.radius + 1.0;
  for (std::int32_t i = -n; i <= n; ++i) {
    const double x = i * p.spacing * diag, y = i * p.spacing * diag;
    bool blocked = false;
    for (std::int32_t j = -n; j <= n; ++j) {
      blocked |= std::hypot(x - j * p.spacing, y) < clear;
    }
    if (!blocked) out.push_back(dot(x, y, p.radius, kBlack, 1));
  }
  return out;
}

std::vector<GestaltElement> closure(const GestaltParams& p) {
  const double radius = p.size * std::min(p.width, p.height) / 2.0 - p.stroke;
  require(radius > 2.0 * p.stroke, "closure figure too small for its stroke");
  std::vector<GestaltElement> out;
  out.push_back({Disk{0.0, 0.0, radius}, false, false, kWhite, 1});
  out.push_back({Disk{0.0, 0.0, radius}, true, false, kWhite, 0});
  // Dashed outline: 4 * count arcs, each covering half its angular slot.
  const std::uint32_t dashes = 4 * p.count;
  const double slot = 2.0 * std::numbers::pi / dashes;
  for (std::uint32_t i = 0; i < dashes; ++i) {
    const double a0 = i * slot, a1 = a0 + slot / 2.0;
    out.push_back({Capsule{radius * std::cos(a0), radius * std::sin(a0), radius * std::cos(a1),
                           radius * std::sin(a1), p.stroke / 2.0},
                   false, true, kBlack, kIgnoreLabel});
  }
  return out;
}

std::vector<GestaltElement> kanizsa(const GestaltParams& p) {
  const double half = p.size * std::min(p.width, p.height) / 2.0 * 0.7;
  const double inducer = half * 0.5;
  require(inducer >= 2.0, "kanizsa figure too small");
  std::vector<GestaltElement> out;
  for (double sx : {-1.0, 1.0}) {
    for (double sy : {-1.0, 1.0}) {
      out.push_back({Disk{sx * half, sy * half, inducer}, false, true, kBlack, kIgnoreLabel});
    }
  }
  // The illusory square is painted in the background color over the inducers.
  out.push_back({Rect{-half, -half, half, half}, false, true, kWhite, 1});
  out.push_back({Rect{-half, -half, half, half}, true, false, kWhite, 0});
  return out;
}

}  // namespace

bool GestaltElement::contains(double x, double y) const {
  bool in = false;
  if (auto* d = std::get_if<Disk>(&shape)) {
    const double dx = x - d->cx, dy = y - d->cy;
    in = dx * dx + dy * dy <= d->r * d->r;
  } else if (auto* c = std::get_if<Capsule>(&shape)) {
    const double vx = c->x1 - c->x0, vy = c->y1 - c->y0;
    const double len2 = vx * vx + vy * vy;
    double t = len2 > 0.0 ? ((x - c->x0) * vx + (y - c->y0) * vy) / len2 : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    const double dx = x - (c->x0 + t * vx), dy = y - (c->y0 + t * vy);
    in = dx * dx + dy * dy <= c->r * c->r;
  } else {
    const auto& r = std::get<Rect>(shape);
    in = x >= r.x0 && x <= r.x1 && y >= r.y0 && y <= r.y1;
  }
  return in != inverted;
}

std::string to_string(GestaltPrinciple principle) {
  switch (principle) {
    case GestaltPrinciple::closure: return "closure";
    case GestaltPrinciple::kanizsa: return "kanizsa";
    case GestaltPrinciple::connection: return "connection";
    case GestaltPrinciple::continuity: return "continuity";
    case GestaltPrinciple::enclosure: return "enclosure";
    case GestaltPrinciple::proximity: return "proximity";
    case GestaltPrinciple::similarity: return "similarity";
  }
  return "?";
}

const std::vector<GestaltPrinciple>& all_gestalt_principles() {
  static const std::vector<GestaltPrinciple> all{
      GestaltPrinciple::closure,   GestaltPrinciple::kanizsa,   GestaltPrinciple::connection,
      GestaltPrinciple::continuity, GestaltPrinciple::enclosure, GestaltPrinciple::proximity,
      GestaltPrinciple::similarity};
  return all;
}

GestaltPrinciple parse_gestalt_principle(const std::string& name) {
  for (auto p : all_gestalt_principles()) {
    if (to_string(p) == name) return p;
  }
  throw Error(Errc::usage, "unknown gestalt principle '" + name + "'");
}

json to_json(const GestaltParams& p) {
  return {{"width", p.width},   {"height", p.height}, {"radius", p.radius},
          {"spacing", p.spacing}, {"count", p.count},  {"stroke", p.stroke},
          {"jitter", p.jitter}, {"size", p.size}};
}

GestaltParams gestalt_params_from_json(const json& j) {
  try {
    GestaltParams p;
    p.width = j.value("width", p.width);
    p.height = j.value("height", p.height);
    p.radius = j.value("radius", p.radius);
    p.spacing = j.value("spacing", p.spacing);
    p.count = j.value("count", p.count);
    p.stroke = j.value("stroke", p.stroke);
    p.jitter = j.value("jitter", p.jitter);
    p.size = j.value("size", p.size);
    return p;
  } catch (const json::exception& e) {
    throw Error(Errc::format, std::string("bad gestalt params: ") + e.what());
  }
}

GestaltStimulus gen_gestalt(GestaltPrinciple principle, const GestaltParams& p, std::uint64_t seed) {
  require(p.width >= 8 && p.height >= 8, "image must be at least 8x8");
  require(p.width <= 8192 && p.height <= 8192, "image larger than 8192 on a side");
  require(std::isfinite(p.radius) && p.radius >= 1.0, "dot radius must be at least 1");
  require(std::isfinite(p.spacing) && p.spacing >= 2.0 * p.radius + 1.0,
          "spacing must leave dots disjoint (spacing >= 2 * radius + 1)");
  require(p.count >= 1 && p.count <= 64, "count must be in [1, 64]");
  require(std::isfinite(p.stroke) && p.stroke > 0.0, "stroke must be positive");
  require(std::isfinite(p.jitter) && p.jitter >= 0.0, "jitter must be non-negative");
  require(std::isfinite(p.size) && p.size > 0.0 && p.size <= 1.0, "size must be in (0, 1]");

  Engine rng(seed);
  std::vector<GestaltElement> elements;
  switch (principle) {
    case GestaltPrinciple::closure: elements = closure(p); break;
    case GestaltPrinciple::kanizsa: elements = kanizsa(p); break;
    case GestaltPrinciple::connection: elements = connection(p); break;
    case GestaltPrinciple::continuity: elements = continuity(p); break;
    case GestaltPrinciple::enclosure: elements = enclosure(p); break;
    case GestaltPrinciple::proximity: elements = proximity(p); break;
    case GestaltPrinciple::similarity: elements = similarity(p, rng); break;
  }

  Box box;
  for (const auto& e : elements) {
    if (e.inverted) continue;
    const Box b = bounds(e.shape);
    box.add(b.x0, b.y0, b.x1, b.y1);
  }
  const double w = box.x1 - box.x0, h = box.y1 - box.y0;
  require(w + 2.0 * p.jitter <= p.width && h + 2.0 * p.jitter <= p.height,
          "layout (" + std::to_string(w) + " x " + std::to_string(h) + " plus jitter " +
              std::to_string(p.jitter) + ") does not fit in " + std::to_string(p.width) + "x" +
              std::to_string(p.height));
  const double jx = p.jitter * (2.0 * unit_double(rng) - 1.0);
  const double jy = p.jitter * (2.0 * unit_double(rng) - 1.0);
  const double dx = (p.width - w) / 2.0 - box.x0 + jx;
  const double dy = (p.height - h) / 2.0 - box.y0 + jy;
  for (auto& e : elements) translate(e.shape, dx, dy);

  GestaltStimulus out;
  out.principle = principle;
  out.image = ProcImage(p.width, p.height);
  out.mask = LabelMask(p.height, p.width);
  for (std::uint32_t y = 0; y < p.height; ++y) {
    for (std::uint32_t x = 0; x < p.width; ++x) {
      const double px = x + 0.5, py = y + 0.5;
      Rgb color = kWhite;
      std::int32_t label = kIgnoreLabel;
      for (const auto& e : elements) {
        if (!e.contains(px, py)) continue;
        if (e.painted) color = e.color;
        if (e.label != kIgnoreLabel) label = e.label;
      }
      std::copy(color.begin(), color.end(), out.image.pixel(std::size_t{y} * p.width + x));
      out.mask.at(y, x) = label;
    }
  }
  out.image.provenance = {{"pipeline", "gestalt"},
                          {"seed", seed},
                          {"params", {{"principle", to_string(principle)}, {"geometry", to_json(p)}}}};
  out.elements = std::move(elements);
  return out;
}

}  // namespace vismem
