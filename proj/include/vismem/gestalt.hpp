#pragma once

// Gestalt grouping stimuli rendered from analytic shapes, each paired with the
// ground-truth grouping mask implied by its construction.

#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "vismem/procgen.hpp"
#include "vismem/segmentation.hpp"

namespace vismem {

enum class GestaltPrinciple { closure, kanizsa, connection, continuity, enclosure, proximity, similarity };

std::string to_string(GestaltPrinciple principle);
GestaltPrinciple parse_gestalt_principle(const std::string& name);
const std::vector<GestaltPrinciple>& all_gestalt_principles();

struct GestaltParams {
  std::uint32_t width = 128;
  std::uint32_t height = 128;
  double radius = 5.0;    // dot radius
  double spacing = 14.0;  // center distance between neighboring dots
  std::uint32_t count = 3;
  double stroke = 2.0;    // line width of bars, frames and dashes
  double jitter = 4.0;    // max global offset drawn from the seed
  double size = 0.5;      // figure extent for closure / kanizsa, fraction of the short side
};

nlohmann::json to_json(const GestaltParams& params);
GestaltParams gestalt_params_from_json(const nlohmann::json& j);

struct Disk {
  double cx, cy, r;
};
struct Capsule {  // segment with round caps
  double x0, y0, x1, y1, r;
};
struct Rect {
  double x0, y0, x1, y1;
};
using Shape = std::variant<Disk, Capsule, Rect>;

struct GestaltElement {
  Shape shape;
  bool inverted = false;  // element covers the shape's complement
  bool painted = true;
  Rgb color{0.0f, 0.0f, 0.0f};
  std::int32_t label = kIgnoreLabel;

  bool contains(double x, double y) const;
};

struct GestaltStimulus {
  GestaltPrinciple principle = GestaltPrinciple::proximity;
  ProcImage image;  // white background, later elements paint over earlier ones
  LabelMask mask;   // last labeled element containing the pixel center wins
  std::vector<GestaltElement> elements;
};

// Throws Errc::usage on invalid or geometrically infeasible params.
GestaltStimulus gen_gestalt(GestaltPrinciple principle, const GestaltParams& params,
                            std::uint64_t seed);

}  // namespace vismem
