#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <map>
#include <set>

#include "vismem/error.hpp"
#include "vismem/gestalt.hpp"

using namespace vismem;

namespace {

// Recomputes the label of a pixel from the analytic shapes alone.
std::int32_t label_from_geometry(const GestaltStimulus& s, std::uint32_t x, std::uint32_t y) {
  std::int32_t label = kIgnoreLabel;
  for (const auto& e : s.elements) {
    if (e.label != kIgnoreLabel && e.contains(x + 0.5, y + 0.5)) label = e.label;
  }
  return label;
}

std::set<std::int32_t> labels_of(const LabelMask& m) {
  std::set<std::int32_t> out;
  for (auto l : m.labels)
    if (l != kIgnoreLabel) out.insert(l);
  return out;
}

}  // namespace

TEST_CASE("every principle renders a mask consistent with its geometry") {
  for (auto principle : all_gestalt_principles()) {
    CAPTURE(to_string(principle));
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      const GestaltStimulus s = gen_gestalt(principle, {}, seed);
      REQUIRE(s.image.width == 128);
      REQUIRE(s.mask.cols == 128);
      REQUIRE(s.mask.rows == 128);
      for (std::uint32_t y = 0; y < 128; ++y) {
        for (std::uint32_t x = 0; x < 128; ++x) {
          const std::int32_t l = s.mask.at(y, x);
          REQUIRE(l == label_from_geometry(s, x, y));
          if (l == kIgnoreLabel) continue;
          bool inside = false;
          for (const auto& e : s.elements) inside |= e.label == l && e.contains(x + 0.5, y + 0.5);
          REQUIRE(inside);
        }
      }
      CHECK(labels_of(s.mask).size() >= 2);
      CHECK(gen_gestalt(principle, {}, seed).image == s.image);
      CHECK(parse_gestalt_principle(to_string(principle)) == principle);
    }
  }
  CHECK_THROWS_AS(parse_gestalt_principle("symmetry"), Error);
}

TEST_CASE("every labeled element covers at least one pixel center") {
  for (auto principle : all_gestalt_principles()) {
    CAPTURE(to_string(principle));
    const GestaltStimulus s = gen_gestalt(principle, {}, 3);
    for (const auto& e : s.elements) {
      if (e.label == kIgnoreLabel || e.inverted) continue;
      bool covered = false;
      for (std::uint32_t y = 0; y < 128 && !covered; ++y)
        for (std::uint32_t x = 0; x < 128 && !covered; ++x)
          covered = e.contains(x + 0.5, y + 0.5) && s.mask.at(y, x) == e.label;
      CHECK(covered);
    }
  }
}

TEST_CASE("proximity labels two dot groups over an ignored background") {
  const GestaltStimulus s = gen_gestalt(GestaltPrinciple::proximity, {}, 0);
  CHECK(labels_of(s.mask) == std::set<std::int32_t>{0, 1});
  double mean_x[2] = {0, 0};
  std::size_t n[2] = {0, 0};
  for (std::uint32_t y = 0; y < 128; ++y)
    for (std::uint32_t x = 0; x < 128; ++x) {
      const float* px = s.image.pixel(std::size_t{y} * 128 + x);
      const bool white = px[0] == 1.0f && px[1] == 1.0f && px[2] == 1.0f;
      const auto l = s.mask.at(y, x);
      CHECK(white == (l == kIgnoreLabel));
      if (l >= 0) mean_x[l] += x, ++n[l];
    }
  CHECK(n[0] == n[1]);
  CHECK(mean_x[0] / n[0] < mean_x[1] / n[1]);
}

TEST_CASE("similarity groups by color, not position") {
  const GestaltStimulus s = gen_gestalt(GestaltPrinciple::similarity, {}, 11);
  std::map<std::int32_t, std::set<std::array<float, 3>>> colors;
  for (std::size_t i = 0; i < s.image.pixels(); ++i) {
    const auto l = s.mask.labels[i];
    if (l == kIgnoreLabel) continue;
    const float* px = s.image.pixel(i);
    colors[l].insert({px[0], px[1], px[2]});
  }
  REQUIRE(colors.size() == 2);
  CHECK(colors[0].size() == 1);
  CHECK(colors[1].size() == 1);
  CHECK(*colors[0].begin() != *colors[1].begin());
}

TEST_CASE("enclosure separates identical dots by the frame") {
  const GestaltStimulus s = gen_gestalt(GestaltPrinciple::enclosure, {}, 2);
  std::set<std::array<float, 3>> dot_colors;
  std::size_t inside = 0, outside = 0;
  for (const auto& e : s.elements) {
    if (!std::holds_alternative<Disk>(e.shape)) continue;
    dot_colors.insert(e.color);
    (e.label == 1 ? inside : outside) += 1;
  }
  CHECK(dot_colors.size() == 1);
  CHECK(inside == 3);
  CHECK(outside == 3);
  CHECK(labels_of(s.mask) == std::set<std::int32_t>{0, 1});
}

TEST_CASE("connection pairs share a label") {
  const GestaltStimulus s = gen_gestalt(GestaltPrinciple::connection, {}, 4);
  CHECK(labels_of(s.mask) == std::set<std::int32_t>{0, 1, 2});
}

TEST_CASE("seed moves the layout only within the jitter") {
  GestaltParams p;
  p.jitter = 0;
  CHECK(gen_gestalt(GestaltPrinciple::proximity, p, 1).image.data ==
        gen_gestalt(GestaltPrinciple::proximity, p, 2).image.data);
  p.jitter = 6;
  CHECK(gen_gestalt(GestaltPrinciple::proximity, p, 1).mask.labels !=
        gen_gestalt(GestaltPrinciple::proximity, p, 2).mask.labels);
}

TEST_CASE("infeasible geometry is rejected") {
  auto fails = [](GestaltPrinciple pr, auto edit) {
    GestaltParams p;
    edit(p);
    CHECK_THROWS_AS(gen_gestalt(pr, p, 0), Error);
  };
  fails(GestaltPrinciple::proximity, [](auto& p) { p.spacing = 2 * p.radius; });
  fails(GestaltPrinciple::proximity, [](auto& p) { p.count = 10; });
  fails(GestaltPrinciple::similarity, [](auto& p) { p.radius = 0.5; });
  fails(GestaltPrinciple::enclosure, [](auto& p) { p.spacing = 2 * p.radius + 2; });
  fails(GestaltPrinciple::closure, [](auto& p) { p.size = 0.05; });
  fails(GestaltPrinciple::kanizsa, [](auto& p) { p.size = 0; });
  fails(GestaltPrinciple::connection, [](auto& p) { p.width = 4; });
  fails(GestaltPrinciple::proximity, [](auto& p) { p.jitter = 100; });
}
