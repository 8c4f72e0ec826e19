#pragma once

#include <string>
#include <vector>

#include "mess3/linalg.hpp"

namespace mess3::svg {

struct Point {
  double x = 0.0;
  double y = 0.0;
  Vec3 rgb{};
};

struct Frame {
  double width = 560.0;
  double height = 520.0;
  double margin = 30.0;
  std::string title;
};

// Deterministic standalone SVG scatter in barycentric frame coordinates
// (input x in [0,1], y in [0, sqrt(3)/2]). Throws on empty input.
std::string render_svg(const std::vector<Point>& points, const Frame& frame);

// Side-by-side panels, one frame per panel (Fig-style four-column layouts).
std::string render_panels(const std::vector<std::vector<Point>>& panels,
                          const std::vector<std::string>& titles);

}  // namespace mess3::svg
