#include "mess3/svg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <stdexcept>

namespace mess3::svg {

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

std::string hex_color(const Vec3& rgb) {
  char buf[8];
  auto channel = [](double c) {
    return int(std::lround(255.0 * std::clamp(c, 0.0, 1.0)));
  };
  std::snprintf(buf, sizeof(buf), "#%02x%02x%02x", channel(rgb[0]), channel(rgb[1]), channel(rgb[2]));
  return buf;
}

constexpr double kSimplexHeight = 0.8660254037844386;  // sqrt(3)/2

void render_into(std::ostringstream& out, const std::vector<Point>& points, const Frame& frame,
                 double x_off) {
  const double plot_w = frame.width - 2 * frame.margin;
  const double plot_h = frame.height - 2 * frame.margin;
  const double scale = std::min(plot_w, plot_h / kSimplexHeight);

  auto px = [&](double x) { return x_off + frame.margin + x * scale; };
  auto py = [&](double y) { return frame.height - frame.margin - y * scale; };

  // triangle frame
  out << "<polygon points=\"" << fmt(px(0)) << ',' << fmt(py(0)) << ' ' << fmt(px(1)) << ','
      << fmt(py(0)) << ' ' << fmt(px(0.5)) << ',' << fmt(py(kSimplexHeight))
      << "\" fill=\"none\" stroke=\"#888888\" stroke-width=\"1\"/>\n";
  if (!frame.title.empty())
    out << "<text x=\"" << fmt(x_off + frame.width / 2) << "\" y=\"" << fmt(frame.margin * 0.6)
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\">" << frame.title
        << "</text>\n";
  for (const Point& p : points)
    out << "<circle cx=\"" << fmt(px(p.x)) << "\" cy=\"" << fmt(py(p.y))
        << "\" r=\"1.1\" fill=\"" << hex_color(p.rgb) << "\"/>\n";
}

}  // namespace

std::string render_svg(const std::vector<Point>& points, const Frame& frame) {
  if (points.empty()) throw std::invalid_argument("render_svg: no points to draw");
  std::ostringstream out;
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << fmt(frame.width) << "\" height=\""
      << fmt(frame.height) << "\" viewBox=\"0 0 " << fmt(frame.width) << ' ' << fmt(frame.height)
      << "\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  render_into(out, points, frame, 0.0);
  out << "</svg>\n";
  return out.str();
}

std::string render_panels(const std::vector<std::vector<Point>>& panels,
                          const std::vector<std::string>& titles) {
  if (panels.empty()) throw std::invalid_argument("render_panels: no panels");
  Frame frame;
  const double total_w = frame.width * double(panels.size());
  std::ostringstream out;
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << fmt(total_w) << "\" height=\""
      << fmt(frame.height) << "\" viewBox=\"0 0 " << fmt(total_w) << ' ' << fmt(frame.height)
      << "\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  for (std::size_t i = 0; i < panels.size(); ++i) {
    if (panels[i].empty()) throw std::invalid_argument("render_panels: empty panel");
    Frame f = frame;
    if (i < titles.size()) f.title = titles[i];
    render_into(out, panels[i], f, frame.width * double(i));
  }
  out << "</svg>\n";
  return out.str();
}

}  // namespace mess3::svg
