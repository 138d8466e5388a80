#include "semiseg/svg.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

namespace semiseg {

namespace {

const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.4g", v);
  return buf;
}

}  // namespace

void write_line_plot_svg(const std::filesystem::path& path, const std::string& title,
                         const std::string& x_label, const std::string& y_label,
                         const std::vector<PlotSeries>& series) {
  const double W = 640, H = 420, ML = 70, MR = 20, MT = 40, MB = 55;
  double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
  for (const auto& s : series)
    for (size_t i = 0; i < s.x.size(); ++i) {
      xmin = std::min(xmin, s.x[i]);
      xmax = std::max(xmax, s.x[i]);
      ymin = std::min(ymin, s.y[i]);
      ymax = std::max(ymax, s.y[i]);
    }
  if (xmin > xmax) {
    xmin = 0;
    xmax = 1;
    ymin = 0;
    ymax = 1;
  }
  if (xmax == xmin) xmax = xmin + 1;
  if (ymax == ymin) ymax = ymin + (ymin == 0 ? 1 : std::abs(ymin) * 0.1);
  const double ypad = 0.05 * (ymax - ymin);
  ymin -= ypad;
  ymax += ypad;

  auto px = [&](double x) { return ML + (x - xmin) / (xmax - xmin) * (W - ML - MR); };
  auto py = [&](double y) { return H - MB - (y - ymin) / (ymax - ymin) * (H - MT - MB); };

  std::ofstream out(path);
  if (!out.good()) throw std::runtime_error("cannot write plot " + path.string());
  out << "<svg xmlns='http://www.w3.org/2000/svg' width='" << W << "' height='" << H
      << "' font-family='sans-serif' font-size='12'>\n";
  out << "<rect width='100%' height='100%' fill='white'/>\n";
  out << "<text x='" << W / 2 << "' y='22' text-anchor='middle' font-size='15'>" << title
      << "</text>\n";

  for (int i = 0; i <= 5; ++i) {
    const double xv = xmin + (xmax - xmin) * i / 5.0;
    const double yv = ymin + (ymax - ymin) * i / 5.0;
    out << "<line x1='" << px(xv) << "' y1='" << MT << "' x2='" << px(xv) << "' y2='" << H - MB
        << "' stroke='#e0e0e0'/>\n";
    out << "<line x1='" << ML << "' y1='" << py(yv) << "' x2='" << W - MR << "' y2='" << py(yv)
        << "' stroke='#e0e0e0'/>\n";
    out << "<text x='" << px(xv) << "' y='" << H - MB + 18 << "' text-anchor='middle'>"
        << fmt(xv) << "</text>\n";
    out << "<text x='" << ML - 8 << "' y='" << py(yv) + 4 << "' text-anchor='end'>" << fmt(yv)
        << "</text>\n";
  }
  out << "<rect x='" << ML << "' y='" << MT << "' width='" << W - ML - MR << "' height='"
      << H - MT - MB << "' fill='none' stroke='black'/>\n";
  out << "<text x='" << W / 2 << "' y='" << H - 12 << "' text-anchor='middle'>" << x_label
      << "</text>\n";
  out << "<text x='18' y='" << H / 2 << "' text-anchor='middle' transform='rotate(-90 18 "
      << H / 2 << ")'>" << y_label << "</text>\n";

  for (size_t si = 0; si < series.size(); ++si) {
    const auto& s = series[si];
    const char* color = kColors[si % 6];
    out << "<polyline fill='none' stroke='" << color << "' stroke-width='1.8' points='";
    for (size_t i = 0; i < s.x.size(); ++i) out << px(s.x[i]) << "," << py(s.y[i]) << " ";
    out << "'/>\n";
    for (size_t i = 0; i < s.x.size(); ++i)
      out << "<circle cx='" << px(s.x[i]) << "' cy='" << py(s.y[i]) << "' r='2.6' fill='"
          << color << "'/>\n";
    out << "<text x='" << W - MR - 8 << "' y='" << MT + 16 + 16 * si
        << "' text-anchor='end' fill='" << color << "'>" << s.label << "</text>\n";
  }
  out << "</svg>\n";
}

}  // namespace semiseg
