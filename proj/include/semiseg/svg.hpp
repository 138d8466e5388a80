#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace semiseg {

// Minimal static line-plot writer; enough for sweep summaries and training
// curves without an external plotting dependency.
struct PlotSeries {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
};

void write_line_plot_svg(const std::filesystem::path& path, const std::string& title,
                         const std::string& x_label, const std::string& y_label,
                         const std::vector<PlotSeries>& series);

}  // namespace semiseg
