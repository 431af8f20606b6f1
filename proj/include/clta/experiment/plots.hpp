#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "clta/experiment/results.hpp"

namespace clta::exp {

struct Series {
  std::string name;
  std::vector<std::pair<double, double>> points;
};

struct LineChart {
  std::string title;
  std::string x_label;
  std::string y_label;
  std::vector<Series> series;
};

// Self-contained SVG: axes as <line>, one <polyline> per series, legend
// and labels as <text>. Output depends only on the chart contents.
std::string render_svg(const LineChart& chart);

struct PlotReport {
  std::vector<std::filesystem::path> written;
  std::vector<std::string> warnings;  // what was absent and therefore skipped
};

// Loss curves per config (mean over seeds, tasks laid end to end), A_k over
// tasks, and accuracy versus corruption severity when a sweep covered more
// than one severity.
PlotReport emit_plots(const ResultsTable& table, const std::filesystem::path& dir);

}  // namespace clta::exp
