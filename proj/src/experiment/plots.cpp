#include "clta/experiment/plots.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>

#include "clta/errors.hpp"

namespace clta::exp {

namespace {

constexpr double kWidth = 640, kHeight = 400;
constexpr double kLeft = 70, kRight = 170, kTop = 40, kBottom = 50;
const char* const kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
                                "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

std::string fmt(double v, const char* spec = "%.2f") {
  char buf[48];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

struct Range {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();

  void add(double v) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  void settle() {
    if (!std::isfinite(lo)) lo = 0.0, hi = 1.0;
    if (hi - lo < 1e-12) lo -= 0.5, hi += 0.5;
  }
};

std::string safe_name(const std::string& id) {
  std::string out;
  for (char c : id) out += (std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_') ? c : '_';
  return out;
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
}

// Element-wise mean of equally indexed values, ignoring NaN.
std::vector<double> mean_curve(const std::vector<std::vector<double>>& curves) {
  std::size_t n = 0;
  for (const auto& c : curves) n = std::max(n, c.size());
  std::vector<double> out(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double sum = 0.0;
    std::size_t count = 0;
    for (const auto& c : curves) {
      if (i < c.size() && std::isfinite(c[i])) sum += c[i], ++count;
    }
    out[i] = count ? sum / static_cast<double>(count) : std::numeric_limits<double>::quiet_NaN();
  }
  return out;
}

}  // namespace

std::string render_svg(const LineChart& chart) {
  Range xr, yr;
  for (const auto& s : chart.series) {
    for (const auto& [x, y] : s.points) {
      if (std::isfinite(x) && std::isfinite(y)) xr.add(x), yr.add(y);
    }
  }
  xr.settle();
  yr.settle();
  const double pw = kWidth - kLeft - kRight, ph = kHeight - kTop - kBottom;
  auto sx = [&](double x) { return kLeft + (x - xr.lo) / (xr.hi - xr.lo) * pw; };
  auto sy = [&](double y) { return kTop + ph - (y - yr.lo) / (yr.hi - yr.lo) * ph; };

  std::string svg = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + fmt(kWidth, "%.0f") + "\" height=\"" +
                    fmt(kHeight, "%.0f") + "\" viewBox=\"0 0 " + fmt(kWidth, "%.0f") + " " + fmt(kHeight, "%.0f") +
                    "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  svg += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg += "<text x=\"" + fmt(kWidth / 2) + "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" +
         escape(chart.title) + "</text>\n";
  // Axes.
  svg += "<line x1=\"" + fmt(kLeft) + "\" y1=\"" + fmt(kTop + ph) + "\" x2=\"" + fmt(kLeft + pw) + "\" y2=\"" +
         fmt(kTop + ph) + "\" stroke=\"black\"/>\n";
  svg += "<line x1=\"" + fmt(kLeft) + "\" y1=\"" + fmt(kTop) + "\" x2=\"" + fmt(kLeft) + "\" y2=\"" + fmt(kTop + ph) +
         "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double xv = xr.lo + (xr.hi - xr.lo) * i / 4.0, yv = yr.lo + (yr.hi - yr.lo) * i / 4.0;
    svg += "<text x=\"" + fmt(sx(xv)) + "\" y=\"" + fmt(kTop + ph + 16) + "\" text-anchor=\"middle\">" +
           fmt(xv, "%.4g") + "</text>\n";
    svg += "<text x=\"" + fmt(kLeft - 6) + "\" y=\"" + fmt(sy(yv) + 4) + "\" text-anchor=\"end\">" + fmt(yv, "%.4g") +
           "</text>\n";
  }
  svg += "<text x=\"" + fmt(kLeft + pw / 2) + "\" y=\"" + fmt(kHeight - 10) + "\" text-anchor=\"middle\">" +
         escape(chart.x_label) + "</text>\n";
  svg += "<text x=\"16\" y=\"" + fmt(kTop + ph / 2) + "\" text-anchor=\"middle\" transform=\"rotate(-90 16 " +
         fmt(kTop + ph / 2) + ")\">" + escape(chart.y_label) + "</text>\n";

  for (std::size_t i = 0; i < chart.series.size(); ++i) {
    const auto& s = chart.series[i];
    const char* color = kPalette[i % std::size(kPalette)];
    std::string pts;
    for (const auto& [x, y] : s.points) {
      if (!std::isfinite(x) || !std::isfinite(y)) continue;
      if (!pts.empty()) pts += ' ';
      pts += fmt(sx(x)) + "," + fmt(sy(y));
    }
    svg += "<polyline fill=\"none\" stroke=\"" + std::string(color) + "\" stroke-width=\"1.5\" points=\"" + pts +
           "\"/>\n";
    const double ly = kTop + 14.0 * static_cast<double>(i) + 6;
    svg += "<rect x=\"" + fmt(kWidth - kRight + 12) + "\" y=\"" + fmt(ly - 8) + "\" width=\"10\" height=\"10\" fill=\"" +
           color + "\"/>\n";
    svg += "<text x=\"" + fmt(kWidth - kRight + 26) + "\" y=\"" + fmt(ly + 1) + "\">" + escape(s.name) + "</text>\n";
  }
  svg += "</svg>\n";
  return svg;
}

PlotReport emit_plots(const ResultsTable& table, const std::filesystem::path& dir) {
  PlotReport report;
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());

  std::vector<std::string> ids;
  for (const auto& r : table.rows) {
    if (std::find(ids.begin(), ids.end(), r.config_id) == ids.end()) ids.push_back(r.config_id);
  }

  // Loss curves: every task's epochs laid end to end, averaged over seeds.
  for (const auto& id : ids) {
    std::vector<std::vector<double>> ce_runs, kd_runs;
    for (const auto& r : table.rows) {
      if (r.config_id != id || !r.ok || !r.run) continue;
      std::vector<double> ce, kd;
      for (const auto& t : r.run->tasks) {
        ce.insert(ce.end(), t.ce.begin(), t.ce.end());
        kd.insert(kd.end(), t.kd.begin(), t.kd.end());
      }
      ce_runs.push_back(std::move(ce));
      kd_runs.push_back(std::move(kd));
    }
    if (ce_runs.empty()) {
      report.warnings.push_back("no loss traces for " + id + "; loss plot skipped");
      continue;
    }
    LineChart chart{"Training losses: " + id, "epoch (tasks in sequence)", "loss", {}};
    for (auto [name, runs] : {std::pair{"CE", &ce_runs}, std::pair{"KD", &kd_runs}}) {
      Series s{name, {}};
      const auto curve = mean_curve(*runs);
      for (std::size_t e = 0; e < curve.size(); ++e) s.points.emplace_back(static_cast<double>(e + 1), curve[e]);
      chart.series.push_back(std::move(s));
    }
    const auto path = dir / ("loss_" + safe_name(id) + ".svg");
    write_file(path, render_svg(chart));
    report.written.push_back(path);
  }

  // A_k over tasks, one series per config.
  LineChart acc{"Average incremental accuracy", "task", "A_k", {}};
  for (const auto& agg : table.aggregates) {
    if (agg.a_k_mean.empty()) continue;
    Series s{agg.config_id, {}};
    for (std::size_t k = 0; k < agg.a_k_mean.size(); ++k) s.points.emplace_back(static_cast<double>(k + 1), agg.a_k_mean[k]);
    acc.series.push_back(std::move(s));
  }
  if (acc.series.empty()) {
    report.warnings.push_back("no accuracy results; accuracy plot skipped");
  } else {
    const auto path = dir / "accuracy.svg";
    write_file(path, render_svg(acc));
    report.written.push_back(path);
  }

  // Accuracy versus severity, one series per strategy.
  std::map<std::string, std::map<int, std::vector<double>>> by_strategy;
  std::vector<std::string> strategy_order;
  std::vector<int> severities;
  for (const auto& r : table.rows) {
    if (!r.ok) continue;
    if (std::find(strategy_order.begin(), strategy_order.end(), r.strategy) == strategy_order.end()) {
      strategy_order.push_back(r.strategy);
    }
    if (std::find(severities.begin(), severities.end(), r.severity) == severities.end()) severities.push_back(r.severity);
    by_strategy[r.strategy][r.severity].push_back(r.acc_inc);
  }
  if (severities.size() > 1) {
    LineChart sev{"Accuracy under corruption", "noise severity", "Acc_Inc", {}};
    std::sort(severities.begin(), severities.end());
    for (const auto& name : strategy_order) {
      Series s{name, {}};
      for (int level : severities) {
        auto it = by_strategy[name].find(level);
        if (it == by_strategy[name].end()) continue;
        s.points.emplace_back(static_cast<double>(level), mean_std(it->second).first);
      }
      sev.series.push_back(std::move(s));
    }
    const auto path = dir / "severity.svg";
    write_file(path, render_svg(sev));
    report.written.push_back(path);
  } else {
    report.warnings.push_back("fewer than two corruption severities; severity plot skipped");
  }
  return report;
}

}  // namespace clta::exp
