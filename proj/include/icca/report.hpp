#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "icca/metrics.hpp"
#include "icca/util.hpp"

namespace icca {

// ---------------------------------------------------------------------------
// Metrics CSV read-back. The writer leaves mean/CI cells empty for
// repetitions with no data; external CSVs may also omit CIs entirely, which
// degrades the chart to a plain line.
// ---------------------------------------------------------------------------

struct SeriesPoint {
  int repetition = 0;
  double mean = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  long n = 0;
  long excluded_pairs = 0;
  bool has_value = false;
  bool has_ci = false;
};

struct NamedSeries {
  std::string name;  // legend label, normally the CSV file stem
  Metric metric = Metric::Length;
  std::vector<SeriesPoint> points;
};

struct MetricsFile {
  std::string label;
  std::map<Metric, NamedSeries> series;
};

namespace detail {

inline std::vector<std::string> split_csv_row(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  for (char c : line) {
    if (c == ',') {
      cells.push_back(cell);
      cell.clear();
    } else if (c != '\r') {
      cell += c;
    }
  }
  cells.push_back(cell);
  return cells;
}

inline std::optional<double> parse_cell(const std::string& cell, const std::string& where) {
  std::string s = std::string(trim(cell));
  if (s.empty()) return std::nullopt;
  std::size_t pos = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &pos);
  } catch (const std::exception&) {
    throw ParseError(where + ": not a number: '" + s + "'");
  }
  if (pos != s.size()) throw ParseError(where + ": not a number: '" + s + "'");
  return v;
}

}  // namespace detail

inline MetricsFile read_metrics_csv(const std::filesystem::path& path,
                                    std::string label = std::string()) {
  MetricsFile file;
  file.label = label.empty() ? path.stem().string() : std::move(label);
  std::string content = read_text_file(path);
  std::vector<std::string> lines = split_lines(content);
  if (lines.empty() || (lines.size() == 1 && trim(lines[0]).empty())) {
    throw ParseError(path.string() + ": empty metrics CSV");
  }
  if (trim(lines[0]) != "metric,repetition,mean,ci_low,ci_high,n,excluded_pairs") {
    throw ParseError(path.string() + ": unexpected header '" + lines[0] +
                     "' (expected metric,repetition,mean,ci_low,ci_high,n,excluded_pairs)");
  }
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (trim(lines[i]).empty()) continue;
    std::string where = path.string() + ":" + std::to_string(i + 1);
    std::vector<std::string> cells = detail::split_csv_row(lines[i]);
    if (cells.size() != 7) {
      throw ParseError(where + ": expected 7 cells, got " + std::to_string(cells.size()));
    }
    Metric metric;
    try {
      metric = metric_from_name(cells[0]);
    } catch (const ConfigError&) {
      throw ParseError(where + ": unknown metric '" + cells[0] + "'");
    }
    SeriesPoint p;
    auto rep = detail::parse_cell(cells[1], where);
    if (!rep || *rep < 1 || *rep != std::floor(*rep)) {
      throw ParseError(where + ": repetition must be a positive integer");
    }
    p.repetition = static_cast<int>(*rep);
    auto mean = detail::parse_cell(cells[2], where);
    auto low = detail::parse_cell(cells[3], where);
    auto high = detail::parse_cell(cells[4], where);
    auto n = detail::parse_cell(cells[5], where);
    auto excl = detail::parse_cell(cells[6], where);
    if (mean) {
      p.mean = *mean;
      p.has_value = true;
    }
    if (low && high) {
      p.ci_low = *low;
      p.ci_high = *high;
      p.has_ci = true;
    }
    p.n = n ? static_cast<long>(*n) : 0;
    p.excluded_pairs = excl ? static_cast<long>(*excl) : 0;
    NamedSeries& s = file.series[metric];
    s.name = file.label;
    s.metric = metric;
    s.points.push_back(p);
  }
  for (auto& [m, s] : file.series) {
    std::sort(s.points.begin(), s.points.end(),
              [](const SeriesPoint& a, const SeriesPoint& b) { return a.repetition < b.repetition; });
  }
  return file;
}

// ---------------------------------------------------------------------------
// SVG line charts. Pure string assembly with fixed-precision coordinates so
// the same inputs always render the same bytes.
// ---------------------------------------------------------------------------

struct ChartResult {
  std::string svg;
  std::vector<std::string> warnings;
};

namespace detail {

inline std::string fixed2(double v) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

inline const char* series_color(std::size_t index) {
  static const char* kColors[] = {"#4878a8", "#e1812c", "#3a923a",
                                  "#c03d3e", "#9372b2", "#8c613c"};
  return kColors[index % (sizeof(kColors) / sizeof(kColors[0]))];
}

struct AxisTicks {
  double lo = 0.0, hi = 1.0, step = 0.25;
};

inline AxisTicks nice_axis(double min_v, double max_v) {
  if (min_v > max_v) std::swap(min_v, max_v);
  if (max_v - min_v < 1e-12) {
    min_v -= 0.5;
    max_v += 0.5;
  }
  double span = max_v - min_v;
  double raw_step = span / 4.0;
  double mag = std::pow(10.0, std::floor(std::log10(raw_step)));
  double norm = raw_step / mag;
  double step = (norm <= 1.0 ? 1.0 : norm <= 2.0 ? 2.0 : norm <= 2.5 ? 2.5 : norm <= 5.0 ? 5.0 : 10.0) * mag;
  AxisTicks t;
  t.step = step;
  t.lo = std::floor(min_v / step) * step;
  t.hi = std::ceil(max_v / step) * step;
  return t;
}

inline void xml_escape_into(std::string& out, const std::string& text) {
  for (char c : text) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
}

}  // namespace detail

inline ChartResult render_metric_chart(Metric metric, std::span<const NamedSeries> series) {
  constexpr double kWidth = 640.0, kHeight = 400.0;
  constexpr double kLeft = 64.0, kRight = 20.0, kTop = 44.0, kBottom = 56.0;
  const double plot_w = kWidth - kLeft - kRight;
  const double plot_h = kHeight - kTop - kBottom;

  ChartResult result;

  int max_rep = 1;
  double min_v = 0.0, max_v = 1.0;
  bool any_value = false;
  for (const NamedSeries& s : series) {
    bool series_ci = false;
    for (const SeriesPoint& p : s.points) {
      max_rep = std::max(max_rep, p.repetition);
      if (!p.has_value) continue;
      double lo = p.has_ci ? std::min(p.ci_low, p.mean) : p.mean;
      double hi = p.has_ci ? std::max(p.ci_high, p.mean) : p.mean;
      if (!any_value) {
        min_v = lo;
        max_v = hi;
        any_value = true;
      } else {
        min_v = std::min(min_v, lo);
        max_v = std::max(max_v, hi);
      }
      series_ci = series_ci || p.has_ci;
    }
    if (!series_ci) {
      result.warnings.push_back("series '" + s.name + "' (" + metric_name(metric) +
                                "): no confidence intervals; drawing the line without a band");
    }
  }
  if (!any_value) {
    result.warnings.push_back(std::string("metric ") + metric_name(metric) +
                              ": no data points; chart is empty");
  }
  detail::AxisTicks y = detail::nice_axis(min_v, max_v);

  auto x_of = [&](double rep) {
    if (max_rep <= 1) return kLeft + plot_w / 2.0;
    return kLeft + (rep - 1.0) / (max_rep - 1.0) * plot_w;
  };
  auto y_of = [&](double v) {
    return kTop + (y.hi - v) / (y.hi - y.lo) * plot_h;
  };

  std::string svg;
  svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"400\" "
         "viewBox=\"0 0 640 400\">\n";
  svg += "<rect x=\"0\" y=\"0\" width=\"640\" height=\"400\" fill=\"#ffffff\"/>\n";
  svg += "<text x=\"320\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" "
         "font-size=\"16\">";
  detail::xml_escape_into(svg, metric_name(metric));
  svg += " per repetition</text>\n";

  // Gridlines + y tick labels.
  for (double v = y.lo; v <= y.hi + y.step * 1e-9; v += y.step) {
    std::string yy = detail::fixed2(y_of(v));
    svg += "<line x1=\"" + detail::fixed2(kLeft) + "\" y1=\"" + yy + "\" x2=\"" +
           detail::fixed2(kWidth - kRight) + "\" y2=\"" + yy +
           "\" stroke=\"#dddddd\" stroke-width=\"1\"/>\n";
    svg += "<text x=\"" + detail::fixed2(kLeft - 8.0) + "\" y=\"" + yy +
           "\" text-anchor=\"end\" dominant-baseline=\"middle\" font-family=\"sans-serif\" "
           "font-size=\"11\">" +
           format_double(v, 6) + "</text>\n";
  }

  // X ticks: one per repetition.
  for (int r = 1; r <= max_rep; ++r) {
    std::string xx = detail::fixed2(x_of(r));
    svg += "<line x1=\"" + xx + "\" y1=\"" + detail::fixed2(kTop + plot_h) + "\" x2=\"" + xx +
           "\" y2=\"" + detail::fixed2(kTop + plot_h + 5.0) +
           "\" stroke=\"#333333\" stroke-width=\"1\"/>\n";
    svg += "<text x=\"" + xx + "\" y=\"" + detail::fixed2(kTop + plot_h + 20.0) +
           "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">Repetition " +
           std::to_string(r) + "</text>\n";
  }

  // Axes.
  svg += "<line x1=\"" + detail::fixed2(kLeft) + "\" y1=\"" + detail::fixed2(kTop) + "\" x2=\"" +
         detail::fixed2(kLeft) + "\" y2=\"" + detail::fixed2(kTop + plot_h) +
         "\" stroke=\"#333333\" stroke-width=\"1\"/>\n";
  svg += "<line x1=\"" + detail::fixed2(kLeft) + "\" y1=\"" + detail::fixed2(kTop + plot_h) +
         "\" x2=\"" + detail::fixed2(kWidth - kRight) + "\" y2=\"" +
         detail::fixed2(kTop + plot_h) + "\" stroke=\"#333333\" stroke-width=\"1\"/>\n";

  // CI bands first (under the lines).
  for (std::size_t si = 0; si < series.size(); ++si) {
    const NamedSeries& s = series[si];
    std::vector<const SeriesPoint*> pts;
    for (const SeriesPoint& p : s.points) {
      if (p.has_value && p.has_ci) pts.push_back(&p);
    }
    if (pts.size() < 2) continue;
    std::string poly = "<polygon points=\"";
    for (const SeriesPoint* p : pts) {
      poly += detail::fixed2(x_of(p->repetition)) + "," + detail::fixed2(y_of(p->ci_high)) + " ";
    }
    for (auto it = pts.rbegin(); it != pts.rend(); ++it) {
      poly += detail::fixed2(x_of((*it)->repetition)) + "," +
              detail::fixed2(y_of((*it)->ci_low)) + " ";
    }
    poly.pop_back();
    poly += std::string("\" fill=\"") + detail::series_color(si) +
            "\" fill-opacity=\"0.18\" stroke=\"none\"/>\n";
    svg += poly;
  }

  // Lines + markers.
  for (std::size_t si = 0; si < series.size(); ++si) {
    const NamedSeries& s = series[si];
    std::string line = "<polyline points=\"";
    bool any = false;
    for (const SeriesPoint& p : s.points) {
      if (!p.has_value) continue;
      line += detail::fixed2(x_of(p.repetition)) + "," + detail::fixed2(y_of(p.mean)) + " ";
      any = true;
    }
    if (any) {
      line.pop_back();
      line += std::string("\" fill=\"none\" stroke=\"") + detail::series_color(si) +
              "\" stroke-width=\"2\"/>\n";
      svg += line;
    }
    for (const SeriesPoint& p : s.points) {
      if (!p.has_value) continue;
      svg += std::string("<circle cx=\"") + detail::fixed2(x_of(p.repetition)) + "\" cy=\"" +
             detail::fixed2(y_of(p.mean)) + "\" r=\"3\" fill=\"" + detail::series_color(si) +
             "\"/>\n";
    }
  }

  // Legend, top-right inside the plot area.
  for (std::size_t si = 0; si < series.size(); ++si) {
    double ly = kTop + 10.0 + 16.0 * static_cast<double>(si);
    svg += std::string("<rect x=\"") + detail::fixed2(kWidth - kRight - 150.0) + "\" y=\"" +
           detail::fixed2(ly - 5.0) + "\" width=\"10\" height=\"10\" fill=\"" +
           detail::series_color(si) + "\"/>\n";
    svg += "<text x=\"" + detail::fixed2(kWidth - kRight - 136.0) + "\" y=\"" +
           detail::fixed2(ly + 4.0) +
           "\" font-family=\"sans-serif\" font-size=\"12\">";
    detail::xml_escape_into(svg, series[si].name);
    svg += "</text>\n";
  }

  svg += "</svg>\n";
  result.svg = std::move(svg);
  return result;
}

// Plain-text summary: one block per metric, one row per (series, repetition).
inline std::string summary_table(std::span<const MetricsFile> files) {
  std::string out;
  for (Metric m : {Metric::Length, Metric::Accuracy, Metric::Wnr, Metric::Wnd,
                   Metric::Similarity}) {
    bool any = false;
    for (const MetricsFile& f : files) {
      if (f.series.count(m) != 0) any = true;
    }
    if (!any) continue;
    out += std::string(metric_name(m)) + "\n";
    char row[256];
    std::snprintf(row, sizeof(row), "  %-20s %4s %12s %12s %12s %6s %9s\n", "series", "rep",
                  "mean", "ci_low", "ci_high", "n", "excluded");
    out += row;
    for (const MetricsFile& f : files) {
      auto it = f.series.find(m);
      if (it == f.series.end()) continue;
      for (const SeriesPoint& p : it->second.points) {
        std::string mean = p.has_value ? format_double(p.mean, 6) : "-";
        std::string lo = p.has_ci ? format_double(p.ci_low, 6) : "-";
        std::string hi = p.has_ci ? format_double(p.ci_high, 6) : "-";
        std::snprintf(row, sizeof(row), "  %-20s %4d %12s %12s %12s %6ld %9ld\n",
                      f.label.substr(0, 20).c_str(), p.repetition, mean.c_str(), lo.c_str(),
                      hi.c_str(), p.n, p.excluded_pairs);
        out += row;
      }
    }
    out += "\n";
  }
  return out;
}

}  // namespace icca
