// Copyright (c) 2026 moelab authors
// SPDX-License-Identifier: Apache-2.0
//
// Self-contained SVG rendering for run artifacts: multi-series line plots
// (metric curves over training steps) and labeled heatmaps (co-activation /
// similarity matrices). Text generation only — identical input produces
// identical bytes, so plots are diffable across runs.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "moelab/errors.hpp"

namespace moelab {

struct Series {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
};

namespace detail {

inline std::string xml_escape(const std::string& s) {
  std::string out;
  out.reserve(s.size());
  for (const char c : s) {
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

inline std::string fmt(double v, const char* spec = "%.2f") {
  char buf[64];
  std::snprintf(buf, sizeof(buf), spec, v);
  return buf;
}

// Fixed qualitative palette; series cycle through it.
inline const char* series_color(size_t i) {
  static const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                                   "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f"};
  return kPalette[i % (sizeof(kPalette) / sizeof(kPalette[0]))];
}

struct AxisRange {
  double lo = 0.0, hi = 1.0;
  double to_unit(double v) const { return (v - lo) / (hi - lo); }
};

// Expands a degenerate range so that mapping stays finite.
inline AxisRange pad_range(double lo, double hi) {
  if (lo == hi) {
    const double pad = lo == 0.0 ? 1.0 : std::abs(lo) * 0.1;
    return {lo - pad, hi + pad};
  }
  return {lo, hi};
}

}  // namespace detail

// Renders a line plot with axes, tick labels, a legend, and one polyline per
// series (plus point markers, so single-point series stay visible).
inline std::string render_line_plot(const std::string& title,
                                    const std::string& x_label,
                                    const std::string& y_label,
                                    const std::vector<Series>& series) {
  if (series.empty()) throw DataError("line plot of zero series");
  double xmin = 0, xmax = 0, ymin = 0, ymax = 0;
  bool first = true;
  for (const Series& s : series) {
    if (s.x.empty()) throw DataError("line plot series '" + s.label + "' is empty");
    if (s.x.size() != s.y.size())
      throw ShapeError("line plot series '" + s.label + "': " +
                       std::to_string(s.x.size()) + " x values vs " +
                       std::to_string(s.y.size()) + " y values");
    for (size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i]))
        throw DataError("line plot series '" + s.label + "' holds a non-finite value");
      if (first) {
        xmin = xmax = s.x[i];
        ymin = ymax = s.y[i];
        first = false;
      }
      xmin = std::min(xmin, s.x[i]);
      xmax = std::max(xmax, s.x[i]);
      ymin = std::min(ymin, s.y[i]);
      ymax = std::max(ymax, s.y[i]);
    }
  }
  const detail::AxisRange xr = detail::pad_range(xmin, xmax);
  const detail::AxisRange yr = detail::pad_range(ymin, ymax);

  const double width = 640, height = 420;
  const double left = 70, right = 24, top = 44, bottom = 52;
  const double plot_w = width - left - right;
  const double plot_h = height - top - bottom;
  const auto px = [&](double v) { return left + xr.to_unit(v) * plot_w; };
  const auto py = [&](double v) { return top + (1.0 - yr.to_unit(v)) * plot_h; };

  std::string svg;
  svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" +
         detail::fmt(width, "%.0f") + "\" height=\"" +
         detail::fmt(height, "%.0f") + "\" viewBox=\"0 0 " +
         detail::fmt(width, "%.0f") + " " + detail::fmt(height, "%.0f") +
         "\" font-family=\"sans-serif\">\n";
  svg += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg += "<text x=\"" + detail::fmt(width / 2) +
         "\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">" +
         detail::xml_escape(title) + "</text>\n";

  // Axes frame and ticks.
  svg += "<rect x=\"" + detail::fmt(left) + "\" y=\"" + detail::fmt(top) +
         "\" width=\"" + detail::fmt(plot_w) + "\" height=\"" +
         detail::fmt(plot_h) + "\" fill=\"none\" stroke=\"#333333\"/>\n";
  const int kTicks = 5;
  for (int i = 0; i < kTicks; ++i) {
    const double f = static_cast<double>(i) / (kTicks - 1);
    const double xv = xr.lo + f * (xr.hi - xr.lo);
    const double yv = yr.lo + f * (yr.hi - yr.lo);
    const double xp = left + f * plot_w;
    const double yp = top + (1.0 - f) * plot_h;
    svg += "<line x1=\"" + detail::fmt(xp) + "\" y1=\"" + detail::fmt(top + plot_h) +
           "\" x2=\"" + detail::fmt(xp) + "\" y2=\"" +
           detail::fmt(top + plot_h + 5) + "\" stroke=\"#333333\"/>\n";
    svg += "<text x=\"" + detail::fmt(xp) + "\" y=\"" +
           detail::fmt(top + plot_h + 18) +
           "\" text-anchor=\"middle\" font-size=\"11\">" +
           detail::fmt(xv, "%.4g") + "</text>\n";
    svg += "<line x1=\"" + detail::fmt(left - 5) + "\" y1=\"" + detail::fmt(yp) +
           "\" x2=\"" + detail::fmt(left) + "\" y2=\"" + detail::fmt(yp) +
           "\" stroke=\"#333333\"/>\n";
    svg += "<text x=\"" + detail::fmt(left - 8) + "\" y=\"" +
           detail::fmt(yp + 4) + "\" text-anchor=\"end\" font-size=\"11\">" +
           detail::fmt(yv, "%.4g") + "</text>\n";
  }
  svg += "<text x=\"" + detail::fmt(left + plot_w / 2) + "\" y=\"" +
         detail::fmt(height - 12) + "\" text-anchor=\"middle\" font-size=\"12\">" +
         detail::xml_escape(x_label) + "</text>\n";
  svg += "<text x=\"16\" y=\"" + detail::fmt(top + plot_h / 2) +
         "\" text-anchor=\"middle\" font-size=\"12\" transform=\"rotate(-90 16 " +
         detail::fmt(top + plot_h / 2) + ")\">" + detail::xml_escape(y_label) +
         "</text>\n";

  // Series.
  for (size_t si = 0; si < series.size(); ++si) {
    const Series& s = series[si];
    const char* color = detail::series_color(si);
    if (s.x.size() > 1) {
      std::string points;
      for (size_t i = 0; i < s.x.size(); ++i)
        points += detail::fmt(px(s.x[i])) + "," + detail::fmt(py(s.y[i])) + " ";
      svg += "<polyline fill=\"none\" stroke=\"" + std::string(color) +
             "\" stroke-width=\"1.5\" points=\"" + points + "\"/>\n";
    }
    for (size_t i = 0; i < s.x.size(); ++i)
      svg += "<circle cx=\"" + detail::fmt(px(s.x[i])) + "\" cy=\"" +
             detail::fmt(py(s.y[i])) + "\" r=\"2.2\" fill=\"" + color + "\"/>\n";
  }

  // Legend, top-right inside the frame.
  for (size_t si = 0; si < series.size(); ++si) {
    const double ly = top + 14 + 16 * static_cast<double>(si);
    svg += "<line x1=\"" + detail::fmt(left + plot_w - 130) + "\" y1=\"" +
           detail::fmt(ly - 4) + "\" x2=\"" + detail::fmt(left + plot_w - 112) +
           "\" y2=\"" + detail::fmt(ly - 4) + "\" stroke=\"" +
           detail::series_color(si) + "\" stroke-width=\"2\"/>\n";
    svg += "<text x=\"" + detail::fmt(left + plot_w - 106) + "\" y=\"" +
           detail::fmt(ly) + "\" font-size=\"11\">" +
           detail::xml_escape(series[si].label) + "</text>\n";
  }

  svg += "</svg>\n";
  return svg;
}

// Renders a square heatmap with per-cell value text and row/column labels.
// Cell shade interpolates white (minimum) to a fixed blue (maximum).
inline std::string render_heatmap(const std::string& title,
                                  const std::vector<std::string>& labels,
                                  const std::vector<std::vector<double>>& matrix) {
  if (matrix.empty()) throw DataError("heatmap of an empty matrix");
  const size_t n = matrix.size();
  if (labels.size() != n)
    throw ShapeError("heatmap: " + std::to_string(labels.size()) +
                     " labels for " + std::to_string(n) + " rows");
  double lo = matrix[0][0], hi = matrix[0][0];
  for (const auto& row : matrix) {
    if (row.size() != n)
      throw ShapeError("heatmap matrix is not square");
    for (const double v : row) {
      if (!std::isfinite(v)) throw DataError("heatmap holds a non-finite value");
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  }
  const detail::AxisRange range = detail::pad_range(lo, hi);

  const double cell = 46, left = 86, top = 56;
  const double width = left + cell * static_cast<double>(n) + 24;
  const double height = top + cell * static_cast<double>(n) + 30;

  std::string svg;
  svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" +
         detail::fmt(width, "%.0f") + "\" height=\"" +
         detail::fmt(height, "%.0f") + "\" viewBox=\"0 0 " +
         detail::fmt(width, "%.0f") + " " + detail::fmt(height, "%.0f") +
         "\" font-family=\"sans-serif\">\n";
  svg += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg += "<text x=\"" + detail::fmt(width / 2) +
         "\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">" +
         detail::xml_escape(title) + "</text>\n";

  for (size_t i = 0; i < n; ++i) {
    // Row and column labels.
    svg += "<text x=\"" + detail::fmt(left - 8) + "\" y=\"" +
           detail::fmt(top + cell * (static_cast<double>(i) + 0.5) + 4) +
           "\" text-anchor=\"end\" font-size=\"11\">" +
           detail::xml_escape(labels[i]) + "</text>\n";
    svg += "<text x=\"" +
           detail::fmt(left + cell * (static_cast<double>(i) + 0.5)) + "\" y=\"" +
           detail::fmt(top - 8) + "\" text-anchor=\"middle\" font-size=\"11\">" +
           detail::xml_escape(labels[i]) + "</text>\n";
    for (size_t j = 0; j < n; ++j) {
      const double f = range.to_unit(matrix[i][j]);
      // White (f=0) to steel blue (f=1).
      const int r = static_cast<int>(std::lround(255 + f * (31 - 255)));
      const int g = static_cast<int>(std::lround(255 + f * (119 - 255)));
      const int b = static_cast<int>(std::lround(255 + f * (180 - 255)));
      char color[8];
      std::snprintf(color, sizeof(color), "#%02x%02x%02x", r, g, b);
      const double x = left + cell * static_cast<double>(j);
      const double y = top + cell * static_cast<double>(i);
      svg += "<rect class=\"cell\" x=\"" + detail::fmt(x) + "\" y=\"" +
             detail::fmt(y) + "\" width=\"" + detail::fmt(cell) +
             "\" height=\"" + detail::fmt(cell) + "\" fill=\"" + color +
             "\" stroke=\"#cccccc\"/>\n";
      svg += "<text x=\"" + detail::fmt(x + cell / 2) + "\" y=\"" +
             detail::fmt(y + cell / 2 + 4) +
             "\" text-anchor=\"middle\" font-size=\"10\" fill=\"" +
             (f > 0.6 ? "white" : "#333333") + "\">" +
             detail::fmt(matrix[i][j], "%.2f") + "</text>\n";
    }
  }
  svg += "</svg>\n";
  return svg;
}

inline void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write file: " + path);
  out << text;
  if (!out) throw DataError("short write on file: " + path);
}

}  // namespace moelab
