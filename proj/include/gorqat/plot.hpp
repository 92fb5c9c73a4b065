#pragma once

// Minimal static SVG emitters for trajectory line charts and basin-scan
// heat maps. Output is plain text, deterministic, and viewer-friendly;
// nothing here is load-bearing for training.

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "gorqat/dynamics.hpp"
#include "gorqat/metrics.hpp"

namespace gorqat {

namespace detail {

inline std::string svg_num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

}  // namespace detail

struct PlotSeries {
  std::string label;
  std::string color;
  std::vector<double> values;
};

inline std::string svg_line_chart(const std::string& title,
                                  const std::vector<PlotSeries>& series) {
  const double width = 720, height = 420;
  const double left = 60, right = 20, top = 36, bottom = 34;
  double lo = 0.0, hi = 1.0;
  bool any = false;
  std::size_t max_len = 0;
  for (const auto& s : series) {
    max_len = std::max(max_len, s.values.size());
    for (double v : s.values) {
      if (!any) {
        lo = hi = v;
        any = true;
      }
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  }
  if (!any || hi == lo) {
    hi = lo + 1.0;
  }
  const double plot_w = width - left - right, plot_h = height - top - bottom;
  auto sx = [&](std::size_t i) {
    return left + plot_w * (max_len > 1 ? static_cast<double>(i) / (max_len - 1) : 0.5);
  };
  auto sy = [&](double v) { return top + plot_h * (1.0 - (v - lo) / (hi - lo)); };

  std::string svg = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" +
                    detail::svg_num(width) + "\" height=\"" + detail::svg_num(height) + "\">\n";
  svg += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg += "<text x=\"" + detail::svg_num(width / 2) + "\" y=\"20\" text-anchor=\"middle\" "
         "font-family=\"sans-serif\" font-size=\"14\">" + title + "</text>\n";
  svg += "<rect x=\"" + detail::svg_num(left) + "\" y=\"" + detail::svg_num(top) + "\" width=\"" +
         detail::svg_num(plot_w) + "\" height=\"" + detail::svg_num(plot_h) +
         "\" fill=\"none\" stroke=\"#888\"/>\n";
  svg += "<text x=\"8\" y=\"" + detail::svg_num(top + 10) +
         "\" font-family=\"sans-serif\" font-size=\"11\">" + detail::svg_num(hi) + "</text>\n";
  svg += "<text x=\"8\" y=\"" + detail::svg_num(top + plot_h) +
         "\" font-family=\"sans-serif\" font-size=\"11\">" + detail::svg_num(lo) + "</text>\n";

  double legend_y = top + 14;
  for (const auto& s : series) {
    if (s.values.empty()) continue;
    std::string points;
    // Cap the emitted point count; long trajectories subsample evenly.
    const std::size_t max_points = 2000;
    const std::size_t stride = std::max<std::size_t>(1, s.values.size() / max_points);
    for (std::size_t i = 0; i < s.values.size(); i += stride) {
      points += detail::svg_num(sx(i)) + "," + detail::svg_num(sy(s.values[i])) + " ";
    }
    points += detail::svg_num(sx(s.values.size() - 1)) + "," +
              detail::svg_num(sy(s.values.back()));
    svg += "<polyline fill=\"none\" stroke=\"" + s.color + "\" stroke-width=\"1.5\" points=\"" +
           points + "\"/>\n";
    svg += "<text x=\"" + detail::svg_num(left + 8) + "\" y=\"" + detail::svg_num(legend_y) +
           "\" font-family=\"sans-serif\" font-size=\"11\" fill=\"" + s.color + "\">" + s.label +
           "</text>\n";
    legend_y += 14;
  }
  svg += "</svg>\n";
  return svg;
}

// Square heat map of final residuals; darker means closer to equilibrium.
inline std::string svg_basin_heatmap(const std::string& title,
                                     const std::vector<BasinCell>& cells, int cells_per_axis) {
  const double cell_px = 44;
  const double left = 70, top = 40;
  const double width = left + cells_per_axis * cell_px + 20;
  const double height = top + cells_per_axis * cell_px + 30;
  std::string svg = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" +
                    detail::svg_num(width) + "\" height=\"" + detail::svg_num(height) + "\">\n";
  svg += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg += "<text x=\"" + detail::svg_num(width / 2) + "\" y=\"20\" text-anchor=\"middle\" "
         "font-family=\"sans-serif\" font-size=\"14\">" + title + "</text>\n";
  for (int i = 0; i < cells_per_axis; ++i) {
    for (int j = 0; j < cells_per_axis; ++j) {
      const std::size_t idx = static_cast<std::size_t>(i) * cells_per_axis + j;
      if (idx >= cells.size()) continue;
      // Residuals live in [0, 1]; clamp for color mapping.
      const double r = std::min(1.0, std::max(0.0, cells[idx].final_residual));
      const int shade = static_cast<int>(std::lround(255.0 * r));
      svg += "<rect x=\"" + detail::svg_num(left + j * cell_px) + "\" y=\"" +
             detail::svg_num(top + i * cell_px) + "\" width=\"" + detail::svg_num(cell_px) +
             "\" height=\"" + detail::svg_num(cell_px) + "\" fill=\"rgb(" +
             std::to_string(shade) + "," + std::to_string(255 - shade) + ",128)\" "
             "stroke=\"#ccc\"/>\n";
    }
  }
  svg += "<text x=\"8\" y=\"" + detail::svg_num(top + 12) +
         "\" font-family=\"sans-serif\" font-size=\"11\">init alpha_task rows / alpha_kd "
         "cols</text>\n";
  svg += "</svg>\n";
  return svg;
}

}  // namespace gorqat
