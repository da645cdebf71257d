#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

namespace sica {

// Fixed 11-step diverging palette (red negative, blue positive, white at 0).
// Geometry and colors are constants so identical inputs give identical bytes.
inline const std::vector<std::string>& heatmap_palette() {
  static const std::vector<std::string> kPalette = {
      "#67001f", "#b2182b", "#d6604d", "#f4a582", "#fddbc7", "#f7f7f7",
      "#d1e5f0", "#92c5de", "#4393c3", "#2166ac", "#053061"};
  return kPalette;
}

struct HeatmapLayout {
  int cell = 64;
  int margin_left = 120;
  int margin_top = 60;
  int font_size = 11;
};

inline std::string svg_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      default: out += c;
    }
  }
  return out;
}

// Renders a numeric grid as an SVG heatmap with row/column labels and the
// value printed in each cell. Scale is symmetric around zero.
inline std::string render_heatmap_svg(const std::vector<std::vector<double>>& values,
                                      const std::vector<std::string>& row_labels,
                                      const std::vector<std::string>& col_labels,
                                      const std::string& title, const HeatmapLayout& layout = {}) {
  const std::size_t n_rows = values.size();
  const std::size_t n_cols = n_rows == 0 ? 0 : values[0].size();
  double vmax = 1e-9;
  for (const auto& row : values)
    for (double v : row) vmax = std::max(vmax, std::abs(v));

  const int width = layout.margin_left + layout.cell * static_cast<int>(n_cols) + 20;
  const int height = layout.margin_top + layout.cell * static_cast<int>(n_rows) + 20;
  std::string out;
  char buf[256];
  std::snprintf(buf, sizeof(buf),
                "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"%d\" height=\"%d\" "
                "viewBox=\"0 0 %d %d\">\n",
                width, height, width, height);
  out += buf;
  out += "<style>text{font-family:monospace;font-size:" + std::to_string(layout.font_size) +
         "px;}</style>\n";
  out += "<text x=\"" + std::to_string(layout.margin_left) + "\" y=\"20\">" + svg_escape(title) +
         "</text>\n";

  const auto& palette = heatmap_palette();
  for (std::size_t c = 0; c < n_cols; ++c) {
    const int x = layout.margin_left + static_cast<int>(c) * layout.cell + layout.cell / 2;
    std::snprintf(buf, sizeof(buf),
                  "<text x=\"%d\" y=\"%d\" text-anchor=\"middle\">%s</text>\n", x,
                  layout.margin_top - 8, svg_escape(col_labels[c]).c_str());
    out += buf;
  }
  for (std::size_t r = 0; r < n_rows; ++r) {
    const int y = layout.margin_top + static_cast<int>(r) * layout.cell + layout.cell / 2 + 4;
    std::snprintf(buf, sizeof(buf), "<text x=\"%d\" y=\"%d\" text-anchor=\"end\">%s</text>\n",
                  layout.margin_left - 8, y, svg_escape(row_labels[r]).c_str());
    out += buf;
    for (std::size_t c = 0; c < n_cols; ++c) {
      const double v = values[r][c];
      int bin = static_cast<int>(std::floor((v + vmax) / (2.0 * vmax) * 11.0));
      bin = std::clamp(bin, 0, 10);
      const int x = layout.margin_left + static_cast<int>(c) * layout.cell;
      const int cy = layout.margin_top + static_cast<int>(r) * layout.cell;
      std::snprintf(buf, sizeof(buf),
                    "<rect x=\"%d\" y=\"%d\" width=\"%d\" height=\"%d\" fill=\"%s\" "
                    "stroke=\"#333333\"/>\n",
                    x, cy, layout.cell, layout.cell, palette[bin].c_str());
      out += buf;
      const bool dark = bin <= 1 || bin >= 9;
      std::snprintf(buf, sizeof(buf),
                    "<text x=\"%d\" y=\"%d\" text-anchor=\"middle\" fill=\"%s\">%+.4f</text>\n",
                    x + layout.cell / 2, cy + layout.cell / 2 + 4,
                    dark ? "#ffffff" : "#000000", v);
      out += buf;
    }
  }
  out += "</svg>\n";
  return out;
}

inline void write_text_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream f(path, std::ios::trunc | std::ios::binary);
  if (!f) throw std::invalid_argument("write_text_file: cannot open " + path.string());
  f.write(content.data(), static_cast<std::streamsize>(content.size()));
}

// Simple polyline chart for k-sweeps and rank sweeps.
inline std::string render_curve_svg(const std::vector<double>& xs,
                                    const std::vector<std::vector<double>>& series,
                                    const std::vector<std::string>& names,
                                    const std::string& title) {
  const int width = 520, height = 320, ml = 60, mb = 40, mt = 40, mr = 20;
  double xmin = xs.front(), xmax = xs.back();
  double ymin = 1e300, ymax = -1e300;
  for (const auto& s : series)
    for (double v : s) {
      ymin = std::min(ymin, v);
      ymax = std::max(ymax, v);
    }
  if (ymax - ymin < 1e-12) {
    ymax += 0.5;
    ymin -= 0.5;
  }
  auto px = [&](double x) {
    return ml + (x - xmin) / (xmax - xmin) * (width - ml - mr);
  };
  auto py = [&](double y) {
    return height - mb - (y - ymin) / (ymax - ymin) * (height - mb - mt);
  };
  static const char* kColors[] = {"#b2182b", "#2166ac", "#1a9850", "#7b3294"};
  std::string out;
  char buf[256];
  std::snprintf(buf, sizeof(buf),
                "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"%d\" height=\"%d\">\n", width,
                height);
  out += buf;
  out += "<style>text{font-family:monospace;font-size:11px;}</style>\n";
  out += "<text x=\"60\" y=\"20\">" + svg_escape(title) + "</text>\n";
  std::snprintf(buf, sizeof(buf),
                "<line x1=\"%d\" y1=\"%d\" x2=\"%d\" y2=\"%d\" stroke=\"#333\"/>\n", ml,
                height - mb, width - mr, height - mb);
  out += buf;
  std::snprintf(buf, sizeof(buf),
                "<line x1=\"%d\" y1=\"%d\" x2=\"%d\" y2=\"%d\" stroke=\"#333\"/>\n", ml, mt, ml,
                height - mb);
  out += buf;
  std::snprintf(buf, sizeof(buf), "<text x=\"%d\" y=\"%d\">%.3g</text>\n", 8, height - mb, ymin);
  out += buf;
  std::snprintf(buf, sizeof(buf), "<text x=\"%d\" y=\"%d\">%.3g</text>\n", 8, mt + 10, ymax);
  out += buf;
  for (std::size_t s = 0; s < series.size(); ++s) {
    out += "<polyline fill=\"none\" stroke=\"" + std::string(kColors[s % 4]) +
           "\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < xs.size(); ++i) {
      std::snprintf(buf, sizeof(buf), "%.1f,%.1f ", px(xs[i]), py(series[s][i]));
      out += buf;
    }
    out += "\"/>\n";
    std::snprintf(buf, sizeof(buf), "<text x=\"%d\" y=\"%d\" fill=\"%s\">%s</text>\n",
                  width - mr - 120, mt + 16 * static_cast<int>(s) + 10, kColors[s % 4],
                  svg_escape(names[s]).c_str());
    out += buf;
  }
  out += "</svg>\n";
  return out;
}

}  // namespace sica
