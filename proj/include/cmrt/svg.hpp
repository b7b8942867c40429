#pragma once

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "cmrt/error.hpp"

namespace cmrt::svg {

inline std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

inline std::string num(double v) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(2) << v;
  return os.str();
}

inline const std::vector<std::string>& palette() {
  static const std::vector<std::string> p{"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728",
                                          "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};
  return p;
}

struct Series {
  std::string name;
  std::vector<double> y;
};

/// Lines over a shared x axis (used for lambda sweeps).
inline void line_plot(std::ostream& os, const std::string& title, const std::string& x_label,
                      const std::vector<double>& x, const std::vector<Series>& series) {
  require(!x.empty() && !series.empty(), "line_plot: nothing to plot");
  const double W = 640, H = 400, L = 60, R = 160, T = 40, B = 50;
  double xmin = *std::min_element(x.begin(), x.end()), xmax = *std::max_element(x.begin(), x.end());
  double ymin = INFINITY, ymax = -INFINITY;
  for (const auto& s : series) {
    require(s.y.size() == x.size(), "line_plot: series '" + s.name + "' length mismatch", ErrorKind::shape);
    for (double v : s.y) {
      ymin = std::min(ymin, v);
      ymax = std::max(ymax, v);
    }
  }
  if (xmax == xmin) xmax = xmin + 1;
  if (ymax == ymin) {
    ymin -= 0.5;
    ymax += 0.5;
  }
  auto px = [&](double v) { return L + (v - xmin) / (xmax - xmin) * (W - L - R); };
  auto py = [&](double v) { return H - B - (v - ymin) / (ymax - ymin) * (H - T - B); };
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << W / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">" << escape(title)
     << "</text>\n";
  os << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B
     << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
  for (double v : x) {
    os << "<text x=\"" << num(px(v)) << "\" y=\"" << H - B + 16 << "\" text-anchor=\"middle\" font-size=\"10\">"
       << v << "</text>\n";
  }
  for (int i = 0; i <= 4; ++i) {
    const double v = ymin + (ymax - ymin) * i / 4.0;
    os << "<text x=\"" << L - 6 << "\" y=\"" << num(py(v) + 3) << "\" text-anchor=\"end\" font-size=\"10\">"
       << num(v) << "</text>\n";
  }
  os << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 12 << "\" text-anchor=\"middle\" font-size=\"12\">"
     << escape(x_label) << "</text>\n";
  for (std::size_t s = 0; s < series.size(); ++s) {
    const auto& color = palette()[s % palette().size()];
    os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < x.size(); ++i) os << num(px(x[i])) << ',' << num(py(series[s].y[i])) << ' ';
    os << "\"/>\n";
    os << "<text x=\"" << W - R + 10 << "\" y=\"" << T + 16 * (s + 1) << "\" font-size=\"12\" fill=\"" << color
       << "\">" << escape(series[s].name) << "</text>\n";
  }
  os << "</svg>\n";
}

/// Square matrix as a white-to-blue grid with cell values printed.
inline void heatmap(std::ostream& os, const std::string& title, const std::vector<std::string>& labels,
                    const std::vector<std::vector<double>>& m) {
  require(!labels.empty() && m.size() == labels.size(), "heatmap: shape mismatch", ErrorKind::shape);
  const double cell = 60, L = 120, T = 60;
  double lo = INFINITY, hi = -INFINITY;
  for (const auto& row : m) {
    require(row.size() == labels.size(), "heatmap: matrix is not square", ErrorKind::shape);
    for (double v : row) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  }
  if (hi == lo) hi = lo + 1;
  const double n = static_cast<double>(labels.size());
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << L + cell * n + 20 << "\" height=\""
     << T + cell * n + 20 << "\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"10\" y=\"24\" font-size=\"16\">" << escape(title) << "</text>\n";
  for (std::size_t i = 0; i < labels.size(); ++i) {
    os << "<text x=\"" << L - 6 << "\" y=\"" << T + cell * (i + 0.5) << "\" text-anchor=\"end\" font-size=\"11\">"
       << escape(labels[i]) << "</text>\n";
    os << "<text x=\"" << L + cell * (i + 0.5) << "\" y=\"" << T - 6 << "\" text-anchor=\"middle\" font-size=\"11\">"
       << escape(labels[i]) << "</text>\n";
    for (std::size_t j = 0; j < labels.size(); ++j) {
      const double t = (m[i][j] - lo) / (hi - lo);
      const int r = static_cast<int>(std::lround(255 * (1 - 0.8 * t)));
      const int g = static_cast<int>(std::lround(255 * (1 - 0.6 * t)));
      os << "<rect x=\"" << L + cell * j << "\" y=\"" << T + cell * i << "\" width=\"" << cell << "\" height=\""
         << cell << "\" fill=\"rgb(" << r << ',' << g << ",255)\" stroke=\"white\"/>\n";
      os << "<text x=\"" << L + cell * (j + 0.5) << "\" y=\"" << T + cell * (i + 0.5) + 4
         << "\" text-anchor=\"middle\" font-size=\"10\">" << std::setprecision(3) << m[i][j] << "</text>\n";
    }
  }
  os << "</svg>\n";
}

/// Radar chart: one polygon per series over shared axes, values in [0, max].
inline void radar(std::ostream& os, const std::string& title, const std::vector<std::string>& axes,
                  const std::vector<Series>& series) {
  require(axes.size() >= 3, "radar: need at least three axes");
  double vmax = 0.0;
  for (const auto& s : series) {
    require(s.y.size() == axes.size(), "radar: series '" + s.name + "' length mismatch", ErrorKind::shape);
    for (double v : s.y) vmax = std::max(vmax, v);
  }
  if (vmax <= 0.0) vmax = 1.0;
  const double cx = 260, cy = 240, rad = 170;
  const double pi = std::acos(-1.0);
  auto pt = [&](std::size_t i, double v) {
    const double a = -pi / 2 + 2 * pi * static_cast<double>(i) / static_cast<double>(axes.size());
    return std::pair{cx + rad * v / vmax * std::cos(a), cy + rad * v / vmax * std::sin(a)};
  };
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"680\" height=\"480\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"10\" y=\"24\" font-size=\"16\">" << escape(title) << "</text>\n";
  for (std::size_t i = 0; i < axes.size(); ++i) {
    const auto [x, y] = pt(i, vmax);
    os << "<line x1=\"" << cx << "\" y1=\"" << cy << "\" x2=\"" << num(x) << "\" y2=\"" << num(y)
       << "\" stroke=\"#ccc\"/>\n";
    const auto [lx, ly] = pt(i, vmax * 1.1);
    os << "<text x=\"" << num(lx) << "\" y=\"" << num(ly) << "\" text-anchor=\"middle\" font-size=\"11\">"
       << escape(axes[i]) << "</text>\n";
  }
  for (std::size_t s = 0; s < series.size(); ++s) {
    const auto& color = palette()[s % palette().size()];
    os << "<polygon fill=\"" << color << "\" fill-opacity=\"0.15\" stroke=\"" << color << "\" points=\"";
    for (std::size_t i = 0; i < axes.size(); ++i) {
      const auto [x, y] = pt(i, series[s].y[i]);
      os << num(x) << ',' << num(y) << ' ';
    }
    os << "\"/>\n";
    os << "<text x=\"540\" y=\"" << 60 + 16 * s << "\" font-size=\"12\" fill=\"" << color << "\">"
       << escape(series[s].name) << "</text>\n";
  }
  os << "</svg>\n";
}

}  // namespace cmrt::svg
