#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "edgeprune/errors.hpp"
#include "edgeprune/expcli.hpp"

namespace edgeprune::exp {

namespace {

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string escape(const std::string& s) {
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

// White to dark blue.
std::string ramp(double v) {
  if (!std::isfinite(v)) return "#cccccc";
  v = std::clamp(v, 0.0, 1.0);
  const int r = static_cast<int>(std::lround(255 + (8 - 255) * v));
  const int g = static_cast<int>(std::lround(255 + (48 - 255) * v));
  const int b = static_cast<int>(std::lround(255 + (107 - 255) * v));
  char buf[8];
  std::snprintf(buf, sizeof buf, "#%02x%02x%02x", r, g, b);
  return buf;
}

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};

std::string header(double w, double h) {
  return "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + num(w) + "\" height=\"" + num(h) +
         "\" viewBox=\"0 0 " + num(w) + " " + num(h) + "\" font-family=\"sans-serif\" font-size=\"12\">\n"
         "<rect width=\"100%\" height=\"100%\" fill=\"#ffffff\"/>\n";
}

std::string text(double x, double y, const std::string& s, const char* anchor = "middle",
                 const std::string& extra = "") {
  return "<text x=\"" + num(x) + "\" y=\"" + num(y) + "\" text-anchor=\"" + anchor + "\"" + extra + ">" +
         escape(s) + "</text>\n";
}

void colorbar(std::ostringstream& os, double x, double y, double h) {
  constexpr int steps = 20;
  for (int i = 0; i < steps; ++i) {
    const double v = 1.0 - (i + 0.5) / steps;
    os << "<rect x=\"" << num(x) << "\" y=\"" << num(y + h * i / steps) << "\" width=\"12\" height=\""
       << num(h / steps + 0.5) << "\" fill=\"" << ramp(v) << "\"/>\n";
  }
  os << text(x + 16, y + 10, "1", "start") << text(x + 16, y + h, "0", "start");
}

}  // namespace

std::vector<std::vector<double>> neuron_kept_fraction(const ArchSpec& arch, const nnet::Mask& mask) {
  if (mask.size() != arch.num_layers()) throw ShapeMismatch("neuron_kept_fraction: layer count differs");
  std::vector<std::vector<double>> out;
  for (std::size_t l = 0; l < arch.depth; ++l) {
    const nnet::Tensor& m = mask[l];
    const std::size_t rows = m.dim(0), per = m.size() / rows;
    std::vector<double> row(rows);
    for (std::size_t r = 0; r < rows; ++r) {
      double kept = 0.0;
      for (std::size_t j = r * per; j < (r + 1) * per; ++j) kept += m[j] != 0.0;
      row[r] = kept / static_cast<double>(per);
    }
    out.push_back(std::move(row));
  }
  return out;
}

std::string svg_heatmap(const std::vector<std::vector<double>>& cells, const std::string& title,
                        const std::string& row_label, const std::string& col_label) {
  if (cells.empty()) return {};
  std::size_t cols = 0;
  for (const auto& r : cells) cols = std::max(cols, r.size());
  if (cols == 0) return {};
  const double cell = std::clamp(480.0 / static_cast<double>(std::max(cols, cells.size())), 2.0, 24.0);
  const double left = 60, top = 40;
  const double w = left + cell * cols + 60, h = top + cell * cells.size() + 40;
  std::ostringstream os;
  os << header(w, h) << text(w / 2, 20, title);
  for (std::size_t i = 0; i < cells.size(); ++i)
    for (std::size_t j = 0; j < cells[i].size(); ++j)
      os << "<rect x=\"" << num(left + cell * j) << "\" y=\"" << num(top + cell * i) << "\" width=\""
         << num(cell) << "\" height=\"" << num(cell) << "\" fill=\"" << ramp(cells[i][j]) << "\"/>\n";
  os << text(left + cell * cols / 2, top + cell * cells.size() + 24, col_label)
     << text(20, top + cell * cells.size() / 2, row_label, "middle",
             " transform=\"rotate(-90 20 " + num(top + cell * cells.size() / 2) + ")\"");
  colorbar(os, left + cell * cols + 16, top, std::min(200.0, cell * cells.size()));
  os << "</svg>\n";
  return os.str();
}

std::string svg_line_plot(const std::vector<Series>& series, const std::string& title,
                          const std::string& x_label, const std::string& y_label) {
  std::size_t n = 0;
  double lo = INFINITY, hi = -INFINITY;
  for (const auto& s : series) {
    n = std::max(n, s.values.size());
    for (double v : s.values)
      if (std::isfinite(v)) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
  }
  if (n == 0 || !std::isfinite(lo)) return {};
  if (hi - lo < 1e-12) {
    lo -= 0.5;
    hi += 0.5;
  }
  const double w = 640, h = 400, left = 70, right = 150, top = 40, bottom = 50;
  const double pw = w - left - right, ph = h - top - bottom;
  auto px = [&](std::size_t i) { return left + (n > 1 ? pw * i / (n - 1.0) : pw / 2); };
  auto py = [&](double v) { return top + ph * (1.0 - (v - lo) / (hi - lo)); };
  std::ostringstream os;
  os << header(w, h) << text(w / 2, 20, title);
  os << "<line x1=\"" << num(left) << "\" y1=\"" << num(top + ph) << "\" x2=\"" << num(left + pw)
     << "\" y2=\"" << num(top + ph) << "\" stroke=\"#000000\"/>\n";
  os << "<line x1=\"" << num(left) << "\" y1=\"" << num(top) << "\" x2=\"" << num(left) << "\" y2=\""
     << num(top + ph) << "\" stroke=\"#000000\"/>\n";
  for (int k = 0; k <= 4; ++k) {
    const double v = lo + (hi - lo) * k / 4.0;
    os << text(left - 6, py(v) + 4, num(v), "end");
  }
  os << text(left, top + ph + 16, "1") << text(left + pw, top + ph + 16, std::to_string(n));
  os << text(left + pw / 2, h - 12, x_label)
     << text(18, top + ph / 2, y_label, "middle", " transform=\"rotate(-90 18 " + num(top + ph / 2) + ")\"");
  for (std::size_t s = 0; s < series.size(); ++s) {
    const char* color = kPalette[s % (sizeof kPalette / sizeof *kPalette)];
    os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
    bool first = true;
    for (std::size_t i = 0; i < series[s].values.size(); ++i) {
      if (!std::isfinite(series[s].values[i])) continue;
      os << (first ? "" : " ") << num(px(i)) << ',' << num(py(series[s].values[i]));
      first = false;
    }
    os << "\"/>\n";
    const double ly = top + 16.0 * s;
    os << "<line x1=\"" << num(left + pw + 12) << "\" y1=\"" << num(ly) << "\" x2=\"" << num(left + pw + 32)
       << "\" y2=\"" << num(ly) << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n"
       << text(left + pw + 36, ly + 4, series[s].name, "start");
  }
  os << "</svg>\n";
  return os.str();
}

std::string svg_accuracy_grid(const std::vector<std::size_t>& depths,
                              const std::vector<double>& sparsities,
                              const std::vector<std::vector<double>>& accuracy,
                              const std::string& title) {
  if (depths.empty() || sparsities.empty()) return {};
  if (accuracy.size() != depths.size()) throw ShapeMismatch("accuracy grid: one row per depth");
  for (const auto& r : accuracy)
    if (r.size() != sparsities.size()) throw ShapeMismatch("accuracy grid: one column per sparsity");
  const double cell = 48, left = 70, top = 40;
  const double w = left + cell * sparsities.size() + 60, h = top + cell * depths.size() + 50;
  std::ostringstream os;
  os << header(w, h) << text(w / 2, 20, title);
  for (std::size_t i = 0; i < depths.size(); ++i) {
    // Deepest row at the top.
    const std::size_t row = depths.size() - 1 - i;
    const double y = top + cell * row;
    os << text(left - 8, y + cell / 2 + 4, std::to_string(depths[i]), "end");
    for (std::size_t j = 0; j < sparsities.size(); ++j) {
      const double a = accuracy[i][j];
      const double x = left + cell * j;
      os << "<rect x=\"" << num(x) << "\" y=\"" << num(y) << "\" width=\"" << num(cell) << "\" height=\""
         << num(cell) << "\" fill=\"" << ramp(a) << "\" stroke=\"#ffffff\"/>\n";
      os << text(x + cell / 2, y + cell / 2 + 4, std::isfinite(a) ? num(a) : "-", "middle",
                 a > 0.55 ? " fill=\"#ffffff\"" : "");
    }
  }
  for (std::size_t j = 0; j < sparsities.size(); ++j)
    os << text(left + cell * j + cell / 2, top + cell * depths.size() + 16, num(sparsities[j]));
  os << text(left + cell * sparsities.size() / 2, top + cell * depths.size() + 38, "sparsity")
     << text(16, top + cell * depths.size() / 2, "depth", "middle",
             " transform=\"rotate(-90 16 " + num(top + cell * depths.size() / 2) + ")\"");
  colorbar(os, left + cell * sparsities.size() + 16, top, std::min(200.0, cell * depths.size()));
  os << "</svg>\n";
  return os.str();
}

}  // namespace edgeprune::exp
