#pragma once

// Self-contained SVG figures built from generation records: stacked sample
// composition bars, a diversity line chart, and a multi-run diversity overlay.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "selfloop/looprunner.hpp"

namespace selfloop {

struct RunSeries {
  std::string label;
  std::vector<GenerationRecord> records;
};

namespace svg {

inline constexpr const char* kTrueColor = "#2ca02c";
inline constexpr const char* kFalseColor = "#f2c230";
inline constexpr const char* kErrorColor = "#d62728";
inline constexpr const char* kPalette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                                           "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

inline std::string escape(const std::string& s) {
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

inline std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  std::string s(buf);
  while (s.back() == '0') s.pop_back();
  if (s.back() == '.') s.pop_back();
  return s == "-0" ? "0" : s;
}

/// Tick step from {1, 2, 5} x 10^k giving at most `max_ticks` intervals.
inline double nice_step(double span, int max_ticks) {
  if (span <= 0) return 1.0;
  const double raw = span / max_ticks;
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  for (double f : {1.0, 2.0, 5.0, 10.0}) {
    if (f * mag >= raw) return f * mag;
  }
  return 10.0 * mag;
}

/// Plot frame with a data-to-pixel mapping; y grows upward in data space.
struct Frame {
  double width = 760, height = 440;
  double left = 70, right = 170, top = 50, bottom = 60;
  double x_min = 0, x_max = 1, y_min = 0, y_max = 1;

  double plot_w() const { return width - left - right; }
  double plot_h() const { return height - top - bottom; }
  double x(double v) const { return left + (v - x_min) / (x_max - x_min) * plot_w(); }
  double y(double v) const { return top + plot_h() - (v - y_min) / (y_max - y_min) * plot_h(); }
};

inline void open(std::ostringstream& os, const Frame& f, const std::string& title) {
  os << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
     << "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"" << num(f.width) << "\" height=\""
     << num(f.height) << "\" viewBox=\"0 0 " << num(f.width) << ' ' << num(f.height) << "\">\n"
     << "<rect x=\"0\" y=\"0\" width=\"" << num(f.width) << "\" height=\"" << num(f.height)
     << "\" fill=\"white\"/>\n"
     << "<text x=\"" << num(f.left + f.plot_w() / 2) << "\" y=\"28\" text-anchor=\"middle\" "
     << "font-family=\"sans-serif\" font-size=\"16\">" << escape(title) << "</text>\n";
}

/// Axes, grid, tick labels and axis titles. Integer x ticks are centered on
/// the generation positions supplied by `x_pos`.
template <class XPos>
void axes(std::ostringstream& os, const Frame& f, int t_max, double y_step, const std::string& x_title,
          const std::string& y_title, XPos x_pos) {
  os << "<g font-family=\"sans-serif\" font-size=\"11\" fill=\"#333\">\n";
  for (double v = f.y_min; v <= f.y_max + 1e-9; v += y_step) {
    os << "<line x1=\"" << num(f.left) << "\" y1=\"" << num(f.y(v)) << "\" x2=\"" << num(f.left + f.plot_w())
       << "\" y2=\"" << num(f.y(v)) << "\" stroke=\"#e0e0e0\"/>\n"
       << "<text x=\"" << num(f.left - 8) << "\" y=\"" << num(f.y(v) + 4) << "\" text-anchor=\"end\">" << num(v)
       << "</text>\n";
  }
  const int t_step = std::max(1, static_cast<int>(nice_step(t_max, 10)));
  for (int t = 0; t <= t_max; t += t_step) {
    os << "<text x=\"" << num(x_pos(t)) << "\" y=\"" << num(f.top + f.plot_h() + 18)
       << "\" text-anchor=\"middle\">" << t << "</text>\n";
  }
  if (t_max % t_step != 0) {
    os << "<text x=\"" << num(x_pos(t_max)) << "\" y=\"" << num(f.top + f.plot_h() + 18)
       << "\" text-anchor=\"middle\">" << t_max << "</text>\n";
  }
  os << "<line x1=\"" << num(f.left) << "\" y1=\"" << num(f.top + f.plot_h()) << "\" x2=\""
     << num(f.left + f.plot_w()) << "\" y2=\"" << num(f.top + f.plot_h()) << "\" stroke=\"#333\"/>\n"
     << "<line x1=\"" << num(f.left) << "\" y1=\"" << num(f.top) << "\" x2=\"" << num(f.left) << "\" y2=\""
     << num(f.top + f.plot_h()) << "\" stroke=\"#333\"/>\n"
     << "<text x=\"" << num(f.left + f.plot_w() / 2) << "\" y=\"" << num(f.height - 16)
     << "\" text-anchor=\"middle\" font-size=\"13\">" << escape(x_title) << "</text>\n"
     << "<text x=\"18\" y=\"" << num(f.top + f.plot_h() / 2) << "\" text-anchor=\"middle\" font-size=\"13\" "
     << "transform=\"rotate(-90 18 " << num(f.top + f.plot_h() / 2) << ")\">" << escape(y_title) << "</text>\n"
     << "</g>\n";
}

inline void legend(std::ostringstream& os, const Frame& f,
                   const std::vector<std::pair<std::string, std::string>>& entries, bool swatch) {
  os << "<g font-family=\"sans-serif\" font-size=\"12\">\n";
  double y = f.top + 10;
  const double x = f.left + f.plot_w() + 16;
  for (const auto& [label, color] : entries) {
    if (swatch) {
      os << "<rect x=\"" << num(x) << "\" y=\"" << num(y - 9) << "\" width=\"12\" height=\"12\" fill=\"" << color
         << "\"/>\n";
    } else {
      os << "<line x1=\"" << num(x) << "\" y1=\"" << num(y - 3) << "\" x2=\"" << num(x + 14) << "\" y2=\""
         << num(y - 3) << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    }
    os << "<text x=\"" << num(x + 20) << "\" y=\"" << num(y + 1) << "\">" << escape(label) << "</text>\n";
    y += 20;
  }
  os << "</g>\n";
}

inline int max_generation(const std::vector<GenerationRecord>& records) {
  int t = 0;
  for (const auto& r : records) t = std::max(t, r.t);
  return t;
}

/// Upper y bound for diversity plots: next tenth above the data, at most 1.
inline double diversity_ceiling(double top) { return std::clamp(std::ceil(top * 10.0 + 1e-9) / 10.0, 0.1, 1.0); }

inline void polyline(std::ostringstream& os, const Frame& f, const std::vector<GenerationRecord>& records,
                     const std::string& color) {
  std::vector<GenerationRecord> sorted = records;
  std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) { return a.t < b.t; });
  os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    os << (i ? " " : "") << num(f.x(sorted[i].t)) << ',' << num(f.y(sorted[i].diversity.mean));
  }
  os << "\"/>\n";
  for (const auto& r : sorted) {
    os << "<circle cx=\"" << num(f.x(r.t)) << "\" cy=\"" << num(f.y(r.diversity.mean)) << "\" r=\"3\" fill=\""
       << color << "\"><title>t=" << r.t << " diversity=" << num(r.diversity.mean) << "</title></circle>\n";
  }
}

}  // namespace svg

/// Stacked bars of true/false/error counts per generation; t = 0 (D_0) first.
inline std::string composition_svg(const std::vector<GenerationRecord>& records,
                                   const std::string& title = "Sample composition per generation") {
  if (records.empty()) throw std::invalid_argument("report: no records");
  std::vector<GenerationRecord> sorted = records;
  std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) { return a.t < b.t; });

  svg::Frame f;
  const int t_max = svg::max_generation(sorted);
  std::size_t top = 1;
  for (const auto& r : sorted) top = std::max(top, r.composition.total());
  const double y_step = svg::nice_step(static_cast<double>(top), 8);
  f.y_max = std::ceil(static_cast<double>(top) / y_step) * y_step;
  f.x_min = -0.5;
  f.x_max = t_max + 0.5;

  std::ostringstream os;
  svg::open(os, f, title);
  svg::axes(os, f, t_max, y_step, "generation", "expressions", [&](int t) { return f.x(t); });
  const double bar_w = std::max(1.0, f.plot_w() / (t_max + 1) * 0.8);
  for (const auto& r : sorted) {
    double base = 0;
    const std::pair<std::size_t, const char*> parts[] = {{r.composition.n_true, svg::kTrueColor},
                                                         {r.composition.n_false, svg::kFalseColor},
                                                         {r.composition.n_error, svg::kErrorColor}};
    for (const auto& [count, color] : parts) {
      if (count == 0) continue;
      const double y0 = f.y(base), y1 = f.y(base + static_cast<double>(count));
      os << "<rect x=\"" << svg::num(f.x(r.t) - bar_w / 2) << "\" y=\"" << svg::num(y1) << "\" width=\""
         << svg::num(bar_w) << "\" height=\"" << svg::num(y0 - y1) << "\" fill=\"" << color << "\"><title>t="
         << r.t << " count=" << count << "</title></rect>\n";
      base += static_cast<double>(count);
    }
  }
  svg::legend(os, f, {{"True", svg::kTrueColor}, {"False", svg::kFalseColor}, {"syntax error", svg::kErrorColor}},
              true);
  os << "</svg>\n";
  return os.str();
}

/// One diversity line per run, e.g. one per data cycle or per lambda.
inline std::string diversity_overlay_svg(const std::vector<RunSeries>& runs,
                                         const std::string& title = "Diversity per generation") {
  if (runs.empty()) throw std::invalid_argument("report: no runs");
  int t_max = 0;
  double top = 0;
  for (const auto& run : runs) {
    if (run.records.empty()) throw std::invalid_argument("report: run '" + run.label + "' has no records");
    t_max = std::max(t_max, svg::max_generation(run.records));
    for (const auto& r : run.records) top = std::max(top, r.diversity.mean);
  }
  svg::Frame f;
  f.x_min = 0;
  f.x_max = std::max(1, t_max);
  f.y_max = svg::diversity_ceiling(top);

  std::ostringstream os;
  svg::open(os, f, title);
  svg::axes(os, f, t_max, svg::nice_step(f.y_max, 8), "generation", "mean normalized Levenshtein distance",
            [&](int t) { return f.x(t); });
  std::vector<std::pair<std::string, std::string>> entries;
  for (std::size_t i = 0; i < runs.size(); ++i) {
    const std::string color = svg::kPalette[i % std::size(svg::kPalette)];
    svg::polyline(os, f, runs[i].records, color);
    entries.emplace_back(runs[i].label, color);
  }
  svg::legend(os, f, entries, false);
  os << "</svg>\n";
  return os.str();
}

/// Mean normalized Levenshtein distance per generation.
inline std::string diversity_svg(const std::vector<GenerationRecord>& records,
                                 const std::string& title = "Diversity per generation") {
  if (records.empty()) throw std::invalid_argument("report: no records");
  return diversity_overlay_svg({RunSeries{"diversity", records}}, title);
}

/// Legend label for a run: the cycle, plus lambda where the cycle uses one.
inline std::string series_label(const LoopConfig& cfg) {
  std::string s(to_string(cfg.cycle.kind));
  if (cfg.cycle.uses_lambda()) s += " \xce\xbb=" + svg::num(cfg.cycle.lambda);
  return s;
}

}  // namespace selfloop
