#include "ompn/svg.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace ompn {

namespace {

constexpr double kCell = 18.0;
constexpr double kBandGap = 2.0;
constexpr double kMarginLeft = 46.0;
constexpr double kMarginTop = 28.0;
constexpr double kAxisSpace = 40.0;
constexpr double kCurveHeight = 140.0;

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

char action_glyph(int action) {
  switch (action) {
    case 0: return 'U';
    case 1: return 'D';
    case 2: return 'L';
    case 3: return 'R';
    case 4: return 'u';
    default: return '*';  // done
  }
}

void draw_markers(std::ostringstream& os, const TracePlotOptions& opt,
                  double x0, double y_top, double y_bottom) {
  for (int b : opt.gt_boundaries) {
    const double x = x0 + (b + 0.5) * kCell;
    os << "<path d=\"M" << fmt(x - 4) << " " << fmt(y_bottom + 14) << " L"
       << fmt(x + 4) << " " << fmt(y_bottom + 14) << " L" << fmt(x) << " "
       << fmt(y_bottom + 5) << " Z\" fill=\"#d62728\"/>\n";
  }
  for (int p : opt.predicted) {
    const double x = x0 + (p + 0.5) * kCell;
    os << "<line x1=\"" << fmt(x) << "\" y1=\"" << fmt(y_top) << "\" x2=\""
       << fmt(x) << "\" y2=\"" << fmt(y_bottom)
       << "\" stroke=\"#1f77b4\" stroke-width=\"1.5\" stroke-dasharray=\"3,2\"/>\n";
  }
}

}  // namespace

std::string render_trace_svg(const std::vector<StepTrace>& trace,
                             const TracePlotOptions& options) {
  if (trace.empty()) throw std::invalid_argument("render_trace_svg: empty trace");
  const int T = static_cast<int>(trace.size());
  const int n = static_cast<int>(trace[0].pi.size());
  const double plot_w = T * kCell;
  const bool bands = options.style == TracePlotOptions::Style::pi_bands;
  const double plot_h = bands ? n * (kCell + kBandGap) : kCurveHeight;
  const double width = kMarginLeft + plot_w + 20.0;
  const double height = kMarginTop + plot_h + kAxisSpace;

  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << fmt(width)
     << "\" height=\"" << fmt(height) << "\" viewBox=\"0 0 " << fmt(width)
     << " " << fmt(height) << "\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  if (!options.title.empty())
    os << "<text x=\"" << fmt(kMarginLeft) << "\" y=\"16\" font-family=\"monospace\""
       << " font-size=\"12\">" << options.title << "</text>\n";

  const double x0 = kMarginLeft;
  const double y0 = kMarginTop;

  if (bands) {
    // one band per slot, highest slot on top, darkness = pi mass
    for (int slot = 0; slot < n; ++slot) {
      const int row = n - 1 - slot;  // slot n-1 (highest) drawn first
      const double y = y0 + (n - 1 - slot) * (kCell + kBandGap);
      (void)row;
      os << "<text x=\"" << fmt(x0 - 40) << "\" y=\"" << fmt(y + kCell - 5)
         << "\" font-family=\"monospace\" font-size=\"10\">slot " << (slot + 1)
         << "</text>\n";
      for (int t = 0; t < T; ++t) {
        const double v = std::clamp(trace[t].pi[slot], 0.0, 1.0);
        os << "<rect x=\"" << fmt(x0 + t * kCell) << "\" y=\"" << fmt(y)
           << "\" width=\"" << fmt(kCell - 1) << "\" height=\"" << fmt(kCell)
           << "\" fill=\"#2ca02c\" fill-opacity=\"" << fmt(v)
           << "\" stroke=\"#cccccc\" stroke-width=\"0.4\"/>\n";
      }
    }
  } else {
    // standardized pi_avg curve
    std::vector<double> raw(T);
    for (int t = 0; t < T; ++t) raw[t] = trace[t].pi_avg;
    auto curve = seg::standardize(raw);
    os << "<polyline fill=\"none\" stroke=\"#2ca02c\" stroke-width=\"1.5\" points=\"";
    for (int t = 0; t < T; ++t) {
      const double x = x0 + (t + 0.5) * kCell;
      const double y = y0 + (1.0 - curve[t]) * kCurveHeight;
      os << fmt(x) << "," << fmt(y) << " ";
    }
    os << "\"/>\n";
    if (options.thresholds.has_value()) {
      struct Line {
        double value;
        const char* color;
        const char* label;
      };
      const Line lines[3] = {{options.thresholds->upper, "#d62728", "upper"},
                             {options.thresholds->lower, "#1f77b4", "lower"},
                             {options.thresholds->final_threshold, "#7f7f7f",
                              "final"}};
      for (const Line& l : lines) {
        const double y = y0 + (1.0 - std::clamp(l.value, 0.0, 1.0)) * kCurveHeight;
        os << "<line x1=\"" << fmt(x0) << "\" y1=\"" << fmt(y) << "\" x2=\""
           << fmt(x0 + plot_w) << "\" y2=\"" << fmt(y) << "\" stroke=\""
           << l.color << "\" stroke-width=\"1\" stroke-dasharray=\"5,3\"/>\n";
        os << "<text x=\"" << fmt(x0 + plot_w + 3) << "\" y=\"" << fmt(y + 3)
           << "\" font-family=\"monospace\" font-size=\"9\">" << l.label
           << "</text>\n";
      }
    }
  }

  // time axis: one tick per step with the action glyph
  const double axis_y = y0 + plot_h + 16.0;
  for (int t = 0; t < T; ++t) {
    const double x = x0 + (t + 0.5) * kCell;
    os << "<text x=\"" << fmt(x - 3) << "\" y=\"" << fmt(axis_y)
       << "\" font-family=\"monospace\" font-size=\"9\" class=\"tick\">"
       << action_glyph(trace[t].action) << "</text>\n";
  }
  draw_markers(os, options, x0, y0, y0 + plot_h);
  os << "</svg>\n";
  return os.str();
}

void write_trace_svg(const std::string& path,
                     const std::vector<StepTrace>& trace,
                     const TracePlotOptions& options) {
  std::ofstream os(path, std::ios::trunc | std::ios::binary);
  if (!os) throw std::runtime_error("cannot open svg file " + path);
  os << render_trace_svg(trace, options);
}

}  // namespace ompn
