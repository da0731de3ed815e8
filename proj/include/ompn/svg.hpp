// Deterministic SVG renderings of expansion-position traces: per-slot
// pi bands for grid-world traces, or a standardized pi_avg curve with
// threshold lines for smoother domains. Output is byte-stable for a
// given input so plots can be golden-tested.

#pragma once

#include "ompn/model.hpp"
#include "ompn/segment.hpp"

#include <optional>
#include <string>
#include <vector>

namespace ompn {

struct TracePlotOptions {
  enum class Style { pi_bands, threshold };
  Style style = Style::pi_bands;
  std::vector<int> gt_boundaries;
  std::vector<int> predicted;
  // drawn as three horizontal lines in the threshold style
  std::optional<seg::AutoThreshold> thresholds;
  std::string title;
};

std::string render_trace_svg(const std::vector<StepTrace>& trace,
                             const TracePlotOptions& options);

void write_trace_svg(const std::string& path,
                     const std::vector<StepTrace>& trace,
                     const TracePlotOptions& options);

}  // namespace ompn
