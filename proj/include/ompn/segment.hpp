// Task decomposition from expansion-position traces, and the boundary
// metrics used to score it. Boundaries are 0-based indices of the last
// step of each predicted subtask; the last subtask always ends when the
// episode ends.

#pragma once

#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace ompn::seg {

struct DegenerateSignal : std::runtime_error {
  explicit DegenerateSignal(const std::string& what) : std::runtime_error(what) {}
};

// Min-max rescale to [0, 1]; a flat signal maps to all zeros.
std::vector<double> standardize(std::span<const double> pi_avg);

// Indices of the K largest values, ascending; ties go to earlier indices.
std::vector<int> topk_boundaries(std::span<const double> pi_avg, int K);

struct ThresholdResult {
  std::vector<int> boundaries;
  bool shortfall = false;  // fewer than K falling edges were available
};

// Falling-edge scan: records t-1 whenever the signal crosses from above
// to below `thres`, always appends T-1, and keeps the last K indices.
ThresholdResult threshold_boundaries(std::span<const double> standardized,
                                     int K, double thres);

struct AutoThreshold {
  double upper = 0.0;
  double lower = 0.0;
  double final_threshold = 0.0;
};

// Picks the highest interior peak and lowest interior valley of the
// standardized signal and returns their midpoint. Throws DegenerateSignal
// when either is missing; callers fall back to 0.5.
AutoThreshold auto_threshold(std::span<const double> standardized);

struct F1Result {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  bool flagged = false;  // one of the boundary lists was empty
};

// Boundary matching within +-tol steps. Each prediction and each ground
// truth participates in at most one match (greedy nearest pairing), so
// precision and recall stay within [0, 1].
F1Result f1_tolerance(std::span<const int> preds, std::span<const int> gts,
                      int tol);

// Per-step segment ordinals implied by a boundary list over T steps.
std::vector<int> boundaries_to_alignment(std::span<const int> boundaries, int T);

// Fraction of steps whose predicted segment ordinal matches the ground
// truth; both lists must end at T-1.
double alignment_accuracy(std::span<const int> pred_boundaries,
                          std::span<const int> gt_boundaries, int T);

enum class Detection { topk, threshold, automatic };
std::string to_string(Detection d);
Detection detection_from_string(const std::string& s);

struct SegmentationResult {
  std::vector<int> boundaries;
  std::vector<int> alignment;
  bool shortfall = false;
  double threshold_used = 0.0;  // meaningful for the threshold methods
};

// Routing helper: topk works on the raw trace, the threshold methods on
// the standardized one; `automatic` selects the threshold per trace and
// falls back to 0.5 on degenerate signals.
SegmentationResult segment_trace(std::span<const double> pi_avg, Detection d,
                                 int K, double thres = 0.5);

}  // namespace ompn::seg
