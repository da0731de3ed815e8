#include "ompn/segment.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace ompn::seg {

std::vector<double> standardize(std::span<const double> pi_avg) {
  if (pi_avg.empty()) return {};
  auto [lo_it, hi_it] = std::minmax_element(pi_avg.begin(), pi_avg.end());
  const double lo = *lo_it, hi = *hi_it;
  std::vector<double> out(pi_avg.size(), 0.0);
  if (hi > lo)
    for (std::size_t i = 0; i < pi_avg.size(); ++i)
      out[i] = (pi_avg[i] - lo) / (hi - lo);
  return out;
}

std::vector<int> topk_boundaries(std::span<const double> pi_avg, int K) {
  const int T = static_cast<int>(pi_avg.size());
  if (K < 1 || K > T)
    throw std::invalid_argument("topk_boundaries: K=" + std::to_string(K) +
                                " out of [1, " + std::to_string(T) + "]");
  std::vector<int> idx(T);
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) {
    if (pi_avg[a] != pi_avg[b]) return pi_avg[a] > pi_avg[b];
    return a < b;  // ties favor earlier steps
  });
  idx.resize(K);
  std::sort(idx.begin(), idx.end());
  return idx;
}

ThresholdResult threshold_boundaries(std::span<const double> standardized,
                                     int K, double thres) {
  if (K < 1) throw std::invalid_argument("threshold_boundaries: K must be >= 1");
  if (thres < 0.0 || thres > 1.0)
    throw std::invalid_argument("threshold_boundaries: thres must be in [0, 1]");
  const int T = static_cast<int>(standardized.size());
  std::vector<int> preds;
  bool prev = false;
  for (int t = 0; t < T; ++t) {
    const bool curr = standardized[t] > thres;
    if (prev == curr) continue;
    if (prev && !curr) preds.push_back(t - 1);
    prev = curr;
  }
  preds.push_back(T - 1);
  ThresholdResult out;
  if (static_cast<int>(preds.size()) > K) {
    out.boundaries.assign(preds.end() - K, preds.end());
  } else {
    out.boundaries = std::move(preds);
    out.shortfall = static_cast<int>(out.boundaries.size()) < K;
  }
  return out;
}

AutoThreshold auto_threshold(std::span<const double> standardized) {
  const int L = static_cast<int>(standardized.size());
  std::vector<double> diff;
  for (int i = 0; i + 1 < L; ++i)
    diff.push_back(standardized[i + 1] - standardized[i]);
  bool have_peak = false, have_valley = false;
  double upper = 0.0, lower = 0.0;
  for (int i = 1; i < static_cast<int>(diff.size()); ++i) {
    if (diff[i] < 0.0 && diff[i - 1] > 0.0) {  // local maximum at i
      if (!have_peak || standardized[i] > upper) upper = standardized[i];
      have_peak = true;
    }
    if (diff[i] > 0.0 && diff[i - 1] < 0.0) {  // local minimum at i
      if (!have_valley || standardized[i] < lower) lower = standardized[i];
      have_valley = true;
    }
  }
  if (!have_peak || !have_valley)
    throw DegenerateSignal(
        std::string("auto_threshold: signal has no interior ") +
        (have_peak ? "valley" : "peak"));
  return {upper, lower, (upper + lower) / 2.0};
}

F1Result f1_tolerance(std::span<const int> preds, std::span<const int> gts,
                      int tol) {
  if (tol < 0) throw std::invalid_argument("f1_tolerance: tol must be >= 0");
  F1Result out;
  if (preds.empty() || gts.empty()) {
    out.flagged = true;
    return out;
  }
  struct Pair {
    int dist, pi, gi;
  };
  std::vector<Pair> pairs;
  for (int i = 0; i < static_cast<int>(preds.size()); ++i)
    for (int j = 0; j < static_cast<int>(gts.size()); ++j) {
      const int d = std::abs(preds[i] - gts[j]);
      if (d <= tol) pairs.push_back({d, i, j});
    }
  std::sort(pairs.begin(), pairs.end(), [](const Pair& a, const Pair& b) {
    if (a.dist != b.dist) return a.dist < b.dist;
    if (a.pi != b.pi) return a.pi < b.pi;
    return a.gi < b.gi;
  });
  std::vector<bool> pred_used(preds.size(), false), gt_used(gts.size(), false);
  int matches = 0;
  for (const Pair& p : pairs) {
    if (pred_used[p.pi] || gt_used[p.gi]) continue;
    pred_used[p.pi] = true;
    gt_used[p.gi] = true;
    ++matches;
  }
  out.precision = static_cast<double>(matches) / static_cast<double>(preds.size());
  out.recall = static_cast<double>(matches) / static_cast<double>(gts.size());
  out.f1 = (out.precision + out.recall) > 0.0
               ? 2.0 * out.precision * out.recall / (out.precision + out.recall)
               : 0.0;
  return out;
}

std::vector<int> boundaries_to_alignment(std::span<const int> boundaries,
                                         int T) {
  int prev = -1;
  for (int b : boundaries) {
    if (b <= prev || b >= T)
      throw std::invalid_argument(
          "boundaries must be strictly increasing within [0, T)");
    prev = b;
  }
  if (boundaries.empty() || boundaries.back() != T - 1)
    throw std::invalid_argument("boundary list must end at T-1");
  std::vector<int> alignment(T);
  int segment = 0;
  int next_boundary = 0;
  for (int t = 0; t < T; ++t) {
    alignment[t] = segment;
    if (t == boundaries[next_boundary]) {
      ++segment;
      ++next_boundary;
    }
  }
  return alignment;
}

double alignment_accuracy(std::span<const int> pred_boundaries,
                          std::span<const int> gt_boundaries, int T) {
  auto pred = boundaries_to_alignment(pred_boundaries, T);
  auto gt = boundaries_to_alignment(gt_boundaries, T);
  int agree = 0;
  for (int t = 0; t < T; ++t)
    if (pred[t] == gt[t]) ++agree;
  return static_cast<double>(agree) / static_cast<double>(T);
}

std::string to_string(Detection d) {
  switch (d) {
    case Detection::topk: return "topk";
    case Detection::threshold: return "threshold";
    case Detection::automatic: return "auto";
  }
  return "topk";
}

Detection detection_from_string(const std::string& s) {
  if (s == "topk") return Detection::topk;
  if (s == "threshold") return Detection::threshold;
  if (s == "auto") return Detection::automatic;
  throw std::invalid_argument("unknown detection method: " + s);
}

SegmentationResult segment_trace(std::span<const double> pi_avg, Detection d,
                                 int K, double thres) {
  const int T = static_cast<int>(pi_avg.size());
  SegmentationResult out;
  if (d == Detection::topk) {
    // The last subtask ends when the episode ends, so T-1 is always a
    // boundary; the remaining K-1 come from the K-1 largest interior values.
    if (K < 1 || K > T)
      throw std::invalid_argument("segment_trace: K out of range");
    if (K > 1)
      out.boundaries = topk_boundaries(pi_avg.subspan(0, T - 1), K - 1);
    out.boundaries.push_back(T - 1);
  } else {
    auto standardized = standardize(pi_avg);
    double t = thres;
    if (d == Detection::automatic) {
      try {
        t = auto_threshold(standardized).final_threshold;
      } catch (const DegenerateSignal&) {
        t = 0.5;
      }
    }
    out.threshold_used = t;
    auto r = threshold_boundaries(standardized, K, t);
    out.boundaries = std::move(r.boundaries);
    out.shortfall = r.shortfall;
  }
  out.alignment = boundaries_to_alignment(out.boundaries, T);
  return out;
}

}  // namespace ompn::seg
