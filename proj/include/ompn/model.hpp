// Ordered memory policy network.
//
// A recurrent policy whose memory is a stack of n slots, slot n the
// highest level. Each step runs a bottom-up recurrence that refreshes
// every slot with the current observation, scores per-slot termination,
// turns the scores into an expansion distribution pi by stick-breaking,
// runs a top-down recurrence that writes fresh lower-level content from
// the expansion point, and blends the three streams into the next
// memory. The action is read from the lowest slot.

#pragma once

#include "ompn/autodiff.hpp"
#include "ompn/checkpoint.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace ompn {

using ad::Matrix;
using Vector = Eigen::VectorXd;

enum class Variant { full, no_bottomup, no_topdown, no_bottomup_recurr, no_done };

std::string to_string(Variant v);
Variant variant_from_string(const std::string& s);

// Cell function used by both recurrences. `gated` is a single-gate convex
// blend between the carried state and a tanh candidate; `om` is the
// deeper gated recursive cell with one sigmoid gate per input stream and
// a layer-normalized output.
enum class CellKind { gated, om };
std::string to_string(CellKind c);
CellKind cell_kind_from_string(const std::string& s);

struct OmpnConfig {
  int n_slots = 3;
  int mem_dim = 64;
  int obs_dim = 0;
  int act_dim = 0;    // augmented action space; counts `done` exactly once
  int sketch_dim = 0; // 0 in the unsupervised setting
  Variant variant = Variant::full;
  CellKind cell = CellKind::gated;

  void validate() const;  // throws std::invalid_argument
  int encoder_in() const { return obs_dim + sketch_dim; }
};

// Per-step routing record, the signal monitored for segmentation.
struct ExpansionState {
  Vector f;        // termination scores, length n
  Vector pi_hat;   // unnormalized expansion distribution
  Vector pi;       // normalized expansion distribution
  double pi_end = 0.0;
  double pi_avg = 0.0;  // expected expansion position, sum_i i*pi_i
};

// One line of the trace stream consumed by segmentation and plotting.
struct StepTrace {
  int t = 0;
  std::vector<double> f;
  std::vector<double> pi;
  double pi_end = 0.0;
  double pi_avg = 0.0;
  int action = 0;
};

void write_trace_jsonl(const std::string& path, const std::vector<StepTrace>& trace);
std::vector<StepTrace> read_trace_jsonl(const std::string& path);

// --- graph-building pieces -------------------------------------------------

struct CellWeights {
  CellKind kind = CellKind::gated;
  // gated: candidate tanh(Wc*[parts]+bc), gate sigmoid(Wg*[parts]+bg),
  // output gate.*parts.back() + (1-gate).*candidate
  ad::Var Wc, bc, Wg, bg;
  // om: h = relu(W1*[parts]+b1); W2*h+b2 splits into one sigmoid gate per
  // part plus a candidate gate and raw candidate; output is the layer
  // norm of the gated sum
  ad::Var W1, b1, W2, b2, ln_gain, ln_bias;
};

struct ScoreWeights {
  ad::Var W1, b1, W2, b2;
};

// Cell function over an ordered list of input streams; the last entry is
// the state being copied or overwritten. Dispatches on w.kind.
ad::Var gated_cell(std::span<const ad::Var> parts, const CellWeights& w);
inline ad::Var gated_cell(std::initializer_list<ad::Var> parts,
                          const CellWeights& w) {
  return gated_cell(std::span<const ad::Var>(parts.begin(), parts.size()), w);
}

struct StickBreak {
  ad::Var pi_hat;  // n x 1
  ad::Var pi;      // n x 1, pi_hat / max(sum(pi_hat), 1e-8)
  ad::Var pi_end;  // 1 x 1, prod(f)
};

// pi_hat_1 = 1-f_1, pi_hat_i = (1-f_i) prod_{j<i} f_j, pi_end = prod_i f_i.
StickBreak stick_break(ad::Var f);

// M_next = M_prev (1 - cum_from_i) + C pi + M_hat (1 - cum_to_i), columns
// are slots, weights applied per slot.
ad::Var memory_update(ad::Var m_prev, ad::Var c, ad::Var m_hat, ad::Var pi);

// --- the model -------------------------------------------------------------

class Ompn {
 public:
  Ompn(OmpnConfig cfg, std::uint64_t seed);

  const OmpnConfig& config() const { return cfg_; }

  NamedParams& named_params() { return params_; }
  const NamedParams& named_params() const { return params_; }
  std::vector<Matrix*> param_ptrs();
  void load_params(const NamedParams& loaded);  // validates names and shapes

  // Tape-bound views of every parameter, in named_params() order.
  struct Bound {
    ad::Var enc_W, enc_b;
    std::vector<CellWeights> bottom_up;   // n
    std::vector<ScoreWeights> score;      // n
    std::vector<CellWeights> top_down;    // n-1
    ad::Var act_W, act_b;
    ad::Var env_W;  // valid only when sketch_dim > 0
    std::vector<ad::Var> all;
  };
  Bound bind(ad::Tape& tape) const;

  // Zero matrix; in the weakly supervised setting the highest slot holds a
  // linear embedding of `env_info`.
  ad::Var initial_memory(ad::Tape& tape, const Bound& b,
                         const std::optional<Vector>& env_info) const;

  struct StepResult {
    ad::Var memory;   // mem_dim x n_slots
    ad::Var output;   // lowest slot of the updated memory
    ad::Var logits;   // act_dim x 1, over the augmented action space
    ad::Var f, pi_hat, pi, pi_end, pi_avg;
  };

  // One recurrent step. `t` is the 0-based position in the trajectory; at
  // t == 0 the bottom-up pass is skipped and pi is pinned one-hot at the
  // highest slot so the memory expands from the root downward.
  StepResult step(ad::Tape& tape, const Bound& b, const Vector& obs,
                  const std::optional<Vector>& sketch, ad::Var m_prev,
                  int t) const;

  // Bottom-up recurrence: per-slot refreshed contents C (mem_dim x n) and
  // termination scores f (n x 1). Exposed separately for testing.
  struct BottomUp {
    ad::Var c;
    ad::Var f;
  };
  BottomUp bottom_up(ad::Tape& tape, const Bound& b, ad::Var x,
                     ad::Var m_prev) const;

  // Top-down recurrence producing the expanded contents M_hat.
  ad::Var top_down(ad::Tape& tape, const Bound& b, ad::Var x, ad::Var c,
                   ad::Var pi) const;

  ExpansionState expansion_state(const StepResult& r) const;

 private:
  OmpnConfig cfg_;
  NamedParams params_;
};

// Teacher-forced pass over a demonstration: runs the model over the
// observation sequence and records the routing at every step. `actions`
// only annotates the trace records.
std::vector<StepTrace> trace_demo(const Ompn& model,
                                  const std::vector<Vector>& observations,
                                  const std::vector<int>& actions,
                                  const std::optional<Vector>& sketch,
                                  const std::optional<Vector>& env_info);

}  // namespace ompn
