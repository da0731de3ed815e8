// Behavior cloning with the done-augmented likelihood.
//
// Demonstrations get one extra step whose action is `done`; the model's
// ending probability pi_end owns that action's mass, so the per-step
// distribution is p'(a) = p(a) (1 - pi_end) for real actions and
// p'(done) = pi_end. Training is truncated BPTT with Adam and global
// L2 gradient clipping.

#pragma once

#include "ompn/model.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace ompn {

struct Trajectory {
  std::vector<Vector> observations;  // length T+1 after augmentation
  std::vector<int> actions;          // indices into the augmented space
  std::vector<int> gt_boundaries;    // last step of each subtask, 0-based
  std::optional<Vector> sketch;      // encoded sketch, weakly supervised only
  bool terminal_obs_fallback = false;  // true when the done step repeats s_T

  int length() const { return static_cast<int>(observations.size()); }
  void validate(int act_dim) const;  // throws on malformed structure
};

// Appends the done step. `terminal_obs` is the true post-terminal
// observation captured during generation; when absent the last
// observation is repeated and the trajectory is flagged, since the
// repeat fallback costs accuracy in this domain.
Trajectory augment(std::vector<Vector> observations, std::vector<int> actions,
                   std::vector<int> gt_boundaries,
                   std::optional<Vector> terminal_obs, int done_action);

struct TrainConfig {
  double learning_rate = 1e-3;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  int bptt_len = 64;
  double grad_clip_l2 = 0.2;
  int epochs = 30;
  int batch_size = 1;  // trajectories per update
  std::uint64_t seed = 1;

  bool operator==(const TrainConfig&) const = default;
  void validate() const;
};

// --- loss -------------------------------------------------------------------

// Per-step loss term. For real actions: nll over the real-action logits
// minus log(1 - pi_end); for done: -log(pi_end). pi_end is clamped to
// [1e-7, 1 - 1e-7] inside logs and `saturations` counts clamp hits. The
// first step's hard-coded routing contributes no pi_end term. Under
// no_done the full logit vector is an ordinary softmax and pi_end is
// ignored entirely.
ad::Var step_loss(Variant variant, ad::Var logits, ad::Var pi_end, int action,
                  int act_dim, bool first_step, long* saturations);

struct LossResult {
  double value = 0.0;
  long saturations = 0;
};

// Mean of step_loss over the whole trajectory (teacher forced, exact BPTT).
LossResult bc_loss(const Ompn& model, const Trajectory& traj);

// --- optimization -----------------------------------------------------------

struct AdamState {
  std::vector<Matrix> m, v;
  long t = 0;
};

void adam_step(std::vector<Matrix*> params, const std::vector<Matrix>& grads,
               AdamState& state, double lr, double beta1, double beta2,
               double eps);

// Scales `grads` so their global L2 norm is at most `max_norm`; returns the
// pre-clip norm.
double clip_grads(std::vector<Matrix>& grads, double max_norm);

// Loss and parameter gradients accumulated over bptt windows; memory
// carries across windows as a constant. No parameter update is applied.
struct WindowedGrads {
  double loss = 0.0;
  long saturations = 0;
  std::vector<Matrix> grads;
};
WindowedGrads windowed_gradients(const Ompn& model, const Trajectory& traj,
                                 int bptt_len);

struct EpochStats {
  int epoch = 0;
  double mean_loss = 0.0;
  long saturations = 0;
  double wall_seconds = 0.0;
};

// Full trainer: one trajectory per update, windows of bptt_len, Adam after
// every window, global clip at grad_clip_l2, fresh initial memory per
// trajectory, epoch-level shuffling from the run seed. Aborts with context
// if the loss goes non-finite.
std::vector<EpochStats> train(Ompn& model, const std::vector<Trajectory>& dataset,
                              const TrainConfig& cfg,
                              const std::function<void(const EpochStats&)>& on_epoch = {});

void write_train_log_csv(const std::string& path,
                         const std::vector<EpochStats>& stats);

}  // namespace ompn
