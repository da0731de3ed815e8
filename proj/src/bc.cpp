#include "ompn/bc.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <stdexcept>

namespace ompn {

namespace {

constexpr double kPiEndFloor = 1e-7;

struct WindowPass {
  double loss = 0.0;
  std::vector<Matrix> grads;
  Matrix end_memory;
};

// Forward + backward over steps [start, end) of one trajectory. The
// window loss is the sum of step losses divided by the full trajectory
// length, so window losses add up to the exact trajectory mean and
// gradients differ from full BPTT only by truncation at the window
// boundary, where the incoming memory is a constant.
WindowPass run_window(const Ompn& model, const Trajectory& traj, int start,
                      int end, const Matrix* carried_memory,
                      long* saturations) {
  const auto& cfg = model.config();
  const int total = traj.length();
  ad::Tape tape;
  auto bound = model.bind(tape);
  ad::Var mem = carried_memory == nullptr
                    ? model.initial_memory(tape, bound, traj.sketch)
                    : tape.constant(*carried_memory);
  std::vector<ad::Var> terms;
  terms.reserve(end - start);
  for (int t = start; t < end; ++t) {
    auto r = model.step(tape, bound, traj.observations[t], traj.sketch, mem, t);
    terms.push_back(step_loss(cfg.variant, r.logits, r.pi_end, traj.actions[t],
                              cfg.act_dim, t == 0, saturations));
    mem = r.memory;
  }
  ad::Var window_loss = ad::scale(
      terms.size() > 1 ? ad::sum(ad::concat(terms, 0)) : terms[0], 1.0 / total);
  WindowPass out;
  out.loss = window_loss.scalar();
  if (!std::isfinite(out.loss))
    throw ad::NumericError("bc loss non-finite in window starting at step " +
                           std::to_string(start));
  tape.backward(window_loss);
  out.grads.reserve(bound.all.size());
  for (const ad::Var& v : bound.all) out.grads.push_back(v.grad());
  out.end_memory = mem.value();
  return out;
}

}  // namespace

void Trajectory::validate(int act_dim) const {
  if (observations.empty()) throw std::invalid_argument("trajectory is empty");
  if (observations.size() != actions.size())
    throw std::invalid_argument("trajectory: observation/action count mismatch");
  const int done = act_dim - 1;
  for (std::size_t t = 0; t < actions.size(); ++t) {
    if (actions[t] < 0 || actions[t] >= act_dim)
      throw std::invalid_argument("trajectory: action out of range at step " +
                                  std::to_string(t));
    bool is_done = actions[t] == done;
    bool is_last = t + 1 == actions.size();
    if (is_done != is_last)
      throw std::invalid_argument(
          "trajectory: done action must appear exactly once, at the final step");
  }
  int prev = -1;
  for (int b : gt_boundaries) {
    if (b <= prev)
      throw std::invalid_argument("trajectory: boundaries must be strictly increasing");
    prev = b;
  }
  if (!gt_boundaries.empty() && gt_boundaries.back() != length() - 2)
    throw std::invalid_argument(
        "trajectory: last boundary must be the final pre-done step");
}

Trajectory augment(std::vector<Vector> observations, std::vector<int> actions,
                   std::vector<int> gt_boundaries,
                   std::optional<Vector> terminal_obs, int done_action) {
  if (observations.empty() || observations.size() != actions.size())
    throw std::invalid_argument("augment: malformed raw trajectory");
  Trajectory traj;
  traj.terminal_obs_fallback = !terminal_obs.has_value();
  Vector last = terminal_obs.has_value() ? std::move(*terminal_obs)
                                         : observations.back();
  traj.observations = std::move(observations);
  traj.observations.push_back(std::move(last));
  traj.actions = std::move(actions);
  traj.actions.push_back(done_action);
  traj.gt_boundaries = std::move(gt_boundaries);
  return traj;
}

void TrainConfig::validate() const {
  if (bptt_len < 1) throw std::invalid_argument("bptt_len must be >= 1");
  if (grad_clip_l2 <= 0.0) throw std::invalid_argument("grad_clip_l2 must be > 0");
  if (epochs < 0) throw std::invalid_argument("epochs must be >= 0");
  if (learning_rate <= 0.0) throw std::invalid_argument("learning_rate must be > 0");
  if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
}

ad::Var step_loss(Variant variant, ad::Var logits, ad::Var pi_end, int action,
                  int act_dim, bool first_step, long* saturations) {
  if (variant == Variant::no_done)
    return ad::log_softmax_nll(logits, action);

  const int done = act_dim - 1;
  if (action == done) {
    ad::Var q = ad::clamp(pi_end, kPiEndFloor, 1.0 - kPiEndFloor, saturations);
    return ad::scale(ad::log(q), -1.0);
  }
  ad::Var nll = ad::log_softmax_nll(ad::slice(logits, 0, 0, done), action);
  if (first_step) return nll;  // pi_end is pinned to zero at the first step
  ad::Var q = ad::clamp(pi_end, kPiEndFloor, 1.0 - kPiEndFloor, saturations);
  return nll - ad::log(ad::rsub_const(1.0, q));
}

LossResult bc_loss(const Ompn& model, const Trajectory& traj) {
  auto wg = windowed_gradients(model, traj, traj.length());
  return {wg.loss, wg.saturations};
}

WindowedGrads windowed_gradients(const Ompn& model, const Trajectory& traj,
                                 int bptt_len) {
  const auto& cfg = model.config();
  traj.validate(cfg.act_dim);
  const int total = traj.length();

  WindowedGrads out;
  out.grads.assign(model.named_params().size(), Matrix());
  Matrix memory;
  for (int start = 0; start < total; start += bptt_len) {
    const int end = std::min(total, start + bptt_len);
    WindowPass pass = run_window(model, traj, start, end,
                                 start == 0 ? nullptr : &memory,
                                 &out.saturations);
    out.loss += pass.loss;
    for (std::size_t p = 0; p < pass.grads.size(); ++p) {
      if (out.grads[p].size() == 0)
        out.grads[p] = std::move(pass.grads[p]);
      else
        out.grads[p] += pass.grads[p];
    }
    memory = std::move(pass.end_memory);
  }
  return out;
}

double clip_grads(std::vector<Matrix>& grads, double max_norm) {
  double sq = 0.0;
  for (const Matrix& g : grads)
    if (g.size() != 0) sq += g.squaredNorm();
  double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    double s = max_norm / norm;
    for (Matrix& g : grads)
      if (g.size() != 0) g *= s;
  }
  return norm;
}

void adam_step(std::vector<Matrix*> params, const std::vector<Matrix>& grads,
               AdamState& state, double lr, double beta1, double beta2,
               double eps) {
  if (params.size() != grads.size())
    throw std::invalid_argument("adam_step: parameter/gradient count mismatch");
  if (state.m.empty()) {
    state.m.reserve(params.size());
    state.v.reserve(params.size());
    for (Matrix* p : params) {
      state.m.push_back(Matrix::Zero(p->rows(), p->cols()));
      state.v.push_back(Matrix::Zero(p->rows(), p->cols()));
    }
  }
  state.t += 1;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i].size() == 0) continue;
    state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * grads[i];
    state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * grads[i].cwiseProduct(grads[i]);
    Matrix m_hat = state.m[i] / bc1;
    Matrix v_hat = state.v[i] / bc2;
    params[i]->array() -= lr * m_hat.array() / (v_hat.array().sqrt() + eps);
  }
}

std::vector<EpochStats> train(Ompn& model, const std::vector<Trajectory>& dataset,
                              const TrainConfig& cfg,
                              const std::function<void(const EpochStats&)>& on_epoch) {
  cfg.validate();
  if (dataset.empty()) throw std::invalid_argument("train: empty dataset");
  const auto& mcfg = model.config();
  for (const Trajectory& t : dataset) t.validate(mcfg.act_dim);

  std::vector<Matrix*> params = model.param_ptrs();
  AdamState adam;
  std::mt19937_64 rng(cfg.seed);
  std::vector<int> order(dataset.size());
  std::iota(order.begin(), order.end(), 0);

  std::vector<EpochStats> stats;
  stats.reserve(cfg.epochs);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    auto t0 = std::chrono::steady_clock::now();
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    long saturations = 0;
    for (std::size_t base = 0; base < order.size();
         base += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t batch_end =
          std::min(order.size(), base + static_cast<std::size_t>(cfg.batch_size));
      std::vector<Matrix> batch_grads;
      int in_batch = 0;
      for (std::size_t bi = base; bi < batch_end; ++bi) {
        const int idx = order[bi];
        const Trajectory& traj = dataset[idx];
        const int total = traj.length();
        Matrix memory;
        for (int start = 0; start < total; start += cfg.bptt_len) {
          const int end = std::min(total, start + cfg.bptt_len);
          WindowPass pass;
          try {
            pass = run_window(model, traj, start, end,
                              start == 0 ? nullptr : &memory, &saturations);
          } catch (const ad::NumericError& e) {
            throw ad::NumericError(std::string(e.what()) + " (trajectory " +
                                   std::to_string(idx) + ", epoch " +
                                   std::to_string(epoch) + ")");
          }
          loss_sum += pass.loss;
          if (cfg.batch_size == 1) {
            // one optimizer step per BPTT window
            clip_grads(pass.grads, cfg.grad_clip_l2);
            adam_step(params, pass.grads, adam, cfg.learning_rate,
                      cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
          } else if (batch_grads.empty()) {
            batch_grads = std::move(pass.grads);
          } else {
            for (std::size_t p = 0; p < batch_grads.size(); ++p) {
              if (pass.grads[p].size() == 0) continue;
              if (batch_grads[p].size() == 0)
                batch_grads[p] = std::move(pass.grads[p]);
              else
                batch_grads[p] += pass.grads[p];
            }
          }
          memory = std::move(pass.end_memory);
        }
        ++in_batch;
      }
      if (cfg.batch_size > 1 && !batch_grads.empty()) {
        for (Matrix& g : batch_grads)
          if (g.size() != 0) g /= static_cast<double>(in_batch);
        clip_grads(batch_grads, cfg.grad_clip_l2);
        adam_step(params, batch_grads, adam, cfg.learning_rate, cfg.adam_beta1,
                  cfg.adam_beta2, cfg.adam_eps);
      }
    }
    auto t1 = std::chrono::steady_clock::now();
    EpochStats s;
    s.epoch = epoch;
    s.mean_loss = loss_sum / static_cast<double>(dataset.size());
    s.saturations = saturations;
    s.wall_seconds = std::chrono::duration<double>(t1 - t0).count();
    stats.push_back(s);
    if (on_epoch) on_epoch(s);
  }
  return stats;
}

void write_train_log_csv(const std::string& path,
                         const std::vector<EpochStats>& stats) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open train log " + path);
  os << "epoch,mean_loss,saturations,wall_seconds\n";
  for (const EpochStats& s : stats)
    os << s.epoch << "," << s.mean_loss << "," << s.saturations << ","
       << s.wall_seconds << "\n";
}

}  // namespace ompn
