#include "ompn/model.hpp"

#include <json.hpp>

#include <cmath>
#include <fstream>
#include <limits>
#include <random>
#include <stdexcept>
#include <unordered_map>

namespace ompn {

namespace {

constexpr double kPiNormFloor = 1e-8;

Matrix lower_tri_ones(int n) {
  Matrix m = Matrix::Zero(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j <= i; ++j) m(i, j) = 1.0;
  return m;
}

Matrix upper_tri_ones(int n) {
  Matrix m = Matrix::Zero(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = i; j < n; ++j) m(i, j) = 1.0;
  return m;
}

}  // namespace

std::string to_string(CellKind c) {
  return c == CellKind::gated ? "gated" : "om";
}

CellKind cell_kind_from_string(const std::string& s) {
  if (s == "gated") return CellKind::gated;
  if (s == "om") return CellKind::om;
  throw std::invalid_argument("unknown cell kind: " + s);
}

std::string to_string(Variant v) {
  switch (v) {
    case Variant::full: return "full";
    case Variant::no_bottomup: return "no_bottomup";
    case Variant::no_topdown: return "no_topdown";
    case Variant::no_bottomup_recurr: return "no_bottomup_recurr";
    case Variant::no_done: return "no_done";
  }
  return "full";
}

Variant variant_from_string(const std::string& s) {
  if (s == "full") return Variant::full;
  if (s == "no_bottomup") return Variant::no_bottomup;
  if (s == "no_topdown") return Variant::no_topdown;
  if (s == "no_bottomup_recurr") return Variant::no_bottomup_recurr;
  if (s == "no_done") return Variant::no_done;
  throw std::invalid_argument("unknown variant: " + s);
}

void OmpnConfig::validate() const {
  if (n_slots < 1 || n_slots > 8)
    throw std::invalid_argument("n_slots must be in [1, 8], got " +
                                std::to_string(n_slots));
  if (mem_dim < 1) throw std::invalid_argument("mem_dim must be >= 1");
  if (obs_dim < 1) throw std::invalid_argument("obs_dim must be >= 1");
  if (act_dim < 2)
    throw std::invalid_argument("act_dim must cover at least one real action plus done");
  if (sketch_dim < 0) throw std::invalid_argument("sketch_dim must be >= 0");
}

ad::Var gated_cell(std::span<const ad::Var> parts, const CellWeights& w) {
  ad::Var in = ad::concat(parts, 0);
  if (w.kind == CellKind::gated) {
    ad::Var candidate = ad::tanh(ad::matmul(w.Wc, in) + w.bc);
    ad::Var gate = ad::sigmoid(ad::matmul(w.Wg, in) + w.bg);
    ad::Var state = parts.back();
    return gate * state + ad::rsub_const(1.0, gate) * candidate;
  }
  const int k = static_cast<int>(parts.size());
  const auto m = parts[0].rows();
  ad::Var hidden = ad::relu(ad::matmul(w.W1, in) + w.b1);
  ad::Var raw = ad::matmul(w.W2, hidden) + w.b2;  // (k+2) blocks of m
  ad::Var mix;
  for (int j = 0; j < k; ++j) {
    ad::Var gate = ad::sigmoid(ad::slice(raw, 0, j * m, m));
    ad::Var term = gate * parts[j];
    mix = j == 0 ? term : mix + term;
  }
  ad::Var cand_gate = ad::sigmoid(ad::slice(raw, 0, k * m, m));
  ad::Var candidate = ad::slice(raw, 0, (k + 1) * m, m);
  mix = mix + cand_gate * candidate;
  return ad::layer_norm(mix, w.ln_gain, w.ln_bias);
}

StickBreak stick_break(ad::Var f) {
  const int n = static_cast<int>(f.rows());
  ad::Tape* tape = ad::detail::var_node(f)->tape;
  // prefix products: prefix[i] = prod_{j<i} f_j with prefix[0] = 1
  std::vector<ad::Var> prefix;
  prefix.reserve(n);
  ad::Var running = tape->constant(Matrix::Ones(1, 1));
  prefix.push_back(running);
  for (int i = 1; i < n; ++i) {
    running = running * ad::slice(f, 0, i - 1, 1);
    prefix.push_back(running);
  }
  ad::Var pi_end = prefix.back() * ad::slice(f, 0, n - 1, 1);
  ad::Var pi_hat = ad::rsub_const(1.0, f) * ad::concat(prefix, 0);
  ad::Var total = ad::clamp(ad::sum(pi_hat), kPiNormFloor,
                            std::numeric_limits<double>::infinity());
  ad::Var pi = ad::divide(pi_hat, total);
  return {pi_hat, pi, pi_end};
}

ad::Var memory_update(ad::Var m_prev, ad::Var c, ad::Var m_hat, ad::Var pi) {
  const int n = static_cast<int>(pi.rows());
  ad::Tape* tape = ad::detail::var_node(pi)->tape;
  ad::Var cum_to = ad::matmul(tape->constant(lower_tri_ones(n)), pi);    // sum_{j<=i}
  ad::Var cum_from = ad::matmul(tape->constant(upper_tri_ones(n)), pi);  // sum_{j>=i}
  ad::Var kept = ad::colscale(m_prev, ad::rsub_const(1.0, cum_from));
  ad::Var written = ad::colscale(c, pi);
  ad::Var expanded = ad::colscale(m_hat, ad::rsub_const(1.0, cum_to));
  return kept + written + expanded;
}

// --- parameter construction -------------------------------------------------

Ompn::Ompn(OmpnConfig cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  std::mt19937_64 rng(seed);
  auto uniform_init = [&rng](Eigen::Index rows, Eigen::Index cols,
                             Eigen::Index fan_in) {
    double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    Matrix m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r)
      for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = dist(rng);
    return m;
  };
  auto push = [this](const std::string& name, Matrix m) {
    params_.emplace_back(name, std::move(m));
  };

  const int m = cfg_.mem_dim;
  const int e = cfg_.encoder_in();
  auto push_cell = [&](const std::string& p, int parts) {
    if (cfg_.cell == CellKind::gated) {
      push(p + "Wc", uniform_init(m, parts * m, parts * m));
      push(p + "bc", uniform_init(m, 1, parts * m));
      push(p + "Wg", uniform_init(m, parts * m, parts * m));
      push(p + "bg", uniform_init(m, 1, parts * m));
    } else {
      const int hidden = 4 * m;
      push(p + "W1", uniform_init(hidden, parts * m, parts * m));
      push(p + "b1", uniform_init(hidden, 1, parts * m));
      push(p + "W2", uniform_init((parts + 2) * m, hidden, hidden));
      push(p + "b2", uniform_init((parts + 2) * m, 1, hidden));
      push(p + "ln_g", Matrix::Ones(m, 1));
      push(p + "ln_b", Matrix::Zero(m, 1));
    }
  };
  push("enc.W", uniform_init(m, e, e));
  push("enc.b", uniform_init(m, 1, e));
  for (int i = 1; i <= cfg_.n_slots; ++i)
    push_cell("bu" + std::to_string(i) + ".", 3);
  for (int i = 1; i <= cfg_.n_slots; ++i) {
    const std::string p = "score" + std::to_string(i) + ".";
    push(p + "W1", uniform_init(m, 3 * m, 3 * m));
    push(p + "b1", uniform_init(m, 1, 3 * m));
    push(p + "W2", uniform_init(1, m, m));
    // start with low termination scores: the stick breaks at the lowest
    // slot, higher slots begin as exact copies and expansion has to be
    // learned rather than unlearned
    push(p + "b2", uniform_init(1, 1, m).array() - 2.0);
  }
  for (int i = 1; i < cfg_.n_slots; ++i)
    push_cell("td" + std::to_string(i) + ".", 2);
  push("act.W", uniform_init(cfg_.act_dim, 2 * m, 2 * m));
  push("act.b", uniform_init(cfg_.act_dim, 1, 2 * m));
  if (cfg_.sketch_dim > 0)
    push("env.W", uniform_init(m, cfg_.sketch_dim, cfg_.sketch_dim));
}

std::vector<Matrix*> Ompn::param_ptrs() {
  std::vector<Matrix*> out;
  out.reserve(params_.size());
  for (auto& [name, m] : params_) out.push_back(&m);
  return out;
}

void Ompn::load_params(const NamedParams& loaded) {
  std::unordered_map<std::string, const Matrix*> by_name;
  for (const auto& [name, m] : loaded) by_name[name] = &m;
  for (auto& [name, m] : params_) {
    auto it = by_name.find(name);
    if (it == by_name.end())
      throw std::runtime_error("load_params: missing parameter " + name);
    if (it->second->rows() != m.rows() || it->second->cols() != m.cols())
      throw std::runtime_error("load_params: shape mismatch for " + name);
    m = *it->second;
  }
}

Ompn::Bound Ompn::bind(ad::Tape& tape) const {
  Bound b;
  b.all.reserve(params_.size());
  std::size_t k = 0;
  auto next = [&]() {
    ad::Var v = tape.leaf(params_[k].second);
    ++k;
    b.all.push_back(v);
    return v;
  };
  auto next_cell = [&]() {
    CellWeights w;
    w.kind = cfg_.cell;
    if (cfg_.cell == CellKind::gated) {
      w.Wc = next();
      w.bc = next();
      w.Wg = next();
      w.bg = next();
    } else {
      w.W1 = next();
      w.b1 = next();
      w.W2 = next();
      w.b2 = next();
      w.ln_gain = next();
      w.ln_bias = next();
    }
    return w;
  };
  b.enc_W = next();
  b.enc_b = next();
  b.bottom_up.resize(cfg_.n_slots);
  for (int i = 0; i < cfg_.n_slots; ++i) b.bottom_up[i] = next_cell();
  b.score.resize(cfg_.n_slots);
  for (int i = 0; i < cfg_.n_slots; ++i)
    b.score[i] = {next(), next(), next(), next()};
  b.top_down.resize(cfg_.n_slots - 1);
  for (int i = 0; i + 1 < cfg_.n_slots; ++i) b.top_down[i] = next_cell();
  b.act_W = next();
  b.act_b = next();
  if (cfg_.sketch_dim > 0) b.env_W = next();
  return b;
}

ad::Var Ompn::initial_memory(ad::Tape& tape, const Bound& b,
                             const std::optional<Vector>& env_info) const {
  const int m = cfg_.mem_dim;
  const int n = cfg_.n_slots;
  if (!env_info.has_value()) return tape.constant(Matrix::Zero(m, n));
  if (cfg_.sketch_dim == 0)
    throw std::invalid_argument("initial_memory: env_info given but sketch_dim is 0");
  if (env_info->size() != cfg_.sketch_dim)
    throw ad::DimensionError("initial_memory: env_info has size " +
                             std::to_string(env_info->size()) + ", expected " +
                             std::to_string(cfg_.sketch_dim));
  ad::Var embed = ad::matmul(b.env_W, tape.constant(*env_info));
  if (n == 1) return embed;
  ad::Var zeros = tape.constant(Matrix::Zero(m, n - 1));
  return ad::concat({zeros, embed}, 1);
}

Ompn::BottomUp Ompn::bottom_up(ad::Tape& tape, const Bound& b, ad::Var x,
                               ad::Var m_prev) const {
  const int n = cfg_.n_slots;
  std::vector<ad::Var> cols, scores;
  cols.reserve(n);
  scores.reserve(n);
  ad::Var prev = x;  // C_0 = x
  ad::Var zero;
  if (cfg_.variant == Variant::no_bottomup_recurr)
    zero = tape.constant(Matrix::Zero(cfg_.mem_dim, 1));
  for (int i = 0; i < n; ++i) {
    ad::Var mi = ad::slice(m_prev, 1, i, 1);
    ad::Var ci;
    ad::Var score_mid;
    if (cfg_.variant == Variant::no_bottomup) {
      ci = mi;
      score_mid = mi;
    } else {
      ad::Var carry = cfg_.variant == Variant::no_bottomup_recurr ? zero : prev;
      ci = gated_cell(std::initializer_list<ad::Var>{carry, x, mi},
                      b.bottom_up[i]);
      score_mid = ci;
    }
    if (!ci.value().allFinite())
      throw ad::NumericError("bottom_up: non-finite contents at level " +
                             std::to_string(i + 1));
    ad::Var h = ad::tanh(ad::matmul(b.score[i].W1,
                                    ad::concat({x, score_mid, mi}, 0)) +
                         b.score[i].b1);
    ad::Var fi = ad::sigmoid(ad::matmul(b.score[i].W2, h) + b.score[i].b2);
    cols.push_back(ci);
    scores.push_back(fi);
    prev = ci;
  }
  return {ad::concat(cols, 1), ad::concat(scores, 0)};
}

ad::Var Ompn::top_down(ad::Tape& tape, const Bound& b, ad::Var x, ad::Var c,
                       ad::Var pi) const {
  const int n = cfg_.n_slots;
  const int m = cfg_.mem_dim;
  if (cfg_.variant == Variant::no_topdown)
    return tape.constant(Matrix::Zero(m, n));
  ad::Var cum_to = ad::matmul(tape.constant(lower_tri_ones(n)), pi);
  std::vector<ad::Var> cols(n);
  cols[n - 1] = tape.constant(Matrix::Zero(m, 1));
  for (int s = n - 2; s >= 0; --s) {
    ad::Var w = ad::slice(cum_to, 0, s + 1, 1);  // cum pi up to slot s+2 (1-based)
    ad::Var blend = ad::mul(w, ad::slice(c, 1, s + 1, 1)) +
                    ad::mul(ad::rsub_const(1.0, w), cols[s + 1]);
    cols[s] = gated_cell(std::initializer_list<ad::Var>{x, blend},
                         b.top_down[s]);
  }
  return ad::concat(cols, 1);
}

Ompn::StepResult Ompn::step(ad::Tape& tape, const Bound& b, const Vector& obs,
                            const std::optional<Vector>& sketch,
                            ad::Var m_prev, int t) const {
  if (obs.size() != cfg_.obs_dim)
    throw ad::DimensionError("step: observation has size " +
                             std::to_string(obs.size()) + ", expected " +
                             std::to_string(cfg_.obs_dim));
  Vector enc_in;
  if (cfg_.sketch_dim > 0) {
    if (!sketch.has_value() || sketch->size() != cfg_.sketch_dim)
      throw ad::DimensionError("step: sketch missing or has wrong size");
    enc_in.resize(cfg_.encoder_in());
    enc_in << obs, *sketch;
  } else {
    enc_in = obs;
  }
  const int n = cfg_.n_slots;

  ad::Var x;
  ad::Var c, f;
  StickBreak sb;
  try {
    x = ad::matmul(b.enc_W, tape.constant(enc_in)) + b.enc_b;
    if (t == 0) {
      // First step: skip the bottom-up pass and expand from the highest
      // slot. f is pinned to [1,...,1,0] which stick-breaks to exactly
      // that routing, with no ending mass.
      c = m_prev;
      Matrix f0 = Matrix::Ones(n, 1);
      f0(n - 1, 0) = 0.0;
      f = tape.constant(f0);
      Matrix onehot = Matrix::Zero(n, 1);
      onehot(n - 1, 0) = 1.0;
      ad::Var pi = tape.constant(onehot);
      sb = {pi, pi, tape.constant(Matrix::Zero(1, 1))};
    } else {
      auto bu = bottom_up(tape, b, x, m_prev);
      c = bu.c;
      f = bu.f;
      sb = stick_break(f);
    }
    ad::Var m_hat = top_down(tape, b, x, c, sb.pi);
    ad::Var m_next = memory_update(m_prev, c, m_hat, sb.pi);
    ad::Var output = ad::slice(m_next, 1, 0, 1);
    ad::Var logits = ad::matmul(b.act_W, ad::concat({output, x}, 0)) + b.act_b;

    Matrix levels(1, n);
    for (int i = 0; i < n; ++i) levels(0, i) = i + 1;
    ad::Var pi_avg = ad::matmul(tape.constant(levels), sb.pi);
    return {m_next, output, logits, f, sb.pi_hat, sb.pi, sb.pi_end, pi_avg};
  } catch (const ad::NumericError& e) {
    throw ad::NumericError(std::string(e.what()) + " at step t=" +
                           std::to_string(t));
  }
}

ExpansionState Ompn::expansion_state(const StepResult& r) const {
  ExpansionState s;
  s.f = r.f.value().col(0);
  s.pi_hat = r.pi_hat.value().col(0);
  s.pi = r.pi.value().col(0);
  s.pi_end = r.pi_end.scalar();
  s.pi_avg = r.pi_avg.scalar();
  return s;
}

// --- tracing ----------------------------------------------------------------

std::vector<StepTrace> trace_demo(const Ompn& model,
                                  const std::vector<Vector>& observations,
                                  const std::vector<int>& actions,
                                  const std::optional<Vector>& sketch,
                                  const std::optional<Vector>& env_info) {
  if (observations.size() != actions.size())
    throw std::invalid_argument("trace_demo: observation/action count mismatch");
  std::vector<StepTrace> out;
  out.reserve(observations.size());
  Matrix memory;
  {
    ad::Tape tape;
    auto b = model.bind(tape);
    memory = model.initial_memory(tape, b, env_info).value();
  }
  for (std::size_t t = 0; t < observations.size(); ++t) {
    ad::Tape tape;
    auto b = model.bind(tape);
    auto r = model.step(tape, b, observations[t], sketch,
                        tape.constant(memory), static_cast<int>(t));
    memory = r.memory.value();
    ExpansionState es = model.expansion_state(r);
    StepTrace rec;
    rec.t = static_cast<int>(t);
    rec.f.assign(es.f.begin(), es.f.end());
    rec.pi.assign(es.pi.begin(), es.pi.end());
    rec.pi_end = es.pi_end;
    rec.pi_avg = es.pi_avg;
    rec.action = actions[t];
    out.push_back(std::move(rec));
  }
  return out;
}

void write_trace_jsonl(const std::string& path,
                       const std::vector<StepTrace>& trace) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open trace file " + path);
  for (const StepTrace& s : trace) {
    nlohmann::json j;
    j["t"] = s.t;
    j["f"] = s.f;
    j["pi"] = s.pi;
    j["pi_end"] = s.pi_end;
    j["pi_avg"] = s.pi_avg;
    j["action"] = s.action;
    os << j.dump() << "\n";
  }
}

std::vector<StepTrace> read_trace_jsonl(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open trace file " + path);
  std::vector<StepTrace> out;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line);
    StepTrace s;
    s.t = j.at("t").get<int>();
    s.f = j.at("f").get<std::vector<double>>();
    s.pi = j.at("pi").get<std::vector<double>>();
    s.pi_end = j.at("pi_end").get<double>();
    s.pi_avg = j.at("pi_avg").get<double>();
    s.action = j.at("action").get<int>();
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace ompn
