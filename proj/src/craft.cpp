#include "ompn/craft.hpp"

#include <json.hpp>

#include <algorithm>
#include <deque>
#include <fstream>
#include <numeric>
#include <random>

namespace ompn::craft {

namespace {

// direction deltas indexed by Action::up/down/left/right; y grows upward
constexpr int kDx[4] = {0, 0, -1, 1};
constexpr int kDy[4] = {1, -1, 0, 0};

constexpr int kEpisodeCap = 600;
constexpr int kGenerationRetries = 20;
constexpr int kUnseen = -2;
constexpr int kEmpty = -1;

const std::vector<Task>& tasks_impl() {
  static const std::vector<Task> tasks = {
      {"makebed",
       {Subtask{Subtask::Kind::get, Obj::wood, Obj::wood},
        Subtask{Subtask::Kind::make_at, Obj::toolshed, Obj::wood},
        Subtask{Subtask::Kind::get, Obj::grass, Obj::grass},
        Subtask{Subtask::Kind::make_at, Obj::workbench, Obj::grass}}},
      {"makeaxe",
       {Subtask{Subtask::Kind::get, Obj::wood, Obj::wood},
        Subtask{Subtask::Kind::make_at, Obj::workbench, Obj::wood},
        Subtask{Subtask::Kind::get, Obj::iron, Obj::iron},
        Subtask{Subtask::Kind::make_at, Obj::toolshed, Obj::iron}}},
      {"makeshears",
       {Subtask{Subtask::Kind::get, Obj::wood, Obj::wood},
        Subtask{Subtask::Kind::make_at, Obj::workbench, Obj::wood},
        Subtask{Subtask::Kind::get, Obj::iron, Obj::iron},
        Subtask{Subtask::Kind::make_at, Obj::workbench, Obj::iron}}}};
  return tasks;
}

struct Plan {
  bool found = false;
  int cost = 0;
  Action first = Action::use;
};

// BFS over (cell, facing) states: a move sets the facing and advances
// only when the destination is traversable, so facing changes are part
// of the metric. `use_leg` plans to face a target cell and adds the use
// action; otherwise the goal is to stand on a cell.
template <typename Traversable, typename GoalState>
Plan plan_bfs(const World& w, Traversable traversable, GoalState goal_state,
              bool use_leg) {
  constexpr int F = 4;
  const int width = w.width;
  const int total = width * w.height * F;
  if (goal_state(w.agent_x, w.agent_y, w.facing))
    return {true, use_leg ? 1 : 0, Action::use};
  std::vector<int> dist(total, -1);
  std::vector<int> first(total, -1);
  std::deque<int> queue;
  const int start = (w.agent_y * width + w.agent_x) * F + w.facing;
  dist[start] = 0;
  queue.push_back(start);
  while (!queue.empty()) {
    const int s = queue.front();
    queue.pop_front();
    const int f = s % F;
    const int cell = s / F;
    const int x = cell % width;
    const int y = cell / width;
    // expand the current heading first so tie-breaks keep paths straight
    for (int j = 0; j < 4; ++j) {
      const int d = j == 0 ? f : (j - 1 >= f ? j : j - 1);
      int nx = x + kDx[d], ny = y + kDy[d];
      if (!traversable(nx, ny)) {
        nx = x;
        ny = y;
      }
      const int ns = (ny * width + nx) * F + d;
      if (dist[ns] != -1) continue;
      dist[ns] = dist[s] + 1;
      first[ns] = first[s] == -1 ? d : first[s];
      if (goal_state(nx, ny, d))
        return {true, dist[ns] + (use_leg ? 1 : 0),
                static_cast<Action>(first[ns])};
      queue.push_back(ns);
    }
  }
  return {};
}

}  // namespace

bool pickable(Obj o) {
  return o == Obj::wood || o == Obj::grass || o == Obj::iron;
}

std::string to_string(Obj o) {
  switch (o) {
    case Obj::wood: return "wood";
    case Obj::grass: return "grass";
    case Obj::iron: return "iron";
    case Obj::toolshed: return "toolshed";
    case Obj::workbench: return "workbench";
    case Obj::factory: return "factory";
  }
  return "wood";
}

Obj obj_from_string(const std::string& s) {
  for (int i = 0; i < kNumObjects; ++i)
    if (to_string(static_cast<Obj>(i)) == s) return static_cast<Obj>(i);
  throw std::invalid_argument("unknown object kind: " + s);
}

std::string to_string(Mode m) { return m == Mode::full ? "full" : "partial"; }

Mode mode_from_string(const std::string& s) {
  if (s == "full") return Mode::full;
  if (s == "partial") return Mode::partial;
  throw std::invalid_argument("unknown observation mode: " + s);
}

std::span<const Task> training_tasks() { return tasks_impl(); }

const Task& task_by_name(const std::string& name) {
  for (const Task& t : tasks_impl())
    if (t.name == name) return t;
  throw std::invalid_argument("unknown task: " + name);
}

World generate_world(const Task& task, std::uint64_t seed) {
  World w;
  w.task = &task;
  w.seed = seed;
  w.grid.assign(w.width * w.height, kEmpty);
  std::mt19937_64 rng(seed);
  // one of each kind plus the agent, spread out so every subtask is a
  // real navigation leg; the separation relaxes if a draw gets stuck
  const Obj placement[] = {Obj::wood,      Obj::grass,   Obj::iron,
                           Obj::toolshed,  Obj::workbench, Obj::factory};
  const int n_entities = static_cast<int>(std::size(placement)) + 1;
  std::uniform_int_distribution<int> coord_x(0, w.width - 1);
  std::uniform_int_distribution<int> coord_y(0, w.height - 1);
  for (int min_sep = 3; min_sep >= 0; --min_sep) {
    std::vector<std::pair<int, int>> spots;
    for (int i = 0; i < n_entities; ++i) {
      for (int attempt = 0; attempt < 200; ++attempt) {
        const int x = coord_x(rng);
        const int y = coord_y(rng);
        bool ok = true;
        for (auto [px, py] : spots)
          if (std::abs(px - x) + std::abs(py - y) < min_sep) ok = false;
        if (ok) {
          spots.emplace_back(x, y);
          break;
        }
      }
      if (static_cast<int>(spots.size()) != i + 1) break;  // relax separation
    }
    if (static_cast<int>(spots.size()) < n_entities) continue;
    for (int i = 0; i < n_entities - 1; ++i)
      w.cell(spots[i].first, spots[i].second) = static_cast<int>(placement[i]);
    w.agent_x = spots.back().first;
    w.agent_y = spots.back().second;
    w.facing = static_cast<int>(Action::up);
    return w;
  }
  throw GenerationError("could not place objects for task " + task.name +
                        " from seed " + std::to_string(seed));
}

StepOutcome env_step(World& w, Action a) {
  StepOutcome out;
  if (w.done()) return out;
  const int stage_before = w.stage;
  if (a == Action::use) {
    const int fx = w.agent_x + kDx[w.facing];
    const int fy = w.agent_y + kDy[w.facing];
    if (w.in_bounds(fx, fy) && w.cell(fx, fy) >= 0) {
      const Obj kind = static_cast<Obj>(w.cell(fx, fy));
      const Subtask& st = w.current_subtask();
      if (pickable(kind)) {
        w.inventory[static_cast<int>(kind)] += 1;
        w.cell(fx, fy) = kEmpty;
        if (st.kind == Subtask::Kind::get && st.target == kind) w.stage += 1;
      } else if (st.kind == Subtask::Kind::make_at && st.target == kind &&
                 w.inventory[static_cast<int>(st.ingredient)] > 0) {
        w.inventory[static_cast<int>(st.ingredient)] = 0;
        w.stage += 1;
      }
    }
  } else {
    const int d = static_cast<int>(a);
    w.facing = d;
    const int nx = w.agent_x + kDx[d];
    const int ny = w.agent_y + kDy[d];
    if (!w.blocked(nx, ny)) {
      w.agent_x = nx;
      w.agent_y = ny;
    }
  }
  out.subtask_completed = w.stage != stage_before;
  out.task_done = w.done();
  return out;
}

int observation_dim(Mode mode) {
  const int cells = mode == Mode::full
                        ? kGridSize * kGridSize
                        : (2 * kWindowRadius + 1) * (2 * kWindowRadius + 1);
  return cells * (kNumObjects + 1) + kNumObjects + 4;
}

Vector observe(const World& w, Mode mode) {
  Vector obs = Vector::Zero(observation_dim(mode));
  int cells;
  if (mode == Mode::full) {
    cells = w.width * w.height;
    for (int y = 0; y < w.height; ++y)
      for (int x = 0; x < w.width; ++x) {
        const int c = w.cell(x, y);
        if (c >= 0) obs[c * cells + y * w.width + x] = 1.0;
      }
    obs[kNumObjects * cells + w.agent_y * w.width + w.agent_x] = 1.0;
  } else {
    const int side = 2 * kWindowRadius + 1;
    cells = side * side;
    for (int wy = -kWindowRadius; wy <= kWindowRadius; ++wy)
      for (int wx = -kWindowRadius; wx <= kWindowRadius; ++wx) {
        const int x = w.agent_x + wx;
        const int y = w.agent_y + wy;
        if (!w.in_bounds(x, y)) continue;
        const int c = w.cell(x, y);
        const int i = (wy + kWindowRadius) * side + (wx + kWindowRadius);
        if (c >= 0) obs[c * cells + i] = 1.0;
      }
    obs[kNumObjects * cells + kWindowRadius * side + kWindowRadius] = 1.0;
  }
  const int inv_off = (kNumObjects + 1) * cells;
  for (int i = 0; i < kNumObjects; ++i)
    obs[inv_off + i] = static_cast<double>(w.inventory[i]);
  obs[inv_off + kNumObjects + w.facing] = 1.0;
  return obs;
}

std::vector<std::string> sketch_names(const Task& task) {
  std::vector<std::string> out;
  out.reserve(4);
  for (const Subtask& st : task.subtasks) {
    const std::string prefix = st.kind == Subtask::Kind::get ? "get_" : "use_";
    out.push_back(prefix + to_string(st.target));
  }
  return out;
}

Vector encode_sketch(const Task& task) {
  Vector v = Vector::Zero(kSketchDim);
  for (int i = 0; i < 4; ++i)
    v[i * kNumObjects + static_cast<int>(task.subtasks[i].target)] = 1.0;
  return v;
}

Expert::Expert(Mode mode) : mode_(mode) {}

void Expert::refresh_map(const World& w) {
  if (known_.size() != w.grid.size()) known_.assign(w.grid.size(), kUnseen);
  for (int wy = -kWindowRadius; wy <= kWindowRadius; ++wy)
    for (int wx = -kWindowRadius; wx <= kWindowRadius; ++wx) {
      const int x = w.agent_x + wx;
      const int y = w.agent_y + wy;
      if (w.in_bounds(x, y)) known_[y * w.width + x] = w.cell(x, y);
    }
}

Action Expert::act(const World& w) {
  if (w.done()) throw ExpertError("expert asked to act in a finished episode");
  if (mode_ == Mode::partial) refresh_map(w);
  const int target = static_cast<int>(w.current_subtask().target);

  auto traversable = [&](int x, int y) {
    if (!w.in_bounds(x, y)) return false;
    if (mode_ == Mode::full) return w.cell(x, y) == kEmpty;
    const int k = known_[y * w.width + x];
    return k == kEmpty || k == kUnseen;  // optimistic about unseen cells
  };
  auto target_at = [&](int x, int y) {
    if (!w.in_bounds(x, y)) return false;
    if (mode_ == Mode::full) return w.cell(x, y) == target;
    return known_[y * w.width + x] == target;
  };
  auto faced_target = [&](int x, int y, int f) {
    return target_at(x + kDx[f], y + kDy[f]);
  };

  bool target_known = mode_ == Mode::full;
  if (!target_known)
    for (int k : known_)
      if (k == target) target_known = true;

  if (target_known) {
    Plan plan = plan_bfs(w, traversable, faced_target, true);
    if (plan.found) return plan.first;
    if (mode_ == Mode::full)
      throw ExpertError("target " + to_string(static_cast<Obj>(target)) +
                        " unreachable in world seed " + std::to_string(w.seed));
  }

  // Sweep exploration: head for the first unseen cell, scanning
  // left-to-right within each row, rows from the bottom up.
  for (int i = 0; i < static_cast<int>(known_.size()); ++i) {
    if (known_[i] != kUnseen) continue;
    const int gx = i % w.width;
    const int gy = i / w.width;
    auto reach = [&](int x, int y, int) { return x == gx && y == gy; };
    Plan plan = plan_bfs(w, traversable, reach, false);
    if (plan.found) return plan.first;
  }
  throw ExpertError("map explored without reaching target " +
                    to_string(static_cast<Obj>(target)) + " in world seed " +
                    std::to_string(w.seed));
}

Demo generate_demo(const Task& task, std::uint64_t seed, Mode mode) {
  for (int attempt = 0; attempt < kGenerationRetries; ++attempt) {
    const std::uint64_t world_seed =
        attempt == 0 ? seed : mix_seed(seed, static_cast<std::uint64_t>(attempt));
    World w = generate_world(task, world_seed);
    Expert expert(mode);
    Demo demo;
    demo.task = task.name;
    demo.seed = world_seed;
    demo.mode = mode;
    bool failed = false;
    for (int t = 0; t < kEpisodeCap && !w.done(); ++t) {
      Vector obs = observe(w, mode);
      Action a;
      try {
        a = expert.act(w);
      } catch (const ExpertError&) {
        failed = true;
        break;
      }
      StepOutcome outcome = env_step(w, a);
      demo.observations.push_back(std::move(obs));
      demo.actions.push_back(static_cast<int>(a));
      if (outcome.subtask_completed)
        demo.gt_boundaries.push_back(static_cast<int>(demo.actions.size()) - 1);
    }
    if (failed || !w.done()) continue;
    demo.terminal_obs = observe(w, mode);
    return demo;
  }
  throw GenerationError("could not generate a demo for task " + task.name +
                        " from seed " + std::to_string(seed));
}

std::vector<Demo> generate_dataset(std::span<const Task> tasks,
                                   int episodes_per_task, Mode mode,
                                   std::uint64_t base_seed) {
  if (episodes_per_task < 1)
    throw std::invalid_argument("episodes_per_task must be >= 1");
  std::vector<Demo> demos;
  demos.reserve(tasks.size() * episodes_per_task);
  for (std::size_t ti = 0; ti < tasks.size(); ++ti)
    for (int e = 0; e < episodes_per_task; ++e)
      demos.push_back(generate_demo(
          tasks[ti], mix_seed(base_seed, ti * 100003ull + e), mode));
  return demos;
}

Trajectory to_trajectory(const Demo& demo, bool with_sketch) {
  Trajectory traj = augment(demo.observations, demo.actions,
                            demo.gt_boundaries, demo.terminal_obs, kDoneAction);
  if (with_sketch) traj.sketch = encode_sketch(task_by_name(demo.task));
  return traj;
}

void save_dataset_jsonl(const std::string& path, std::span<const Demo> demos) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open dataset file " + path);
  for (const Demo& d : demos) {
    nlohmann::json j;
    j["schema_version"] = kDatasetSchemaVersion;
    j["task"] = d.task;
    j["sketch"] = sketch_names(task_by_name(d.task));
    j["seed"] = d.seed;
    j["mode"] = to_string(d.mode);
    nlohmann::json obs = nlohmann::json::array();
    for (const Vector& v : d.observations)
      obs.push_back(std::vector<double>(v.begin(), v.end()));
    j["observations"] = std::move(obs);
    j["actions"] = d.actions;
    j["gt_boundaries"] = d.gt_boundaries;
    j["terminal_obs"] =
        std::vector<double>(d.terminal_obs.begin(), d.terminal_obs.end());
    os << j.dump() << "\n";
  }
}

std::vector<Demo> load_dataset_jsonl(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open dataset file " + path);
  std::vector<Demo> demos;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line);
    if (j.at("schema_version").get<int>() != kDatasetSchemaVersion)
      throw std::runtime_error("dataset schema version mismatch in " + path);
    Demo d;
    d.task = j.at("task").get<std::string>();
    d.seed = j.at("seed").get<std::uint64_t>();
    d.mode = mode_from_string(j.at("mode").get<std::string>());
    for (const auto& o : j.at("observations")) {
      auto vals = o.get<std::vector<double>>();
      d.observations.push_back(
          Eigen::Map<const Vector>(vals.data(), vals.size()));
    }
    d.actions = j.at("actions").get<std::vector<int>>();
    d.gt_boundaries = j.at("gt_boundaries").get<std::vector<int>>();
    auto term = j.at("terminal_obs").get<std::vector<double>>();
    d.terminal_obs = Eigen::Map<const Vector>(term.data(), term.size());
    demos.push_back(std::move(d));
  }
  return demos;
}

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a + 0x9e3779b97f4a7c15ull * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

}  // namespace ompn::craft
