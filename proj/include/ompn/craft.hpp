// A small crafting grid world with scripted experts.
//
// 10x10 grid, six object kinds. Moves set the facing direction and
// advance when the destination is free; `use` acts on the faced cell,
// picking up wood/grass/iron or crafting at a station when the recipe
// ingredient is held. Each training task is four subtasks executed in
// sketch order. Demonstrations come from a shortest-path expert (full
// observation) or a sweep-exploring expert with an internal map
// (partial observation).
//
// Observation layout (documented, fixed per mode):
//   cells * (kinds + 1) one-hot planes   object planes then the agent plane,
//                                        cells scanned row-major from y=0
//   kinds                               inventory counts
//   4                                   facing one-hot
// Full mode covers the whole grid (dim 710); partial mode a 5x5
// self-centric window (dim 185), out-of-grid window cells all zero.

#pragma once

#include "ompn/bc.hpp"

#include <array>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace ompn::craft {

enum class Obj : int { wood, grass, iron, toolshed, workbench, factory };
inline constexpr int kNumObjects = 6;

bool pickable(Obj o);
std::string to_string(Obj o);
Obj obj_from_string(const std::string& s);

enum class Action : int { up, down, left, right, use };
inline constexpr int kNumEnvActions = 5;
inline constexpr int kDoneAction = kNumEnvActions;       // index in A'
inline constexpr int kAugmentedActions = kNumEnvActions + 1;

enum class Mode { full, partial };
std::string to_string(Mode m);
Mode mode_from_string(const std::string& s);

inline constexpr int kGridSize = 10;
inline constexpr int kWindowRadius = 2;

struct Subtask {
  enum class Kind { get, make_at } kind;
  Obj target;
  Obj ingredient;  // consumed by make_at; unused for get

  bool operator==(const Subtask&) const = default;
};

struct Task {
  std::string name;
  std::array<Subtask, 4> subtasks;
};

// makebed, makeaxe, makeshears with their four-subtask decompositions.
std::span<const Task> training_tasks();
const Task& task_by_name(const std::string& name);

struct World {
  int width = kGridSize;
  int height = kGridSize;
  std::vector<int> grid;  // -1 empty, otherwise an Obj index
  int agent_x = 0;
  int agent_y = 0;
  int facing = static_cast<int>(Action::up);
  std::array<int, kNumObjects> inventory{};
  const Task* task = nullptr;
  int stage = 0;  // completed subtasks
  std::uint64_t seed = 0;

  bool done() const { return stage >= 4; }
  bool in_bounds(int x, int y) const {
    return x >= 0 && x < width && y >= 0 && y < height;
  }
  int cell(int x, int y) const { return grid[y * width + x]; }
  int& cell(int x, int y) { return grid[y * width + x]; }
  bool blocked(int x, int y) const {
    return !in_bounds(x, y) || cell(x, y) >= 0;
  }
  const Subtask& current_subtask() const { return task->subtasks[stage]; }
};

struct GenerationError : std::runtime_error {
  explicit GenerationError(const std::string& what) : std::runtime_error(what) {}
};

struct ExpertError : std::runtime_error {
  explicit ExpertError(const std::string& what) : std::runtime_error(what) {}
};

// Deterministic in seed. Places two each of wood/grass/iron, one of each
// station, and the agent, all on distinct cells.
World generate_world(const Task& task, std::uint64_t seed);

struct StepOutcome {
  bool subtask_completed = false;
  bool task_done = false;
};

// Invalid moves are no-ops for position but still set the facing.
StepOutcome env_step(World& w, Action a);

int observation_dim(Mode mode);
Vector observe(const World& w, Mode mode);

// Sketch encoding: four positions, each a one-hot over the subtask
// vocabulary {get_wood, get_grass, get_iron, use_toolshed, use_workbench,
// use_factory}.
inline constexpr int kSketchDim = 4 * kNumObjects;
std::vector<std::string> sketch_names(const Task& task);
Vector encode_sketch(const Task& task);

// Scripted demonstrator. Full mode plans shortest action sequences over
// the true grid; partial mode keeps an internal map of seen cells and
// sweeps left-to-right, bottom-to-top until the current target is on the
// map, then plans over known cells.
class Expert {
 public:
  explicit Expert(Mode mode);
  Action act(const World& w);

 private:
  void refresh_map(const World& w);

  Mode mode_;
  std::vector<int> known_;  // -2 unseen, -1 empty, >= 0 object index
};

struct Demo {
  std::string task;
  std::uint64_t seed = 0;
  Mode mode = Mode::full;
  std::vector<Vector> observations;
  std::vector<int> actions;  // env actions; the done step is added later
  std::vector<int> gt_boundaries;
  Vector terminal_obs;
};

// Runs the expert in a fresh world; retries with derived seeds when the
// expert reports an unreachable target. Records the boundary at the step
// completing each subtask and the post-terminal observation.
Demo generate_demo(const Task& task, std::uint64_t seed, Mode mode);

std::vector<Demo> generate_dataset(std::span<const Task> tasks,
                                   int episodes_per_task, Mode mode,
                                   std::uint64_t base_seed);

// Done-augmented trajectory; attaches the encoded sketch when requested.
Trajectory to_trajectory(const Demo& demo, bool with_sketch);

inline constexpr int kDatasetSchemaVersion = 1;
void save_dataset_jsonl(const std::string& path, std::span<const Demo> demos);
std::vector<Demo> load_dataset_jsonl(const std::string& path);

// splitmix64; used to derive per-episode seeds.
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

}  // namespace ompn::craft
