#include <doctest.h>

#include "craft_oracle.hpp"
#include "ompn/craft.hpp"

#include <cstdio>

using namespace ompn;
using namespace ompn::craft;

namespace {

int leg_cost_oracle(const World& w, Obj target) {
  return craft_oracle::leg_cost(w, target);
}

World empty_world(const Task& task) {
  World w;
  w.task = &task;
  w.grid.assign(w.width * w.height, -1);
  return w;
}

}  // namespace

TEST_CASE("world generation is deterministic and stocked") {
  const Task& makebed = task_by_name("makebed");
  World a = generate_world(makebed, 42);
  World b = generate_world(makebed, 42);
  CHECK(a.grid == b.grid);
  CHECK(a.agent_x == b.agent_x);
  CHECK(a.agent_y == b.agent_y);

  auto count = [&](Obj o) {
    int c = 0;
    for (int v : a.grid)
      if (v == static_cast<int>(o)) ++c;
    return c;
  };
  CHECK(count(Obj::wood) >= 1);
  CHECK(count(Obj::grass) >= 1);
  CHECK(count(Obj::toolshed) == 1);
  CHECK(count(Obj::workbench) == 1);
  // agent stands on a free cell
  CHECK(a.cell(a.agent_x, a.agent_y) == -1);
}

TEST_CASE("observation dimensions follow the documented layout") {
  CHECK(observation_dim(Mode::full) == 100 * (kNumObjects + 1) + kNumObjects + 4);
  CHECK(observation_dim(Mode::full) == 710);
  CHECK(observation_dim(Mode::partial) == 25 * (kNumObjects + 1) + kNumObjects + 4);
  CHECK(observation_dim(Mode::partial) == 185);

  const Task& makebed = task_by_name("makebed");
  World w = generate_world(makebed, 7);
  Vector full = observe(w, Mode::full);
  CHECK(full.size() == 710);
  // agent plane has exactly one active cell
  CHECK(full.segment(600, 100).sum() == doctest::Approx(1.0));
  Vector part = observe(w, Mode::partial);
  CHECK(part.size() == 185);
  CHECK(part[kNumObjects * 25 + 12] == 1.0);  // window center
}

TEST_CASE("env_step semantics") {
  const Task& makebed = task_by_name("makebed");
  World w = empty_world(makebed);
  w.agent_x = 5;
  w.agent_y = 5;
  w.facing = static_cast<int>(Action::up);

  SUBCASE("use facing an empty cell is a no-op") {
    World before = w;
    auto out = env_step(w, Action::use);
    CHECK(!out.subtask_completed);
    CHECK(w.grid == before.grid);
    CHECK(w.inventory == before.inventory);
  }
  SUBCASE("use facing wood picks it up and empties the cell") {
    w.cell(5, 6) = static_cast<int>(Obj::wood);
    auto out = env_step(w, Action::use);
    CHECK(w.inventory[static_cast<int>(Obj::wood)] == 1);
    CHECK(w.cell(5, 6) == -1);
    CHECK(out.subtask_completed);  // stage 0 of makebed is get wood
    CHECK(w.stage == 1);
  }
  SUBCASE("blocked moves only set the facing") {
    w.cell(6, 5) = static_cast<int>(Obj::factory);
    env_step(w, Action::right);
    CHECK(w.agent_x == 5);
    CHECK(w.facing == static_cast<int>(Action::right));
    w.agent_x = 0;
    env_step(w, Action::left);
    CHECK(w.agent_x == 0);
    CHECK(w.facing == static_cast<int>(Action::left));
  }
  SUBCASE("stations require the stage ingredient") {
    w.cell(5, 6) = static_cast<int>(Obj::toolshed);
    w.stage = 1;  // make at toolshed, consumes wood
    auto out = env_step(w, Action::use);
    CHECK(!out.subtask_completed);
    w.inventory[static_cast<int>(Obj::wood)] = 1;
    out = env_step(w, Action::use);
    CHECK(out.subtask_completed);
    CHECK(w.inventory[static_cast<int>(Obj::wood)] == 0);
    CHECK(w.stage == 2);
  }
  SUBCASE("fourth completion raises the done flag") {
    w.cell(5, 6) = static_cast<int>(Obj::workbench);
    w.stage = 3;  // make at workbench, consumes grass
    w.inventory[static_cast<int>(Obj::grass)] = 1;
    auto out = env_step(w, Action::use);
    CHECK(out.subtask_completed);
    CHECK(out.task_done);
    CHECK(w.done());
  }
}

TEST_CASE("expert acts use when already facing the target") {
  const Task& makebed = task_by_name("makebed");
  World w = empty_world(makebed);
  w.agent_x = 3;
  w.agent_y = 3;
  w.facing = static_cast<int>(Action::right);
  w.cell(4, 3) = static_cast<int>(Obj::wood);
  Expert expert(Mode::full);
  CHECK(expert.act(w) == Action::use);
}

TEST_CASE("expert walks toward the nearer of two targets") {
  const Task& makebed = task_by_name("makebed");
  World w = empty_world(makebed);
  w.agent_x = 0;
  w.agent_y = 0;
  w.facing = static_cast<int>(Action::up);
  w.cell(0, 2) = static_cast<int>(Obj::wood);  // cost 2: one step + use
  w.cell(0, 7) = static_cast<int>(Obj::wood);  // much farther
  CHECK(leg_cost_oracle(w, Obj::wood) == 2);
  Expert expert(Mode::full);
  CHECK(expert.act(w) == Action::up);
  env_step(w, Action::up);
  CHECK(expert.act(w) == Action::use);
  auto out = env_step(w, Action::use);
  CHECK(out.subtask_completed);
  CHECK(w.cell(0, 2) == -1);
  CHECK(w.cell(0, 7) == static_cast<int>(Obj::wood));
}

TEST_CASE("partial expert sweeps before the target is visible") {
  const Task& makebed = task_by_name("makebed");
  World w = empty_world(makebed);
  w.agent_x = 5;
  w.agent_y = 5;
  w.facing = static_cast<int>(Action::up);
  w.cell(9, 9) = static_cast<int>(Obj::wood);  // outside the 5x5 window
  Expert expert(Mode::partial);
  Action first = expert.act(w);
  // the sweep heads for the bottom-left scan start, not the target
  CHECK((first == Action::down || first == Action::left));
}

TEST_CASE("demos are deterministic, bounded and well-annotated") {
  const Task& makeaxe = task_by_name("makeaxe");
  Demo a = generate_demo(makeaxe, 11, Mode::full);
  Demo b = generate_demo(makeaxe, 11, Mode::full);
  CHECK(a.actions == b.actions);
  CHECK(a.gt_boundaries == b.gt_boundaries);
  REQUIRE(a.observations.size() == a.actions.size());

  // exactly four boundaries partitioning the episode, ending at T-1
  REQUIRE(a.gt_boundaries.size() == 4);
  for (std::size_t i = 1; i < 4; ++i)
    CHECK(a.gt_boundaries[i] > a.gt_boundaries[i - 1]);
  CHECK(a.gt_boundaries.back() ==
        static_cast<int>(a.actions.size()) - 1);

  // the terminal observation reflects the post-use state, not a copy
  CHECK(a.terminal_obs != a.observations.back());
}

TEST_CASE("expert demos replay to completion and match the BFS oracle") {
  for (const Task& task : training_tasks()) {
    for (std::uint64_t seed : {1ull, 2ull, 3ull}) {
      Demo demo = generate_demo(task, seed, Mode::full);
      World w = generate_world(task, demo.seed);
      std::size_t t = 0;
      int leg_start = 0;
      std::size_t boundary_idx = 0;
      int expected_leg = leg_cost_oracle(w, w.current_subtask().target);
      for (; t < demo.actions.size(); ++t) {
        auto out = env_step(w, static_cast<Action>(demo.actions[t]));
        if (out.subtask_completed) {
          REQUIRE(boundary_idx < demo.gt_boundaries.size());
          CHECK(demo.gt_boundaries[boundary_idx] == static_cast<int>(t));
          // leg length equals the oracle cost computed at leg start
          CHECK(static_cast<int>(t) - leg_start + 1 == expected_leg);
          leg_start = static_cast<int>(t) + 1;
          ++boundary_idx;
          if (!w.done())
            expected_leg = leg_cost_oracle(w, w.current_subtask().target);
        }
      }
      CHECK(w.done());  // 100% replay success
      CHECK(boundary_idx == 4);
    }
  }
}

TEST_CASE("partial-mode demos also replay to completion") {
  const Task& makebed = task_by_name("makebed");
  for (std::uint64_t seed : {5ull, 6ull}) {
    Demo demo = generate_demo(makebed, seed, Mode::partial);
    World w = generate_world(makebed, demo.seed);
    for (int a : demo.actions) env_step(w, static_cast<Action>(a));
    CHECK(w.done());
    CHECK(demo.gt_boundaries.size() == 4);
  }
}

TEST_CASE("sketch encoding") {
  const Task& makebed = task_by_name("makebed");
  auto names = sketch_names(makebed);
  REQUIRE(names.size() == 4);
  CHECK(names[0] == "get_wood");
  CHECK(names[1] == "use_toolshed");
  CHECK(names[2] == "get_grass");
  CHECK(names[3] == "use_workbench");
  Vector v = encode_sketch(makebed);
  REQUIRE(v.size() == kSketchDim);
  CHECK(v.sum() == doctest::Approx(4.0));
  CHECK(v[0 * kNumObjects + 0] == 1.0);  // wood
  CHECK(v[1 * kNumObjects + 3] == 1.0);  // toolshed
  CHECK(v[2 * kNumObjects + 1] == 1.0);  // grass
  CHECK(v[3 * kNumObjects + 4] == 1.0);  // workbench
}

TEST_CASE("dataset jsonl round-trip") {
  std::vector<Demo> demos;
  demos.push_back(generate_demo(task_by_name("makebed"), 21, Mode::full));
  demos.push_back(generate_demo(task_by_name("makeshears"), 22, Mode::full));
  std::string path = "dataset_test.jsonl";
  save_dataset_jsonl(path, demos);
  auto loaded = load_dataset_jsonl(path);
  REQUIRE(loaded.size() == 2);
  CHECK(loaded[0].task == demos[0].task);
  CHECK(loaded[0].actions == demos[0].actions);
  CHECK(loaded[0].gt_boundaries == demos[0].gt_boundaries);
  CHECK(loaded[0].observations.size() == demos[0].observations.size());
  CHECK(loaded[0].observations[0] == demos[0].observations[0]);
  CHECK(loaded[1].terminal_obs == demos[1].terminal_obs);
  std::remove(path.c_str());
}

TEST_CASE("trajectory conversion attaches boundaries and sketch") {
  Demo demo = generate_demo(task_by_name("makeaxe"), 31, Mode::full);
  Trajectory plain = to_trajectory(demo, false);
  plain.validate(kAugmentedActions);
  CHECK(plain.length() == static_cast<int>(demo.actions.size()) + 1);
  CHECK(plain.actions.back() == kDoneAction);
  CHECK(!plain.sketch.has_value());
  Trajectory sketched = to_trajectory(demo, true);
  REQUIRE(sketched.sketch.has_value());
  CHECK(sketched.sketch->size() == kSketchDim);
}
