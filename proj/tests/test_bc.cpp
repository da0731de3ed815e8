#include <doctest.h>

#include "ompn/bc.hpp"

#include <cmath>
#include <random>

using namespace ompn;
using ad::Matrix;

namespace {

OmpnConfig tiny_config(int n = 3, int m = 8, Variant v = Variant::full) {
  OmpnConfig cfg;
  cfg.n_slots = n;
  cfg.mem_dim = m;
  cfg.obs_dim = 5;
  cfg.act_dim = 4;
  cfg.variant = v;
  return cfg;
}

Vector random_vector(std::mt19937_64& rng, int dim, double scale = 1.0) {
  std::uniform_real_distribution<double> dist(-scale, scale);
  Vector v(dim);
  for (int i = 0; i < dim; ++i) v(i) = dist(rng);
  return v;
}

// Random demonstration with raw length `raw_len` plus the done step.
Trajectory random_trajectory(std::mt19937_64& rng, const OmpnConfig& cfg,
                             int raw_len) {
  std::vector<Vector> obs;
  std::vector<int> acts;
  std::uniform_int_distribution<int> action(0, cfg.act_dim - 2);
  for (int t = 0; t < raw_len; ++t) {
    obs.push_back(random_vector(rng, cfg.obs_dim));
    acts.push_back(action(rng));
  }
  Vector terminal = random_vector(rng, cfg.obs_dim);
  return augment(std::move(obs), std::move(acts), {}, terminal,
                 cfg.act_dim - 1);
}

}  // namespace

TEST_CASE("augment appends exactly one done step") {
  std::mt19937_64 rng(5);
  auto cfg = tiny_config();
  SUBCASE("length T in, length T+1 out, ending in done") {
    auto traj = random_trajectory(rng, cfg, 7);
    CHECK(traj.length() == 8);
    CHECK(traj.actions.back() == cfg.act_dim - 1);
    CHECK(traj.terminal_obs_fallback == false);
    traj.validate(cfg.act_dim);
  }
  SUBCASE("single-step demo becomes two steps") {
    std::vector<Vector> obs{random_vector(rng, cfg.obs_dim)};
    std::vector<int> acts{0};
    auto traj = augment(std::move(obs), std::move(acts), {0},
                        random_vector(rng, cfg.obs_dim), cfg.act_dim - 1);
    CHECK(traj.length() == 2);
    CHECK(traj.actions[1] == cfg.act_dim - 1);
    traj.validate(cfg.act_dim);
  }
  SUBCASE("missing terminal observation repeats the last one and flags it") {
    std::vector<Vector> obs{random_vector(rng, cfg.obs_dim),
                            random_vector(rng, cfg.obs_dim)};
    Vector last = obs.back();
    std::vector<int> acts{0, 1};
    auto traj = augment(std::move(obs), std::move(acts), {}, std::nullopt,
                        cfg.act_dim - 1);
    CHECK(traj.terminal_obs_fallback == true);
    CHECK(traj.observations.back() == last);
  }
  SUBCASE("empty input is rejected") {
    CHECK_THROWS_AS(augment({}, {}, {}, std::nullopt, 3),
                    std::invalid_argument);
  }
}

TEST_CASE("trajectory validation catches misplaced done") {
  auto cfg = tiny_config();
  std::mt19937_64 rng(6);
  auto traj = random_trajectory(rng, cfg, 4);
  traj.actions[1] = cfg.act_dim - 1;  // a second done mid-trajectory
  CHECK_THROWS_AS(traj.validate(cfg.act_dim), std::invalid_argument);
}

TEST_CASE("step loss hand values") {
  const int act_dim = 6;  // 5 real actions + done
  ad::Tape tape;
  auto logits = tape.constant(Matrix::Zero(act_dim, 1));  // uniform over A
  auto pi_end = tape.constant(Matrix::Constant(1, 1, 0.5));
  long sat = 0;

  SUBCASE("non-final real action: ln 5 + ln 2") {
    auto l = step_loss(Variant::full, logits, pi_end, 2, act_dim, false, &sat);
    CHECK(l.scalar() ==
          doctest::Approx(std::log(5.0) + std::log(2.0)).epsilon(1e-12));
  }
  SUBCASE("done action: -log pi_end") {
    auto l = step_loss(Variant::full, logits, pi_end, act_dim - 1, act_dim,
                       false, &sat);
    CHECK(l.scalar() == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  }
  SUBCASE("first step skips the pi_end factor") {
    auto l = step_loss(Variant::full, logits, pi_end, 2, act_dim, true, &sat);
    CHECK(l.scalar() == doctest::Approx(std::log(5.0)).epsilon(1e-12));
  }
  SUBCASE("perfect fit drives the loss to zero") {
    Matrix sharp = Matrix::Constant(act_dim, 1, -50.0);
    sharp(2, 0) = 50.0;
    auto sl = tape.constant(sharp);
    auto tiny = tape.constant(Matrix::Constant(1, 1, 0.0));
    auto l = step_loss(Variant::full, sl, tiny, 2, act_dim, false, &sat);
    CHECK(l.scalar() == doctest::Approx(0.0).epsilon(1e-6));
    auto nearly_one = tape.constant(Matrix::Constant(1, 1, 1.0 - 1e-9));
    auto ld = step_loss(Variant::full, sl, nearly_one, act_dim - 1, act_dim,
                        false, &sat);
    CHECK(ld.scalar() < 1e-6);
  }
}

TEST_CASE("no_done ignores pi_end entirely") {
  const int act_dim = 6;
  ad::Tape tape;
  auto logits = tape.leaf(Matrix::Zero(act_dim, 1));
  auto low = tape.leaf(Matrix::Constant(1, 1, 0.1));
  auto high = tape.leaf(Matrix::Constant(1, 1, 0.9));
  long sat = 0;
  auto a = step_loss(Variant::no_done, logits, low, 2, act_dim, false, &sat);
  auto b = step_loss(Variant::no_done, logits, high, 2, act_dim, false, &sat);
  CHECK(a.scalar() == b.scalar());
  // done is an ordinary softmax class
  auto d = step_loss(Variant::no_done, logits, low, act_dim - 1, act_dim,
                     false, &sat);
  CHECK(d.scalar() == doctest::Approx(std::log(6.0)).epsilon(1e-12));
  // and no gradient reaches pi_end
  tape.backward(a);
  CHECK(low.grad()(0, 0) == 0.0);
}

TEST_CASE("augmented action distribution is properly normalized") {
  std::mt19937_64 rng(9);
  for (Variant variant : {Variant::full, Variant::no_done}) {
    auto cfg = tiny_config(3, 8, variant);
    Ompn model(cfg, 31);
    auto traj = random_trajectory(rng, cfg, 5);
    Matrix memory = Matrix::Zero(cfg.mem_dim, cfg.n_slots);
    for (int t = 0; t < traj.length(); ++t) {
      ad::Tape tape;
      auto b = model.bind(tape);
      auto r = model.step(tape, b, traj.observations[t], std::nullopt,
                          tape.constant(memory), t);
      memory = r.memory.value();
      Eigen::VectorXd logits = r.logits.value().col(0);
      double pi_end = r.pi_end.scalar();
      if (variant == Variant::full) {
        Eigen::VectorXd real = logits.head(cfg.act_dim - 1);
        Eigen::VectorXd p = (real.array() - real.maxCoeff()).exp();
        p /= p.sum();
        double total = (p * (1.0 - pi_end)).sum() + pi_end;
        CHECK(std::abs(total - 1.0) <= 1e-10);
      } else {
        Eigen::VectorXd p = (logits.array() - logits.maxCoeff()).exp();
        p /= p.sum();
        CHECK(std::abs(p.sum() - 1.0) <= 1e-10);
      }
    }
  }
}

TEST_CASE("full BC loss gradient matches central differences") {
  auto cfg = tiny_config(3, 8);
  Ompn model(cfg, 77);
  std::mt19937_64 rng(78);
  auto traj = random_trajectory(rng, cfg, 6);  // T=6 plus the done step

  auto loss = [&]() { return bc_loss(model, traj).value; };
  auto analytic = [&]() {
    return windowed_gradients(model, traj, traj.length() + 1).grads;
  };
  auto ptrs = model.param_ptrs();
  double err = ad::grad_check(ptrs, loss, analytic, 1e-5);
  CHECK(err <= 1e-5);
}

TEST_CASE("om cell BC loss gradient matches central differences") {
  auto cfg = tiny_config(2, 6);
  cfg.cell = CellKind::om;
  Ompn model(cfg, 88);
  std::mt19937_64 rng(89);
  auto traj = random_trajectory(rng, cfg, 4);
  auto loss = [&]() { return bc_loss(model, traj).value; };
  auto analytic = [&]() {
    return windowed_gradients(model, traj, traj.length() + 1).grads;
  };
  auto ptrs = model.param_ptrs();
  CHECK(ad::grad_check(ptrs, loss, analytic, 1e-5) <= 1e-5);
}

TEST_CASE("windowed loss equals full loss and large windows match gradients") {
  auto cfg = tiny_config(2, 6);
  Ompn model(cfg, 13);
  std::mt19937_64 rng(14);
  auto traj = random_trajectory(rng, cfg, 9);  // 10 steps with done

  auto full = windowed_gradients(model, traj, traj.length());
  auto huge = windowed_gradients(model, traj, 64);
  auto small = windowed_gradients(model, traj, 4);

  // bptt >= T+1 is full backprop regardless of the configured cap
  CHECK(full.loss == huge.loss);
  REQUIRE(full.grads.size() == huge.grads.size());
  for (std::size_t i = 0; i < full.grads.size(); ++i)
    CHECK(full.grads[i] == huge.grads[i]);

  // window losses add up to the exact trajectory mean
  CHECK(std::abs(small.loss - full.loss) <= 1e-12);

  // truncation changes at least some gradients
  bool any_diff = false;
  for (std::size_t i = 0; i < full.grads.size(); ++i)
    if (full.grads[i] != small.grads[i]) any_diff = true;
  CHECK(any_diff);
}

TEST_CASE("gradient clipping") {
  SUBCASE("norm above the cap is scaled onto it") {
    std::vector<Matrix> grads{Matrix::Constant(2, 2, 0.5)};  // norm 1.0
    double pre = clip_grads(grads, 0.2);
    CHECK(pre == doctest::Approx(1.0));
    double post = std::sqrt(grads[0].squaredNorm());
    CHECK(post == doctest::Approx(0.2).epsilon(1e-12));
  }
  SUBCASE("norm below the cap is untouched") {
    Matrix g = Matrix::Constant(2, 2, 0.05);  // norm 0.1
    std::vector<Matrix> grads{g};
    clip_grads(grads, 0.2);
    CHECK(grads[0] == g);
  }
  SUBCASE("clipped norm never exceeds the cap") {
    std::mt19937_64 rng(15);
    std::uniform_real_distribution<double> dist(-3.0, 3.0);
    for (int trial = 0; trial < 200; ++trial) {
      std::vector<Matrix> grads;
      for (int p = 0; p < 3; ++p) {
        Matrix g(2, 3);
        for (Eigen::Index i = 0; i < g.size(); ++i) g(i) = dist(rng);
        grads.push_back(g);
      }
      clip_grads(grads, 0.2);
      double sq = 0.0;
      for (const Matrix& g : grads) sq += g.squaredNorm();
      CHECK(std::sqrt(sq) <= 0.2 + 1e-12);
    }
  }
}

TEST_CASE("adam step algebra") {
  SUBCASE("first step is approximately -lr * sign(g)") {
    Matrix theta = Matrix::Zero(2, 1);
    Matrix g(2, 1);
    g << 0.3, -1.7;
    AdamState state;
    adam_step({&theta}, {g}, state, 0.01, 0.9, 0.999, 1e-8);
    for (int i = 0; i < 2; ++i) {
      double want = -0.01 * g(i) / (std::abs(g(i)) + 1e-8);
      CHECK(theta(i) == doctest::Approx(want).epsilon(1e-9));
    }
  }
  SUBCASE("zero gradient leaves parameters and moments untouched") {
    Matrix theta = Matrix::Constant(2, 1, 1.5);
    AdamState state;
    adam_step({&theta}, {Matrix::Zero(2, 1)}, state, 0.01, 0.9, 0.999, 1e-8);
    CHECK(theta == Matrix::Constant(2, 1, 1.5));
    CHECK(state.m[0] == Matrix::Zero(2, 1));
    CHECK(state.v[0] == Matrix::Zero(2, 1));
  }
  SUBCASE("two identical steps move further than one") {
    Matrix g = Matrix::Constant(1, 1, 0.4);
    Matrix one = Matrix::Zero(1, 1);
    AdamState s1;
    adam_step({&one}, {g}, s1, 0.01, 0.9, 0.999, 1e-8);
    Matrix two = Matrix::Zero(1, 1);
    AdamState s2;
    adam_step({&two}, {g}, s2, 0.01, 0.9, 0.999, 1e-8);
    adam_step({&two}, {g}, s2, 0.01, 0.9, 0.999, 1e-8);
    CHECK(std::abs(two(0, 0)) > std::abs(one(0, 0)));
  }
}

TEST_CASE("training on a toy set strictly decreases the loss") {
  auto cfg = tiny_config(2, 8);
  Ompn model(cfg, 21);
  std::mt19937_64 rng(22);
  std::vector<Trajectory> dataset;
  for (int i = 0; i < 3; ++i) dataset.push_back(random_trajectory(rng, cfg, 6));

  TrainConfig tc;
  tc.epochs = 5;
  tc.seed = 23;
  auto stats = train(model, dataset, tc);
  REQUIRE(stats.size() == 5);
  for (std::size_t i = 1; i < stats.size(); ++i)
    CHECK(stats[i].mean_loss < stats[i - 1].mean_loss);
}

TEST_CASE("no_done variant trains") {
  auto cfg = tiny_config(2, 6, Variant::no_done);
  Ompn model(cfg, 25);
  std::mt19937_64 rng(26);
  std::vector<Trajectory> dataset{random_trajectory(rng, cfg, 5)};
  TrainConfig tc;
  tc.epochs = 2;
  auto stats = train(model, dataset, tc);
  CHECK(stats.size() == 2);
  CHECK(std::isfinite(stats.back().mean_loss));
}
