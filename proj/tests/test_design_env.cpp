#include <doctest.h>

#include <functional>

#include "optistack/design_env.hpp"
#include "optistack/errors.hpp"

using namespace optistack;
using env::Action;

namespace {

struct Fixture {
  optics::MaterialCatalog catalog = optics::default_catalog();
  objective::TaskSpec task = objective::builtin_task("task2");
  objective::RewardParams reward = objective::reward_params_from_eta(0.25);
};

// Counts sequences of 1..L layers with no two consecutive equal materials.
long long enumerate_states(int L, int T, int N) {
  long long count = 0;
  std::function<void(int, int)> walk = [&](int depth, int prev) {
    if (depth == L) return;
    for (int m = 0; m < N; ++m) {
      if (m == prev) continue;
      for (int t = 0; t < T; ++t) {
        ++count;
        walk(depth + 1, m);
      }
    }
  };
  walk(0, -1);
  return count;
}

}  // namespace

TEST_CASE_FIXTURE(Fixture, "reset produces the zero state") {
  const auto s = env::reset(task);
  CHECK(s.encode().size() == 16);
  for (double v : s.encode()) CHECK(v == 0.0);
  CHECK(s.cursor == 0);
  CHECK(env::reset(task) == s);
  CHECK(env::reset(objective::builtin_task("task3")).encode().size() == 68);
}

TEST_CASE_FIXTURE(Fixture, "placing layers fills leading slots") {
  auto s = env::reset(task);
  auto r = env::step(s, Action::place(1, 72.85), task, catalog);
  CHECK_FALSE(r.terminal);
  CHECK(r.next.cursor == 1);
  CHECK(r.next.index_vec[0] == 1.457);
  CHECK(r.next.thickness_vec[0] == doctest::Approx(0.485667).epsilon(1e-5));

  s = r.next;
  for (int k = 1; k < 5; ++k) {
    s = env::step(s, Action::place(1 + k % 4, 10.0 * k), task, catalog).next;
    for (int i = 0; i < 8; ++i) {
      const bool filled = i <= k;
      CHECK((s.index_vec[static_cast<std::size_t>(i)] != 0.0) == filled);
      CHECK((s.thickness_vec[static_cast<std::size_t>(i)] != 0.0) == filled);
    }
  }
  // Deterministic transition.
  CHECK(env::step(s, Action::place(2, 33.0), task, catalog).next ==
        env::step(s, Action::place(2, 33.0), task, catalog).next);
}

TEST_CASE_FIXTURE(Fixture, "termination rules") {
  auto s = env::reset(task);
  auto r = env::step(s, Action::terminate(), task, catalog);
  CHECK(r.terminal);
  CHECK(r.next.cursor == 0);

  for (int i = 0; i < 7; ++i) {
    r = env::step(s, Action::place(1, 50.0), task, catalog);
    CHECK_FALSE(r.terminal);
    s = r.next;
  }
  r = env::step(s, Action::place(4, 50.0), task, catalog);
  CHECK(r.terminal);
  CHECK_THROWS_AS(env::step(r.next, Action::place(1, 50.0), task, catalog), UsageError);

  CHECK_THROWS_AS(env::step(env::reset(task), Action::place(1, 0.5), task, catalog), InvalidInputError);
  CHECK_THROWS_AS(env::step(env::reset(task), Action::place(7, 50.0), task, catalog), InvalidInputError);
}

TEST_CASE_FIXTURE(Fixture, "environment lifecycle") {
  env::DesignEnvironment e(task, catalog, reward, 0.95);
  e.step(Action::terminate());
  CHECK(e.terminal());
  CHECK_THROWS_AS(e.step(Action::place(1, 10.0)), UsageError);
  const auto& ev = e.finish();
  CHECK(e.stack().layers.empty());
  // Bare air/air: R = 0 everywhere.
  for (double r : ev.reflectivity) CHECK(r == 0.0);
  CHECK(e.simulator_calls() == 1);
  CHECK(e.trace().returns.size() == 1);
  CHECK(e.trace().returns[0] == ev.reward);

  e.reset();
  CHECK_THROWS_AS(e.finish(), UsageError);
  e.step(Action::place(1, 72.85));
  e.step(Action::place(4, 45.62));
  CHECK(e.previous_material() == 4);
  e.step(Action::terminate());
  e.finish();
  e.finish();
  CHECK(e.simulator_calls() == 2);
  CHECK(e.trace().steps.size() == 3);
  CHECK(e.stack().layers.size() == 2);
}

TEST_CASE("finalize episode backfills discounted returns") {
  env::EpisodeTrace trace;
  trace.steps.resize(3);
  trace.steps[2].terminal = true;
  const auto r = env::finalize_episode(trace, 1.0, 0.95);
  CHECK(r[0] == doctest::Approx(0.9025).epsilon(1e-15));
  CHECK(r[1] == doctest::Approx(0.95).epsilon(1e-15));
  CHECK(r[2] == 1.0);
  CHECK(r[0] <= r[1]);
  CHECK(r[1] <= r[2]);

  const auto zero = env::finalize_episode(trace, 0.7, 0.0);
  CHECK(zero == std::vector<double>{0.0, 0.0, 0.7});

  env::EpisodeTrace single;
  single.steps.resize(1);
  single.steps[0].terminal = true;
  CHECK(env::finalize_episode(single, 0.3, 0.95) == std::vector<double>{0.3});

  env::EpisodeTrace open;
  open.steps.resize(2);
  CHECK_THROWS_AS(env::finalize_episode(open, 1.0, 0.95), UsageError);
  open.steps[0].terminal = true;
  open.steps[1].terminal = true;
  CHECK_THROWS_AS(env::finalize_episode(open, 1.0, 0.95), UsageError);
}

TEST_CASE("state space size") {
  CHECK(env::format_scientific(env::state_space_size(8, 1500, 4)) == "2.24e29");
  CHECK(env::format_scientific(env::state_space_size(34, 1500, 2)) == "1.94e108");
  CHECK(env::state_space_size(1, 10, 3) == 30);
  for (int L = 1; L <= 2; ++L) {
    for (int T = 1; T <= 3; ++T) {
      for (int N = 2; N <= 3; ++N) {
        CHECK(env::state_space_size(L, T, N) == enumerate_states(L, T, N));
      }
    }
  }
  CHECK_THROWS_AS(env::state_space_size(0, 10, 3), InvalidInputError);
  CHECK_THROWS_AS(env::state_space_size(2, 10, 1), InvalidInputError);
}

TEST_CASE("scientific formatting rounds") {
  CHECK(env::format_scientific(env::BigInt(9995)) == "1.00e4");
  CHECK(env::format_scientific(env::BigInt(12345), 2) == "1.2e4");
  CHECK(env::format_scientific(env::BigInt(7)) == "7.00e0");
  CHECK(env::format_scientific(env::BigInt(125), 1) == "1e2");
}
