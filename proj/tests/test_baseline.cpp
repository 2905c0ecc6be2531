#include <doctest.h>

#include <set>

#include "optistack/baseline_dqn.hpp"
#include "optistack/design_env.hpp"
#include "optistack/errors.hpp"

using namespace optistack;
using namespace optistack::baseline;

namespace {

objective::TaskSpec coarse_task() {
  auto task = objective::builtin_task("task2");
  task.grid = optics::SpectralGrid::from_ranges(400, 700, 20, 0, 0, 1);
  objective::fill_target(task);
  return task;
}

}  // namespace

TEST_CASE("discrete action set") {
  CHECK(action_count(8, 4) == 40);
  CHECK(action_count(34, 2) == 102);

  DiscreteDesign d{{0, 3}, {0, 1500}};
  CHECK(apply_move(d, 1, 4).thickness_index[0] == 0);
  CHECK(apply_move(d, 0, 4).thickness_index[0] == 1);
  CHECK(apply_move(d, 5, 4).thickness_index[1] == 1500);
  CHECK(apply_move(d, 6, 4).thickness_index[1] == 1499);
  CHECK(apply_move(d, 1, 4).thickness_nm(1) == doctest::Approx(150.0));

  std::set<int> materials;
  for (int a = 2; a < 5; ++a) {
    const auto next = apply_move(d, a, 4);
    CHECK(next.material_slot[0] != 0);
    CHECK(next.thickness_index == d.thickness_index);
    materials.insert(next.material_slot[0]);
  }
  CHECK(materials == std::set<int>{1, 2, 3});
  for (int a = 7; a < 10; ++a) CHECK(apply_move(d, a, 4).material_slot[1] != 3);
  CHECK_THROWS_AS(apply_move(d, 10, 4), InvalidInputError);
  CHECK_THROWS_AS(apply_move(d, -1, 4), InvalidInputError);
}

TEST_CASE("encoding and stack conversion") {
  const auto task = objective::builtin_task("task2");
  const auto catalog = optics::default_catalog();
  DiscreteDesign d{{0, 3, 1, 2, 0, 0, 0, 0}, {10, 1500, 0, 5, 5, 5, 5, 5}};
  const auto s = d.encode(task, catalog);
  CHECK(s.size() == 16);
  CHECK(s[1] == 2.327);
  CHECK(s[9] == doctest::Approx(1.0));
  CHECK(s[8] == doctest::Approx(1.0 / 150.0));
  const auto stack = d.to_stack(task);
  CHECK(stack.layers[1].material_id == 4);
  CHECK(stack.layers[0].thickness_nm == doctest::Approx(1.0));
}

TEST_CASE("one simulation per step and reproducible runs") {
  const auto task = coarse_task();
  const auto catalog = optics::default_catalog();
  const auto rp = objective::reward_params_from_eta(0.25);
  BaselineConfig c;
  c.episodes = 6;
  c.steps_per_episode = 25;
  c.hidden_units = 16;
  c.batch_size = 8;
  c.replay_min_fill = 30;
  c.seed = 4;
  const auto a = run_discrete_dqn(task, catalog, rp, c);
  CHECK(a.simulator_calls == 150);
  CHECK(a.episode_best_reward.size() == 6);
  for (std::size_t i = 1; i < 6; ++i) CHECK(a.episode_best_reward[i] >= a.episode_best_reward[i - 1]);
  const auto b = run_discrete_dqn(task, catalog, rp, c);
  CHECK(a.best == b.best);
  CHECK(a.best_reward == b.best_reward);
  CHECK(a.episode_mean_reward == b.episode_mean_reward);
  const auto check = env::evaluate_stack(a.best.to_stack(task), task, catalog, rp);
  CHECK(check.reward == doctest::Approx(a.best_reward).epsilon(1e-12));

  BaselineConfig full;
  CHECK(static_cast<long>(full.episodes) * full.steps_per_episode == 50000);
}
