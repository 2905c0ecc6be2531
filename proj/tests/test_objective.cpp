#include <doctest.h>

#include <cmath>

#include "optistack/errors.hpp"
#include "optistack/objective.hpp"

using namespace optistack;
using objective::TaskSpec;

TEST_CASE("builtin tasks") {
  const auto cat = optics::default_catalog();
  for (const auto& id : objective::builtin_task_ids()) CHECK_NOTHROW(objective::builtin_task(id).validate(cat));
  const auto t1 = objective::builtin_task("task1");
  CHECK(t1.target.size() == 301);
  CHECK(t1.target.front() == doctest::Approx(0.0).scale(1.0));
  CHECK(t1.target.back() == doctest::Approx(0.8));
  const auto t2 = objective::builtin_task("task2");
  CHECK(t2.target[150] == doctest::Approx(0.5));
  CHECK(t2.target.front() == doctest::Approx(1.0));
  CHECK(t2.target.back() == doctest::Approx(0.0).scale(1.0));
  const auto t3 = objective::builtin_task("task3");
  CHECK(t3.target.size() == 11 * 61);
  CHECK(t3.layer_budget == 34);
  CHECK(t3.material_count() == 2);
  CHECK_THROWS_AS(objective::builtin_task("task9"), InvalidInputError);
}

TEST_CASE("objective value") {
  auto task = objective::builtin_task("task2");
  const std::vector<double> none;
  CHECK(objective::objective_f(task.target, task, none) == 0.0);

  std::vector<double> off = task.target;
  for (double& r : off) r += 0.1;
  CHECK(objective::objective_f(off, task, none) == doctest::Approx(-0.01).epsilon(1e-12));

  task.mu = 0.1;
  const std::vector<double> eight(8, 75.0);
  CHECK(objective::objective_f(task.target, task, eight) == doctest::Approx(-0.05).epsilon(1e-12));
  // Penalty divides by the realized layer count.
  const std::vector<double> three(3, 75.0);
  CHECK(objective::objective_f(task.target, task, three) == doctest::Approx(-0.05).epsilon(1e-12));
  CHECK(objective::objective_f(task.target, task, none) == 0.0);

  const std::vector<double> short_r(10, 0.0);
  CHECK_THROWS_AS(objective::objective_f(short_r, task, none), InvalidInputError);
  const std::vector<double> nine(9, 75.0);
  CHECK_THROWS_AS(objective::objective_f(task.target, task, nine), InvalidInputError);
}

TEST_CASE("objective is invariant to grid permutations when mu = 0") {
  auto task = objective::builtin_task("task1");
  std::vector<double> r(task.target.size());
  for (std::size_t i = 0; i < r.size(); ++i) r[i] = std::fmod(0.37 * static_cast<double>(i), 1.0);
  const double f = objective::objective_f(r, task, std::vector<double>{});
  std::reverse(r.begin(), r.end());
  std::reverse(task.target.begin(), task.target.end());
  CHECK(objective::objective_f(r, task, std::vector<double>{}) == doctest::Approx(f).epsilon(1e-14));
  CHECK(f <= 0.0);
}

TEST_CASE("reward transform") {
  const auto p = objective::reward_params_from_eta(0.25, 0.01, 1.0);
  CHECK(std::abs(p.alpha - 18.42) <= 0.005);
  CHECK(objective::reward(0.0, p) == 1.0);
  CHECK(std::abs(objective::reward(-0.25, p) - 0.01) <= 1e-4);
  // Geometric midpoint of the two bounds.
  CHECK(objective::reward(-0.125, p) == doctest::Approx(0.1).epsilon(1e-9));
  CHECK(objective::reward(-0.125, {18.42}) == doctest::Approx(std::exp(-2.3025)).epsilon(1e-12));

  CHECK(objective::reward_params_from_eta(0.5).alpha == doctest::Approx(9.21).epsilon(1e-3));
  CHECK_THROWS_AS(objective::reward_params_from_eta(0.25, 1.0, 1.0), CalibrationError);
  CHECK_THROWS_AS(objective::reward_params_from_eta(0.0), CalibrationError);

  // Strictly monotone in F.
  double prev = 0.0;
  for (double f = -1.0; f <= 0.0; f += 0.01) {
    const double r = objective::reward(f, p);
    CHECK(r > prev);
    prev = r;
  }
}

TEST_CASE("reward separates near-optimal designs more than the objective") {
  const objective::RewardParams p{18.42};
  const double r1 = objective::reward(-0.001, p);
  const double r2 = objective::reward(-0.01, p);
  CHECK(r1 / r2 == doctest::Approx(std::exp(18.42 * 0.009)));
  CHECK(r1 / r2 > 1.18);
  CHECK(r1 - r2 > 0.01 - 0.001);
}

TEST_CASE("alpha calibration from random designs") {
  const auto cat = optics::default_catalog();
  const auto task = objective::builtin_task("task2");
  const auto a = objective::calibrate_alpha(task, cat, 200, 0.01, 1.0, 3);
  const auto b = objective::calibrate_alpha(task, cat, 200, 0.01, 1.0, 3);
  CHECK(a.alpha == b.alpha);
  CHECK(a.eta > 0.0);
  CHECK(a.alpha == doctest::Approx(std::log(100.0) / a.eta));
  CHECK(objective::calibrate_alpha(task, cat, 200, 0.01, 1.0, 4).eta != a.eta);

  auto perfect = task;
  perfect.grid = optics::SpectralGrid::from_ranges(500, 500, 1, 0, 0, 1);
  perfect.formula.kind = objective::TargetFormula::Kind::Explicit;
  perfect.target = {0.0};
  perfect.t_min_nm = 0.0;
  perfect.t_max_nm = 0.0;
  perfect.material_ids = {1, 2};
  // Zero-thickness layers reflect nothing in air: eta = 0 cannot be calibrated.
  CHECK_THROWS_AS(objective::calibrate_alpha(perfect, cat, 5, 0.01, 1.0, 1), CalibrationError);
  CHECK_THROWS_AS(objective::calibrate_alpha(task, cat, 0, 0.01, 1.0, 1), InvalidInputError);
}

TEST_CASE("task validation") {
  const auto cat = optics::default_catalog();
  auto t = objective::builtin_task("task1");
  t.target.pop_back();
  CHECK_THROWS_AS(t.validate(cat), ConfigError);
  t = objective::builtin_task("task1");
  t.target[0] = 1.5;
  CHECK_THROWS_AS(t.validate(cat), ConfigError);
  t = objective::builtin_task("task1");
  t.material_ids.push_back(9);
  CHECK_THROWS_AS(t.validate(cat), ConfigError);
  t = objective::builtin_task("task1");
  t.layer_budget = 0;
  CHECK_THROWS_AS(t.validate(cat), ConfigError);
  CHECK(objective::builtin_task("task1").material_slot(3) == 2);
  CHECK_THROWS_AS(objective::builtin_task("task3").material_slot(2), InvalidInputError);
}
