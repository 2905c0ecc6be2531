#pragma once

// Episodic layer-stacking environment with parameterized actions: place a
// layer (material, thickness) or terminate the design.

#include <boost/multiprecision/cpp_int.hpp>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "optistack/objective.hpp"
#include "optistack/optics.hpp"

namespace optistack::env {

struct DesignState {
  std::vector<double> index_vec;      // Re(n) at the reference wavelength, 0 for empty slots
  std::vector<double> thickness_vec;  // t / t_max, 0 for empty slots
  int cursor = 0;

  // index_vec followed by thickness_vec (2L entries).
  std::vector<double> encode() const;
  bool operator==(const DesignState&) const = default;
};

struct Action {
  enum class Kind { Place, Terminate };
  Kind kind = Kind::Terminate;
  int material_id = 0;
  double thickness_nm = 0.0;

  static Action place(int material_id, double thickness_nm) { return {Kind::Place, material_id, thickness_nm}; }
  static Action terminate() { return {}; }
  bool is_terminate() const { return kind == Kind::Terminate; }
  bool operator==(const Action&) const = default;
};

std::string to_string(const Action& a);

DesignState reset(const objective::TaskSpec& task);

struct StepResult {
  DesignState next;
  bool terminal = false;
};

// Pure transition. Throws UsageError when the budget is already exhausted and
// InvalidInputError for actions outside the task's action set.
StepResult step(const DesignState& state, const Action& action, const objective::TaskSpec& task,
                const optics::MaterialCatalog& catalog);

struct TraceStep {
  DesignState state;
  Action action;
  DesignState next_state;
  bool terminal = false;
};

struct EpisodeTrace {
  std::vector<TraceStep> steps;
  double final_reward = 0.0;
  std::vector<double> returns;

  bool complete() const;
};

// returns[l-1] = r and returns[i-1] = gamma * returns[i].
std::vector<double> finalize_episode(const EpisodeTrace& trace, double final_reward, double gamma);

struct Evaluation {
  std::vector<double> reflectivity;
  double objective = 0.0;
  double reward = 0.0;
  double unconstrained_reward = 0.0;  // same design scored with mu = 0
};

Evaluation evaluate_stack(const optics::Stack& stack, const objective::TaskSpec& task,
                          const optics::MaterialCatalog& catalog, const objective::RewardParams& reward);

// Owns one episode at a time: the trace, the stack being built, and the count
// of simulator invocations (exactly one per finished episode).
class DesignEnvironment {
 public:
  DesignEnvironment(objective::TaskSpec task, optics::MaterialCatalog catalog, objective::RewardParams reward,
                    double gamma);

  const DesignState& reset();
  StepResult step(const Action& action);

  // Simulates the finished design once and backfills the returns.
  const Evaluation& finish();

  bool terminal() const { return terminal_; }
  const DesignState& state() const { return state_; }
  const optics::Stack& stack() const { return stack_; }
  const EpisodeTrace& trace() const { return trace_; }
  const objective::TaskSpec& task() const { return task_; }
  const optics::MaterialCatalog& catalog() const { return catalog_; }
  const objective::RewardParams& reward_params() const { return reward_; }
  // Material placed last, if any.
  std::optional<int> previous_material() const;
  long simulator_calls() const { return simulator_calls_; }

 private:
  objective::TaskSpec task_;
  optics::MaterialCatalog catalog_;
  objective::RewardParams reward_;
  double gamma_;
  DesignState state_;
  optics::Stack stack_;
  EpisodeTrace trace_;
  Evaluation evaluation_;
  bool terminal_ = false;
  bool finished_ = false;
  long simulator_calls_ = 0;
};

using BigInt = boost::multiprecision::cpp_int;

// sum_{l=1}^{L} T^l * N * (N-1)^(l-1)
BigInt state_space_size(int layer_budget, int thickness_count, int material_count);

// Scientific notation with `digits` significant digits, e.g. "2.24e29".
std::string format_scientific(const BigInt& value, int digits = 3);

}  // namespace optistack::env
