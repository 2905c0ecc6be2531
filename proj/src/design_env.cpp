#include "optistack/design_env.hpp"

#include <cstdio>

#include "optistack/errors.hpp"

namespace optistack::env {

std::vector<double> DesignState::encode() const {
  std::vector<double> out;
  out.reserve(index_vec.size() + thickness_vec.size());
  out.insert(out.end(), index_vec.begin(), index_vec.end());
  out.insert(out.end(), thickness_vec.begin(), thickness_vec.end());
  return out;
}

std::string to_string(const Action& a) {
  if (a.is_terminate()) return "TERMINATE";
  char buf[64];
  std::snprintf(buf, sizeof buf, "PLACE(%d, %.3f nm)", a.material_id, a.thickness_nm);
  return buf;
}

DesignState reset(const objective::TaskSpec& task) {
  DesignState s;
  s.index_vec.assign(static_cast<std::size_t>(task.layer_budget), 0.0);
  s.thickness_vec.assign(static_cast<std::size_t>(task.layer_budget), 0.0);
  s.cursor = 0;
  return s;
}

StepResult step(const DesignState& state, const Action& action, const objective::TaskSpec& task,
                const optics::MaterialCatalog& catalog) {
  if (state.cursor >= task.layer_budget) {
    throw UsageError("step called on a state whose layer budget is exhausted");
  }
  StepResult out{state, false};
  if (action.is_terminate()) {
    out.terminal = true;
    return out;
  }
  task.material_slot(action.material_id);
  if (!(action.thickness_nm >= task.t_min_nm && action.thickness_nm <= task.t_max_nm)) {
    throw InvalidInputError("thickness outside the task range");
  }
  const auto slot = static_cast<std::size_t>(state.cursor);
  out.next.index_vec[slot] = catalog.reference_index(action.material_id);
  out.next.thickness_vec[slot] = action.thickness_nm / task.t_max_nm;
  out.next.cursor = state.cursor + 1;
  out.terminal = out.next.cursor == task.layer_budget;
  return out;
}

bool EpisodeTrace::complete() const {
  if (steps.empty() || !steps.back().terminal) return false;
  for (std::size_t i = 0; i + 1 < steps.size(); ++i) {
    if (steps[i].terminal) return false;
  }
  return true;
}

std::vector<double> finalize_episode(const EpisodeTrace& trace, double final_reward, double gamma) {
  if (!trace.complete()) {
    throw UsageError("finalize_episode needs a trace ending in exactly one terminal transition");
  }
  std::vector<double> returns(trace.steps.size());
  returns.back() = final_reward;
  for (std::size_t i = returns.size() - 1; i > 0; --i) returns[i - 1] = gamma * returns[i];
  return returns;
}

Evaluation evaluate_stack(const optics::Stack& stack, const objective::TaskSpec& task,
                          const optics::MaterialCatalog& catalog, const objective::RewardParams& reward) {
  Evaluation e;
  e.reflectivity = optics::reflectivity_vector(stack, catalog, task.grid);
  e.objective = objective::objective_f(e.reflectivity, task, stack);
  e.reward = objective::reward(e.objective, reward);
  if (task.mu == 0.0) {
    e.unconstrained_reward = e.reward;
  } else {
    auto free_task = task;
    free_task.mu = 0.0;
    e.unconstrained_reward = objective::reward(objective::objective_f(e.reflectivity, free_task, stack), reward);
  }
  return e;
}

DesignEnvironment::DesignEnvironment(objective::TaskSpec task, optics::MaterialCatalog catalog,
                                     objective::RewardParams reward, double gamma)
    : task_(std::move(task)), catalog_(std::move(catalog)), reward_(reward), gamma_(gamma) {
  task_.validate(catalog_);
  reset();
}

const DesignState& DesignEnvironment::reset() {
  state_ = env::reset(task_);
  stack_ = optics::Stack{};
  stack_.substrate_index = task_.substrate_index;
  trace_ = EpisodeTrace{};
  evaluation_ = Evaluation{};
  terminal_ = false;
  finished_ = false;
  return state_;
}

StepResult DesignEnvironment::step(const Action& action) {
  if (terminal_) throw UsageError("step called after the episode terminated");
  auto result = env::step(state_, action, task_, catalog_);
  if (!action.is_terminate()) stack_.layers.push_back({action.material_id, action.thickness_nm});
  trace_.steps.push_back({state_, action, result.next, result.terminal});
  state_ = result.next;
  terminal_ = result.terminal;
  return result;
}

const Evaluation& DesignEnvironment::finish() {
  if (!terminal_) throw UsageError("finish called before the episode terminated");
  if (finished_) return evaluation_;
  evaluation_ = evaluate_stack(stack_, task_, catalog_, reward_);
  ++simulator_calls_;
  trace_.final_reward = evaluation_.reward;
  trace_.returns = finalize_episode(trace_, evaluation_.reward, gamma_);
  finished_ = true;
  return evaluation_;
}

std::optional<int> DesignEnvironment::previous_material() const {
  if (stack_.layers.empty()) return std::nullopt;
  return stack_.layers.back().material_id;
}

BigInt state_space_size(int layer_budget, int thickness_count, int material_count) {
  if (layer_budget < 1 || thickness_count < 1 || material_count < 2) {
    throw InvalidInputError("state_space_size needs L >= 1, |T| >= 1 and |N| >= 2");
  }
  BigInt total = 0;
  BigInt t_pow = 1;
  BigInt n_pow = 1;
  for (int l = 1; l <= layer_budget; ++l) {
    t_pow *= thickness_count;
    total += t_pow * material_count * n_pow;
    n_pow *= material_count - 1;
  }
  return total;
}

std::string format_scientific(const BigInt& value, int digits) {
  if (digits < 1) throw InvalidInputError("need at least one significant digit");
  std::string s = value.str();
  bool negative = false;
  if (!s.empty() && s[0] == '-') {
    negative = true;
    s.erase(0, 1);
  }
  int exponent = static_cast<int>(s.size()) - 1;
  std::string mantissa = s.substr(0, static_cast<std::size_t>(digits));
  while (static_cast<int>(mantissa.size()) < digits) mantissa.push_back('0');
  // Round half up on the first dropped digit.
  if (static_cast<int>(s.size()) > digits && s[static_cast<std::size_t>(digits)] >= '5') {
    int i = digits - 1;
    while (i >= 0) {
      if (mantissa[static_cast<std::size_t>(i)] == '9') {
        mantissa[static_cast<std::size_t>(i)] = '0';
        --i;
      } else {
        ++mantissa[static_cast<std::size_t>(i)];
        break;
      }
    }
    if (i < 0) {
      mantissa.insert(mantissa.begin(), '1');
      mantissa.pop_back();
      ++exponent;
    }
  }
  std::string out = negative ? "-" : "";
  out += mantissa[0];
  if (digits > 1) {
    out += '.';
    out += mantissa.substr(1);
  }
  out += "e" + std::to_string(exponent);
  return out;
}

}  // namespace optistack::env
