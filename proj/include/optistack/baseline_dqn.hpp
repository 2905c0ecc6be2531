#pragma once

// Discretized Q-learning baseline: a fixed-depth stack whose layers are
// edited one local move per step (thickness +-0.1 nm or a material swap),
// simulated after every move.

#include <cstdint>
#include <optional>
#include <vector>

#include "optistack/mlp.hpp"
#include "optistack/objective.hpp"
#include "optistack/replay_memory.hpp"

namespace optistack::baseline {

inline constexpr double kGridStepNm = 0.1;
inline constexpr int kGridMaxIndex = 1500;  // 0.0 ... 150.0 nm, 1501 points
inline constexpr int kThicknessMoves = 2;

struct DiscreteDesign {
  std::vector<int> material_slot;    // into task.material_ids
  std::vector<int> thickness_index;  // thickness = index * 0.1 nm

  double thickness_nm(std::size_t layer) const { return thickness_index[layer] * kGridStepNm; }
  optics::Stack to_stack(const objective::TaskSpec& task) const;
  std::vector<double> encode(const objective::TaskSpec& task, const optics::MaterialCatalog& catalog) const;
  bool operator==(const DiscreteDesign&) const = default;
};

// L * (2 + |N| - 1) local moves.
int action_count(int layer_budget, int material_count);

// Move a: layer a / (|N| + 1); within a layer 0 is +0.1 nm, 1 is -0.1 nm and
// 2.. select the other materials in slot order. Thicknesses clamp to the grid.
DiscreteDesign apply_move(const DiscreteDesign& design, int action, int material_count);

DiscreteDesign random_design(int layer_budget, int material_count, agent::Rng& rng);

struct BaselineConfig {
  int episodes = 200;
  int steps_per_episode = 250;
  std::uint64_t seed = 0;
  double gamma = 0.95;
  double learning_rate = 1e-3;
  int batch_size = 128;
  double tau = 0.01;
  int target_update_period = 10;
  std::size_t replay_capacity = 5000;
  std::size_t replay_min_fill = 500;
  int hidden_units = 256;
  int train_every = 1;  // steps between gradient updates
  double epsilon_start = 1.0;
  double epsilon_final = 0.05;
  double epsilon_decay = 0.98;  // per episode
};

struct BaselineResult {
  DiscreteDesign initial;
  DiscreteDesign best;
  double best_reward = 0.0;
  double best_objective = 0.0;
  std::vector<double> best_reflectivity;
  std::vector<double> episode_best_reward;  // running best after each episode
  std::vector<double> episode_mean_reward;
  long simulator_calls = 0;
  std::optional<nn::Mlp> network;  // final Q-network
};

BaselineResult run_discrete_dqn(const objective::TaskSpec& task, const optics::MaterialCatalog& catalog,
                                const objective::RewardParams& reward, const BaselineConfig& config);

}  // namespace optistack::baseline
