#pragma once

// Multi-pass deep Q-learning over parameterized actions. The actor proposes
// one thickness per material; the Q-network scores each material in its own
// pass where only that material's thickness slot is populated, plus one pass
// with an all-zero parameter vector for TERMINATE.

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "optistack/design_env.hpp"
#include "optistack/mlp.hpp"
#include "optistack/objective.hpp"
#include "optistack/replay_memory.hpp"

namespace optistack::agent {

struct Hyperparameters {
  double gamma = 0.95;
  double learning_rate = 1e-3;
  std::optional<double> actor_learning_rate;  // default: learning_rate
  double actor_preactivation_l2 = 0.01;  // weight of 0.5 * z^2 on the actor's pre-squash outputs
  int batch_size = 128;
  double tau = 0.01;
  int target_update_period = 10;  // episodes
  double epsilon_decay = 0.997;
  std::optional<double> epsilon_final;  // default: 1 - 0.3^(1/L)
  int episodes = 10000;
  std::uint64_t seed = 0;
  std::size_t replay_capacity = 5000;
  std::size_t replay_min_fill = 500;
  int updates_per_episode = 1;
  bool bootstrap = true;
  bool prioritized = true;
  int hidden_units = 256;
  int loss_stats_every = 10;  // episodes between replay-wide loss scans, 0 = never
  int top_k = 10;

  void validate() const;
};

// Smallest exploration rate: (1 - eps)^L = 0.3.
double epsilon_final_for(int layer_budget);
double epsilon_schedule(long episode, int layer_budget, double decay = 0.997,
                        std::optional<double> epsilon_final = std::nullopt);

struct Transition {
  std::vector<double> state;
  int slot = 0;  // material slot, or material_count for TERMINATE
  double thickness_nm = 0.0;
  double reward = 0.0;  // backfilled l-step return
  std::vector<double> next_state;
  bool terminal = false;
  int next_blocked_slot = -1;  // slot masked at next_state, -1 for none
  double last_loss = 0.0;
};

using Memory = ReplayMemory<Transition>;

struct NetworkBundle {
  int layer_budget = 0;
  int material_count = 0;
  double t_min_nm = 1.0;
  double t_max_nm = 150.0;
  nn::Mlp actor;   // 2L -> |N| thicknesses (unit interval)
  nn::Mlp q_net;   // 2L + |N| -> |N| + 1 Q-values
  nn::Mlp actor_target;
  nn::Mlp q_target;
  nn::AdamState actor_opt;
  nn::AdamState q_opt;

  static NetworkBundle create(const objective::TaskSpec& task, const Hyperparameters& hyper);

  int state_size() const { return 2 * layer_budget; }
  int terminate_slot() const { return material_count; }
};

// Thickness in nm proposed for each material slot; always in [t_min, t_max].
std::vector<double> actor_thicknesses(const NetworkBundle& bundle, std::span<const double> state,
                                      bool use_target = false);

// |N| + 1 values; entry k only sees thickness k.
std::vector<double> q_values(const NetworkBundle& bundle, std::span<const double> state,
                             std::span<const double> thicknesses_nm, bool use_target = false);

// Q of one parameterized action (single pass).
double q_value_of(const NetworkBundle& bundle, std::span<const double> state, int slot, double thickness_nm,
                  bool use_target = false);

struct Choice {
  int slot = 0;
  double thickness_nm = 0.0;
  bool explored = false;
  std::vector<double> q;          // greedy evaluation at the state
  std::vector<double> proposals;  // actor thicknesses at the state
};

// Epsilon-greedy. Exploration picks uniformly among the |N| + 1 options (minus
// a blocked slot) with a uniform thickness. Ties break toward the lowest slot.
Choice select_action(const NetworkBundle& bundle, std::span<const double> state, double epsilon, Rng& rng,
                     int blocked_slot = -1);

// Greedy pick from given Q-values; exposed for tests.
int greedy_slot(std::span<const double> q, int blocked_slot = -1);

env::Action to_env_action(const objective::TaskSpec& task, int slot, double thickness_nm);
int to_slot(const objective::TaskSpec& task, const env::Action& action);

// y = r + gamma * max_a' Q'(s', a') with the bootstrap masked on terminal s'.
std::vector<double> td_targets(const NetworkBundle& bundle, std::span<const Transition* const> batch,
                               const Hyperparameters& hyper);
// (y - Q(s, a))^2 for each transition under the current parameters.
std::vector<double> squared_td_errors(const NetworkBundle& bundle, std::span<const Transition* const> batch,
                                      const Hyperparameters& hyper);

struct BatchStats {
  double q_loss = 0.0;           // sum of squared TD errors before the update
  double actor_objective = 0.0;  // sum over batch and materials of Q before the actor update
};

// One Q-network step on the summed squared TD error, then one actor step
// ascending the summed material Q-values against the updated (frozen)
// Q-network. Afterwards each sampled transition's last_loss holds its squared
// TD error measured with the post-update Q-network; the targets are unchanged
// by either step because they only read the target networks.
BatchStats train_on_batch(NetworkBundle& bundle, Memory& memory, std::span<const std::size_t> indices,
                          const Hyperparameters& hyper);

void polyak_update(NetworkBundle& bundle, double tau);

}  // namespace optistack::agent
