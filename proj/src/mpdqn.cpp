#include "optistack/mpdqn.hpp"

#include <cmath>
#include <limits>

#include "optistack/errors.hpp"

namespace optistack::agent {

void Hyperparameters::validate() const {
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw ConfigError("gamma must lie in [0, 1]");
  if (!(learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
  if (actor_learning_rate && !(*actor_learning_rate > 0.0)) throw ConfigError("actor learning rate must be positive");
  if (!(actor_preactivation_l2 >= 0.0)) throw ConfigError("actor_preactivation_l2 must be non-negative");
  if (batch_size < 1) throw ConfigError("batch size must be positive");
  if (!(tau >= 0.0 && tau <= 1.0)) throw ConfigError("tau must lie in [0, 1]");
  if (target_update_period < 1) throw ConfigError("target update period must be positive");
  if (!(epsilon_decay > 0.0 && epsilon_decay <= 1.0)) throw ConfigError("epsilon decay must lie in (0, 1]");
  if (epsilon_final && !(*epsilon_final >= 0.0 && *epsilon_final <= 1.0)) {
    throw ConfigError("epsilon_final must lie in [0, 1]");
  }
  if (episodes < 0) throw ConfigError("episode count must be non-negative");
  if (replay_capacity < 1 || replay_min_fill > replay_capacity) throw ConfigError("invalid replay sizes");
  if (updates_per_episode < 0) throw ConfigError("updates per episode must be non-negative");
  if (hidden_units < 1) throw ConfigError("hidden units must be positive");
  if (loss_stats_every < 0) throw ConfigError("loss_stats_every must be non-negative");
  if (top_k < 1) throw ConfigError("top_k must be positive");
}

double epsilon_final_for(int layer_budget) {
  if (layer_budget < 1) throw InvalidInputError("layer budget must be positive");
  return 1.0 - std::pow(0.3, 1.0 / layer_budget);
}

double epsilon_schedule(long episode, int layer_budget, double decay, std::optional<double> epsilon_final) {
  if (episode < 0) throw InvalidInputError("episode index must be non-negative");
  const double floor = epsilon_final.value_or(epsilon_final_for(layer_budget));
  return std::max(floor, std::pow(decay, static_cast<double>(episode)));
}

NetworkBundle NetworkBundle::create(const objective::TaskSpec& task, const Hyperparameters& hyper) {
  NetworkBundle b;
  b.layer_budget = task.layer_budget;
  b.material_count = static_cast<int>(task.material_count());
  b.t_min_nm = task.t_min_nm;
  b.t_max_nm = task.t_max_nm;
  const int s = b.state_size();
  const int n = b.material_count;
  const int h = hyper.hidden_units;
  b.actor = nn::Mlp({s, h, h, n}, nn::OutputHead::Sigmoid, hyper.seed * 4 + 1);
  b.q_net = nn::Mlp({s + n, h, h, n + 1}, nn::OutputHead::Identity, hyper.seed * 4 + 2);
  b.actor_target = b.actor;
  b.q_target = b.q_net;
  b.actor_opt = nn::AdamState::for_network(b.actor, hyper.actor_learning_rate.value_or(hyper.learning_rate));
  b.q_opt = nn::AdamState::for_network(b.q_net, hyper.learning_rate);
  return b;
}

namespace {

Eigen::MatrixXd column(std::span<const double> v) {
  Eigen::MatrixXd m(static_cast<Eigen::Index>(v.size()), 1);
  for (std::size_t i = 0; i < v.size(); ++i) m(static_cast<Eigen::Index>(i), 0) = v[i];
  return m;
}

void check_state(const NetworkBundle& b, std::span<const double> state) {
  if (static_cast<int>(state.size()) != b.state_size()) {
    throw UsageError("state has " + std::to_string(state.size()) + " entries, expected " +
                     std::to_string(b.state_size()));
  }
}

double unit_to_nm(const NetworkBundle& b, double u) { return b.t_min_nm + u * (b.t_max_nm - b.t_min_nm); }

// Columns j * passes + k hold state j with parameter slot k filled from
// params(k, j); pass k == material_count (when present) is all-zero.
Eigen::MatrixXd multipass_input(const NetworkBundle& b, const Eigen::MatrixXd& states, const Eigen::MatrixXd& params,
                                int passes) {
  const Eigen::Index s = b.state_size();
  const Eigen::Index n = b.material_count;
  const Eigen::Index batch = states.cols();
  Eigen::MatrixXd in = Eigen::MatrixXd::Zero(s + n, batch * passes);
  for (Eigen::Index j = 0; j < batch; ++j) {
    for (int k = 0; k < passes; ++k) {
      const Eigen::Index col = j * passes + k;
      in.block(0, col, s, 1) = states.col(j);
      if (k < n) in(s + k, col) = params(k, j);
    }
  }
  return in;
}

// Normalized thickness (t / t_max) for each actor output column.
Eigen::MatrixXd normalized_proposals(const NetworkBundle& b, const Eigen::MatrixXd& unit) {
  return ((b.t_min_nm + unit.array() * (b.t_max_nm - b.t_min_nm)) / b.t_max_nm).matrix();
}

Eigen::MatrixXd stack_states(std::span<const Transition* const> batch, bool next) {
  const auto rows = static_cast<Eigen::Index>((next ? batch[0]->next_state : batch[0]->state).size());
  Eigen::MatrixXd m(rows, static_cast<Eigen::Index>(batch.size()));
  for (std::size_t j = 0; j < batch.size(); ++j) {
    const auto& v = next ? batch[j]->next_state : batch[j]->state;
    for (Eigen::Index r = 0; r < rows; ++r) m(r, static_cast<Eigen::Index>(j)) = v[static_cast<std::size_t>(r)];
  }
  return m;
}

// Q-network input for the taken actions: state plus the one populated slot.
Eigen::MatrixXd taken_action_input(const NetworkBundle& b, std::span<const Transition* const> batch) {
  const Eigen::Index s = b.state_size();
  Eigen::MatrixXd in = Eigen::MatrixXd::Zero(s + b.material_count, static_cast<Eigen::Index>(batch.size()));
  in.topRows(s) = stack_states(batch, false);
  for (std::size_t j = 0; j < batch.size(); ++j) {
    const auto* t = batch[j];
    if (t->slot < b.material_count) in(s + t->slot, static_cast<Eigen::Index>(j)) = t->thickness_nm / b.t_max_nm;
  }
  return in;
}

}  // namespace

std::vector<double> actor_thicknesses(const NetworkBundle& bundle, std::span<const double> state, bool use_target) {
  check_state(bundle, state);
  const auto& net = use_target ? bundle.actor_target : bundle.actor;
  const Eigen::MatrixXd u = net.forward(column(state));
  std::vector<double> out(static_cast<std::size_t>(bundle.material_count));
  for (int k = 0; k < bundle.material_count; ++k) out[static_cast<std::size_t>(k)] = unit_to_nm(bundle, u(k, 0));
  return out;
}

std::vector<double> q_values(const NetworkBundle& bundle, std::span<const double> state,
                             std::span<const double> thicknesses_nm, bool use_target) {
  check_state(bundle, state);
  if (static_cast<int>(thicknesses_nm.size()) != bundle.material_count) {
    throw UsageError("q_values needs one thickness per material");
  }
  const int passes = bundle.material_count + 1;
  Eigen::MatrixXd params(bundle.material_count, 1);
  for (int k = 0; k < bundle.material_count; ++k) {
    params(k, 0) = thicknesses_nm[static_cast<std::size_t>(k)] / bundle.t_max_nm;
  }
  const auto& net = use_target ? bundle.q_target : bundle.q_net;
  const Eigen::MatrixXd out = net.forward(multipass_input(bundle, column(state), params, passes));
  std::vector<double> q(static_cast<std::size_t>(passes));
  for (int k = 0; k < passes; ++k) q[static_cast<std::size_t>(k)] = out(k, k);
  return q;
}

double q_value_of(const NetworkBundle& bundle, std::span<const double> state, int slot, double thickness_nm,
                  bool use_target) {
  check_state(bundle, state);
  if (slot < 0 || slot > bundle.material_count) throw InvalidInputError("action slot out of range");
  Eigen::MatrixXd in = Eigen::MatrixXd::Zero(bundle.state_size() + bundle.material_count, 1);
  in.topRows(bundle.state_size()) = column(state);
  if (slot < bundle.material_count) in(bundle.state_size() + slot, 0) = thickness_nm / bundle.t_max_nm;
  const auto& net = use_target ? bundle.q_target : bundle.q_net;
  return net.forward(in)(slot, 0);
}

int greedy_slot(std::span<const double> q, int blocked_slot) {
  int best = -1;
  for (int k = 0; k < static_cast<int>(q.size()); ++k) {
    if (k == blocked_slot) continue;
    if (best < 0 || q[static_cast<std::size_t>(k)] > q[static_cast<std::size_t>(best)]) best = k;
  }
  return best;
}

Choice select_action(const NetworkBundle& bundle, std::span<const double> state, double epsilon, Rng& rng,
                     int blocked_slot) {
  if (!(epsilon >= 0.0 && epsilon <= 1.0)) throw InvalidInputError("epsilon must lie in [0, 1]");
  Choice c;
  c.proposals = actor_thicknesses(bundle, state);
  c.q = q_values(bundle, state, c.proposals);

  std::uniform_real_distribution<double> coin(0.0, 1.0);
  if (coin(rng) < epsilon) {
    const int options = bundle.material_count + 1 - (blocked_slot >= 0 ? 1 : 0);
    std::uniform_int_distribution<int> pick(0, options - 1);
    int slot = pick(rng);
    if (blocked_slot >= 0 && slot >= blocked_slot) ++slot;
    std::uniform_real_distribution<double> thick(bundle.t_min_nm, bundle.t_max_nm);
    c.slot = slot;
    c.thickness_nm = thick(rng);
    c.explored = true;
    if (slot == bundle.terminate_slot()) c.thickness_nm = 0.0;
    return c;
  }
  c.slot = greedy_slot(c.q, blocked_slot);
  c.thickness_nm = c.slot < bundle.material_count ? c.proposals[static_cast<std::size_t>(c.slot)] : 0.0;
  return c;
}

env::Action to_env_action(const objective::TaskSpec& task, int slot, double thickness_nm) {
  if (slot == static_cast<int>(task.material_count())) return env::Action::terminate();
  if (slot < 0 || slot > static_cast<int>(task.material_count())) throw InvalidInputError("action slot out of range");
  return env::Action::place(task.material_ids[static_cast<std::size_t>(slot)], thickness_nm);
}

int to_slot(const objective::TaskSpec& task, const env::Action& action) {
  if (action.is_terminate()) return static_cast<int>(task.material_count());
  return static_cast<int>(task.material_slot(action.material_id));
}

std::vector<double> td_targets(const NetworkBundle& bundle, std::span<const Transition* const> batch,
                               const Hyperparameters& hyper) {
  std::vector<double> y(batch.size());
  for (std::size_t j = 0; j < batch.size(); ++j) y[j] = batch[j]->reward;
  if (!hyper.bootstrap || batch.empty()) return y;

  const int passes = bundle.material_count + 1;
  const Eigen::MatrixXd next = stack_states(batch, true);
  const Eigen::MatrixXd proposals = normalized_proposals(bundle, bundle.actor_target.forward(next));
  const Eigen::MatrixXd out = bundle.q_target.forward(multipass_input(bundle, next, proposals, passes));
  for (std::size_t j = 0; j < batch.size(); ++j) {
    if (batch[j]->terminal) continue;
    double best = -std::numeric_limits<double>::infinity();
    for (int k = 0; k < passes; ++k) {
      if (k == batch[j]->next_blocked_slot) continue;
      best = std::max(best, out(k, static_cast<Eigen::Index>(j) * passes + k));
    }
    y[j] += hyper.gamma * best;
  }
  return y;
}

std::vector<double> squared_td_errors(const NetworkBundle& bundle, std::span<const Transition* const> batch,
                                      const Hyperparameters& hyper) {
  std::vector<double> out(batch.size());
  if (batch.empty()) return out;
  const auto y = td_targets(bundle, batch, hyper);
  const Eigen::MatrixXd q = bundle.q_net.forward(taken_action_input(bundle, batch));
  for (std::size_t j = 0; j < batch.size(); ++j) {
    const double d = y[j] - q(batch[j]->slot, static_cast<Eigen::Index>(j));
    out[j] = d * d;
  }
  return out;
}

BatchStats train_on_batch(NetworkBundle& bundle, Memory& memory, std::span<const std::size_t> indices,
                          const Hyperparameters& hyper) {
  if (indices.empty()) throw UsageError("train_on_batch needs a non-empty batch");
  std::vector<const Transition*> batch;
  batch.reserve(indices.size());
  for (auto i : indices) batch.push_back(&memory[i]);
  const auto b = static_cast<Eigen::Index>(batch.size());
  BatchStats stats;

  // Q-network step.
  const auto y = td_targets(bundle, batch, hyper);
  nn::ForwardCache q_cache;
  const Eigen::MatrixXd q = bundle.q_net.forward(taken_action_input(bundle, batch), &q_cache);
  Eigen::MatrixXd q_grad = Eigen::MatrixXd::Zero(q.rows(), b);
  for (Eigen::Index j = 0; j < b; ++j) {
    const int slot = batch[static_cast<std::size_t>(j)]->slot;
    const double err = y[static_cast<std::size_t>(j)] - q(slot, j);
    stats.q_loss += err * err;
    q_grad(slot, j) = -2.0 * err;
  }
  if (!std::isfinite(stats.q_loss)) throw TrainingError("non-finite Q loss");
  nn::optimize_step(bundle.q_net, bundle.q_net.backward(q_cache, q_grad), bundle.q_opt);

  // Actor step: ascend sum_k Q_k(s, g(s)) through the frozen Q-network.
  const int n = bundle.material_count;
  const Eigen::MatrixXd states = stack_states(batch, false);
  nn::ForwardCache actor_cache;
  const Eigen::MatrixXd unit = bundle.actor.forward(states, &actor_cache);
  nn::ForwardCache pass_cache;
  const Eigen::MatrixXd pass_out =
      bundle.q_net.forward(multipass_input(bundle, states, normalized_proposals(bundle, unit), n), &pass_cache);
  Eigen::MatrixXd pass_grad = Eigen::MatrixXd::Zero(pass_out.rows(), pass_out.cols());
  for (Eigen::Index j = 0; j < b; ++j) {
    for (int k = 0; k < n; ++k) {
      stats.actor_objective += pass_out(k, j * n + k);
      pass_grad(k, j * n + k) = -1.0;
    }
  }
  const auto through_q = bundle.q_net.backward(pass_cache, pass_grad);
  const double dnorm_du = (bundle.t_max_nm - bundle.t_min_nm) / bundle.t_max_nm;
  Eigen::MatrixXd actor_grad(n, b);
  for (Eigen::Index j = 0; j < b; ++j) {
    for (int k = 0; k < n; ++k) actor_grad(k, j) = through_q.input(bundle.state_size() + k, j * n + k) * dnorm_du;
  }
  if (hyper.actor_preactivation_l2 > 0.0) {
    const Eigen::MatrixXd z_grad = hyper.actor_preactivation_l2 * actor_cache.pre.back();
    nn::optimize_step(bundle.actor, bundle.actor.backward(actor_cache, actor_grad, &z_grad), bundle.actor_opt);
  } else {
    nn::optimize_step(bundle.actor, bundle.actor.backward(actor_cache, actor_grad), bundle.actor_opt);
  }

  // Priority refresh, measured after the Q-network step.
  const Eigen::MatrixXd q_after = bundle.q_net.forward(taken_action_input(bundle, batch));
  for (Eigen::Index j = 0; j < b; ++j) {
    const std::size_t idx = indices[static_cast<std::size_t>(j)];
    const double err = y[static_cast<std::size_t>(j)] - q_after(memory[idx].slot, j);
    memory[idx].last_loss = err * err;
  }
  return stats;
}

void polyak_update(NetworkBundle& bundle, double tau) {
  nn::polyak_update(bundle.actor_target, bundle.actor, tau);
  nn::polyak_update(bundle.q_target, bundle.q_net, tau);
}

}  // namespace optistack::agent
