#include "optistack/baseline_dqn.hpp"

#include <algorithm>
#include <cmath>

#include "optistack/errors.hpp"

namespace optistack::baseline {

optics::Stack DiscreteDesign::to_stack(const objective::TaskSpec& task) const {
  optics::Stack s;
  s.substrate_index = task.substrate_index;
  for (std::size_t l = 0; l < material_slot.size(); ++l) {
    s.layers.push_back({task.material_ids[static_cast<std::size_t>(material_slot[l])], thickness_nm(l)});
  }
  return s;
}

std::vector<double> DiscreteDesign::encode(const objective::TaskSpec& task,
                                           const optics::MaterialCatalog& catalog) const {
  const std::size_t n = material_slot.size();
  std::vector<double> out(2 * n);
  for (std::size_t l = 0; l < n; ++l) {
    out[l] = catalog.reference_index(task.material_ids[static_cast<std::size_t>(material_slot[l])]);
    out[n + l] = thickness_nm(l) / (kGridMaxIndex * kGridStepNm);
  }
  return out;
}

int action_count(int layer_budget, int material_count) {
  return layer_budget * (kThicknessMoves + material_count - 1);
}

DiscreteDesign apply_move(const DiscreteDesign& design, int action, int material_count) {
  const int per_layer = kThicknessMoves + material_count - 1;
  const int layers = static_cast<int>(design.material_slot.size());
  if (action < 0 || action >= layers * per_layer) throw InvalidInputError("baseline action out of range");
  DiscreteDesign next = design;
  const auto layer = static_cast<std::size_t>(action / per_layer);
  const int move = action % per_layer;
  if (move == 0) {
    next.thickness_index[layer] = std::min(kGridMaxIndex, design.thickness_index[layer] + 1);
  } else if (move == 1) {
    next.thickness_index[layer] = std::max(0, design.thickness_index[layer] - 1);
  } else {
    int other = move - kThicknessMoves;
    if (other >= design.material_slot[layer]) ++other;
    next.material_slot[layer] = other;
  }
  return next;
}

DiscreteDesign random_design(int layer_budget, int material_count, agent::Rng& rng) {
  std::uniform_int_distribution<int> mat(0, material_count - 1);
  std::uniform_int_distribution<int> thick(0, kGridMaxIndex);
  DiscreteDesign d;
  for (int l = 0; l < layer_budget; ++l) {
    d.material_slot.push_back(mat(rng));
    d.thickness_index.push_back(thick(rng));
  }
  return d;
}

namespace {

struct Step {
  std::vector<double> state;
  int action = 0;
  double reward = 0.0;
  std::vector<double> next_state;
  bool terminal = false;
  double last_loss = 0.0;
};

Eigen::MatrixXd columns(const std::vector<const std::vector<double>*>& vs) {
  const auto rows = static_cast<Eigen::Index>(vs.front()->size());
  Eigen::MatrixXd m(rows, static_cast<Eigen::Index>(vs.size()));
  for (std::size_t j = 0; j < vs.size(); ++j) {
    m.col(static_cast<Eigen::Index>(j)) = Eigen::Map<const Eigen::VectorXd>(vs[j]->data(), rows);
  }
  return m;
}

void train_step(nn::Mlp& net, const nn::Mlp& target, nn::AdamState& opt, const agent::ReplayMemory<Step>& memory,
                std::span<const std::size_t> indices, double gamma) {
  std::vector<const std::vector<double>*> s, s2;
  for (auto i : indices) {
    s.push_back(&memory[i].state);
    s2.push_back(&memory[i].next_state);
  }
  const Eigen::MatrixXd next_q = target.forward(columns(s2));
  nn::ForwardCache cache;
  const Eigen::MatrixXd q = net.forward(columns(s), &cache);
  Eigen::MatrixXd grad = Eigen::MatrixXd::Zero(q.rows(), q.cols());
  for (std::size_t j = 0; j < indices.size(); ++j) {
    const auto& t = memory[indices[j]];
    const auto col = static_cast<Eigen::Index>(j);
    double y = t.reward;
    if (!t.terminal) y += gamma * next_q.col(col).maxCoeff();
    grad(t.action, col) = -2.0 * (y - q(t.action, col));
  }
  nn::optimize_step(net, net.backward(cache, grad), opt);
}

}  // namespace

BaselineResult run_discrete_dqn(const objective::TaskSpec& task, const optics::MaterialCatalog& catalog,
                                const objective::RewardParams& reward, const BaselineConfig& config) {
  task.validate(catalog);
  if (config.episodes < 0 || config.steps_per_episode < 1) throw ConfigError("invalid baseline episode sizes");
  const int n = static_cast<int>(task.material_count());
  const int actions = action_count(task.layer_budget, n);
  agent::Rng rng(config.seed);

  BaselineResult result;
  result.initial = random_design(task.layer_budget, n, rng);

  const int state_size = 2 * task.layer_budget;
  const int h = config.hidden_units;
  nn::Mlp net({state_size, h, h, actions}, nn::OutputHead::Identity, config.seed * 4 + 3);
  nn::Mlp target = net;
  auto opt = nn::AdamState::for_network(net, config.learning_rate);
  agent::ReplayMemory<Step> memory(config.replay_capacity, config.replay_min_fill);
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  std::uniform_int_distribution<int> any_action(0, actions - 1);

  result.best_reward = -1.0;
  long global_step = 0;
  for (int e = 0; e < config.episodes; ++e) {
    const double epsilon =
        std::max(config.epsilon_final, config.epsilon_start * std::pow(config.epsilon_decay, static_cast<double>(e)));
    DiscreteDesign design = result.initial;
    auto state = design.encode(task, catalog);
    double reward_sum = 0.0;
    for (int t = 0; t < config.steps_per_episode; ++t) {
      int action;
      if (coin(rng) < epsilon) {
        action = any_action(rng);
      } else {
        const Eigen::VectorXd q = net.forward_one(Eigen::Map<const Eigen::VectorXd>(state.data(), state_size));
        Eigen::Index arg;
        q.maxCoeff(&arg);
        action = static_cast<int>(arg);
      }
      design = apply_move(design, action, n);
      const auto stack = design.to_stack(task);
      const auto refl = optics::reflectivity_vector(stack, catalog, task.grid);
      ++result.simulator_calls;
      const double f = objective::objective_f(refl, task, stack);
      const double r = objective::reward(f, reward);
      reward_sum += r;
      if (r > result.best_reward) {
        result.best_reward = r;
        result.best_objective = f;
        result.best = design;
        result.best_reflectivity = refl;
      }
      auto next_state = design.encode(task, catalog);
      memory.push(Step{state, action, r, next_state, t + 1 == config.steps_per_episode, 0.0});
      state = std::move(next_state);

      ++global_step;
      if (global_step % config.train_every == 0) {
        if (auto idx = memory.sample(static_cast<std::size_t>(config.batch_size), rng, false)) {
          train_step(net, target, opt, memory, *idx, config.gamma);
        }
      }
    }
    if ((e + 1) % config.target_update_period == 0) nn::polyak_update(target, net, config.tau);
    result.episode_best_reward.push_back(result.best_reward);
    result.episode_mean_reward.push_back(reward_sum / config.steps_per_episode);
  }
  result.network = std::move(net);
  return result;
}

}  // namespace optistack::baseline
