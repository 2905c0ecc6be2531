#include "optistack/trainer.hpp"

#include <algorithm>

#include "optistack/errors.hpp"

namespace optistack::agent {

void offer_design(std::vector<DesignRecord>& top, const DesignRecord& candidate, int k) {
  for (auto& d : top) {
    if (d.stack.layers == candidate.stack.layers) return;
  }
  if (static_cast<int>(top.size()) >= k && candidate.reward <= top.back().reward) return;
  auto pos = std::find_if(top.begin(), top.end(), [&](const DesignRecord& d) { return candidate.reward > d.reward; });
  top.insert(pos, candidate);
  if (static_cast<int>(top.size()) > k) top.pop_back();
}

namespace {

EpisodeMetrics run_episode(long e, env::DesignEnvironment& environment, NetworkBundle& bundle, Memory& memory,
                           Rng& rng, const Hyperparameters& hyper, analysis::WelfordStats (&ratio_stats)[3],
                           RunResult& result, const TrainingCallbacks& callbacks) {
  const auto& task = environment.task();
  const auto& catalog = environment.catalog();

  EpisodeMetrics m;
  m.episode = e;
  m.epsilon = epsilon_schedule(e, task.layer_budget, hyper.epsilon_decay, hyper.epsilon_final);

  environment.reset();
  std::vector<analysis::StepQ> step_q;
  std::vector<int> slots;
  std::vector<double> thicknesses;
  std::vector<int> blocked_next;
  while (!environment.terminal()) {
    const auto state = environment.state().encode();
    int blocked = -1;
    if (task.forbid_repeat_materials) {
      if (auto prev = environment.previous_material()) blocked = static_cast<int>(task.material_slot(*prev));
    }
    const auto choice = select_action(bundle, state, m.epsilon, rng, blocked);
    step_q.push_back(analysis::material_q_record(bundle, task, catalog, choice.q, choice.proposals));
    environment.step(to_env_action(task, choice.slot, choice.thickness_nm));
    slots.push_back(choice.slot);
    thicknesses.push_back(choice.thickness_nm);
    blocked_next.push_back(task.forbid_repeat_materials && choice.slot < bundle.material_count ? choice.slot : -1);
  }

  const auto& eval = environment.finish();
  const auto& trace = environment.trace();
  for (std::size_t i = 0; i < trace.steps.size(); ++i) {
    Transition t;
    t.state = trace.steps[i].state.encode();
    t.slot = slots[i];
    t.thickness_nm = thicknesses[i];
    t.reward = trace.returns[i];
    t.next_state = trace.steps[i].next_state.encode();
    t.terminal = trace.steps[i].terminal;
    t.next_blocked_slot = blocked_next[i];
    memory.push(std::move(t));
  }

  m.reward = eval.reward;
  m.unconstrained_reward = eval.unconstrained_reward;
  m.objective = eval.objective;
  m.layers = static_cast<int>(environment.stack().layers.size());
  m.total_thickness_nm = environment.stack().total_thickness();

  DesignRecord rec{e, environment.stack(), eval.objective, eval.reward, eval.unconstrained_reward, eval.reflectivity};
  if (result.best.episode < 0 || eval.reward > result.best.reward) {
    result.best = rec;
    result.best_bundle = bundle;
    if (callbacks.on_best) callbacks.on_best(rec, bundle);
  }
  offer_design(result.top_designs, rec, hyper.top_k);

  for (int u = 0; u < hyper.updates_per_episode; ++u) {
    auto indices = memory.sample(static_cast<std::size_t>(hyper.batch_size), rng, hyper.prioritized);
    if (!indices) break;
    const auto stats = train_on_batch(bundle, memory, *indices, hyper);
    m.q_loss = stats.q_loss;
    m.actor_objective = stats.actor_objective;
  }
  if ((e + 1) % hyper.target_update_period == 0) polyak_update(bundle, hyper.tau);

  if (hyper.loss_stats_every > 0 && (e + 1) % hyper.loss_stats_every == 0) {
    if (auto ls = analysis::replay_loss_stats(bundle, memory, hyper)) {
      m.loss_mean = ls->mean;
      m.loss_std = ls->stddev;
    }
  }

  m.convexity = analysis::convexity_ratios(step_q);
  ratio_stats[0].update(m.convexity.ratio_n);
  ratio_stats[1].update(m.convexity.ratio_p);
  ratio_stats[2].update(m.convexity.ratio_both);
  m.ratio_n_mean = ratio_stats[0].mean();
  m.ratio_n_std = ratio_stats[0].stddev();
  m.ratio_p_mean = ratio_stats[1].mean();
  m.ratio_p_std = ratio_stats[1].stddev();
  m.ratio_both_mean = ratio_stats[2].mean();
  m.ratio_both_std = ratio_stats[2].stddev();
  return m;
}

}  // namespace

RunResult run_training(const objective::TaskSpec& task, const optics::MaterialCatalog& catalog,
                       const objective::RewardParams& reward, const Hyperparameters& hyper,
                       const TrainingCallbacks& callbacks) {
  hyper.validate();
  task.validate(catalog);
  if (!(reward.alpha > 0.0)) throw ConfigError("training needs a calibrated alpha > 0");

  env::DesignEnvironment environment(task, catalog, reward, hyper.gamma);
  RunResult result;
  result.final_bundle = NetworkBundle::create(task, hyper);
  result.best_bundle = result.final_bundle;
  auto& bundle = result.final_bundle;
  Memory memory(hyper.replay_capacity, hyper.replay_min_fill);
  Rng rng(hyper.seed);
  analysis::WelfordStats ratio_stats[3];
  double running = 0.0;

  result.metrics.reserve(static_cast<std::size_t>(hyper.episodes));
  for (long e = 0; e < hyper.episodes; ++e) {
    if (callbacks.stop_requested && callbacks.stop_requested()) {
      result.stopped_early = true;
      break;
    }
    EpisodeMetrics m;
    try {
      m = run_episode(e, environment, bundle, memory, rng, hyper, ratio_stats, result, callbacks);
    } catch (const TrainingError& err) {
      throw TrainingError("episode " + std::to_string(e) + ": " + err.what());
    } catch (const std::exception& err) {
      throw std::runtime_error("episode " + std::to_string(e) + ": " + err.what());
    }
    running = e == 0 ? m.reward : 0.95 * running + 0.05 * m.reward;
    m.running_reward = running;
    m.best_reward = result.best.reward;
    m.simulator_calls = environment.simulator_calls();
    result.metrics.push_back(m);
    if (callbacks.on_episode) callbacks.on_episode(m);
    if (callbacks.on_snapshot) callbacks.on_snapshot(bundle, m);
  }
  result.simulator_calls = environment.simulator_calls();
  return result;
}

}  // namespace optistack::agent
