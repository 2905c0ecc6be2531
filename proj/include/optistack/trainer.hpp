#pragma once

#include <functional>
#include <optional>
#include <vector>

#include "optistack/analysis.hpp"
#include "optistack/mpdqn.hpp"

namespace optistack::agent {

struct DesignRecord {
  long episode = -1;
  optics::Stack stack;
  double objective = 0.0;
  double reward = 0.0;
  double unconstrained_reward = 0.0;
  std::vector<double> reflectivity;
};

struct EpisodeMetrics {
  long episode = 0;
  double epsilon = 0.0;
  double reward = 0.0;
  double unconstrained_reward = 0.0;
  double objective = 0.0;
  double running_reward = 0.0;  // exponential moving average, weight 0.05
  double best_reward = 0.0;
  int layers = 0;
  double total_thickness_nm = 0.0;
  std::optional<double> q_loss;
  std::optional<double> actor_objective;
  std::optional<double> loss_mean;  // replay-wide, every loss_stats_every episodes
  std::optional<double> loss_std;
  analysis::ConvexityResult convexity;
  double ratio_n_mean = 0.0, ratio_n_std = 0.0;
  double ratio_p_mean = 0.0, ratio_p_std = 0.0;
  double ratio_both_mean = 0.0, ratio_both_std = 0.0;
  long simulator_calls = 0;
};

struct TrainingCallbacks {
  std::function<void(const EpisodeMetrics&)> on_episode;
  // Called after each episode with the current (read-only) parameters.
  std::function<void(const NetworkBundle&, const EpisodeMetrics&)> on_snapshot;
  // Called when an episode improves the best design, with the parameters that
  // produced it (before that episode's update).
  std::function<void(const DesignRecord&, const NetworkBundle&)> on_best;
  std::function<bool()> stop_requested;
};

struct RunResult {
  DesignRecord best;
  std::vector<DesignRecord> top_designs;  // distinct stacks, best first
  std::vector<EpisodeMetrics> metrics;
  long simulator_calls = 0;
  NetworkBundle final_bundle;
  NetworkBundle best_bundle;  // parameters at the episode that found `best`
  bool stopped_early = false;
};

// Per episode: set epsilon, roll out at most L steps, simulate once, backfill
// returns, store transitions, train (once the replay memory is warm) and
// update the targets every target_update_period episodes.
RunResult run_training(const objective::TaskSpec& task, const optics::MaterialCatalog& catalog,
                       const objective::RewardParams& reward, const Hyperparameters& hyper,
                       const TrainingCallbacks& callbacks = {});

// Keeps the k best distinct designs by reward.
void offer_design(std::vector<DesignRecord>& top, const DesignRecord& candidate, int k);

}  // namespace optistack::agent
