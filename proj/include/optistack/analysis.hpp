#pragma once

// Inspection tools for a learned value function: what-if rollouts, discrete
// convexity of Q-values over optical characteristics, running statistics and
// replay-wide loss monitoring.

#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "optistack/design_env.hpp"
#include "optistack/mpdqn.hpp"

namespace optistack::analysis {

class WelfordStats {
 public:
  void update(double x);
  long count() const { return count_; }
  double mean() const { return mean_; }
  double m2() const { return m2_; }
  // Sample variance; 0 with fewer than two observations.
  double variance() const;
  double stddev() const;

 private:
  long count_ = 0;
  double mean_ = 0.0;
  double m2_ = 0.0;
};

inline constexpr double kConvexityTolerance = 1e-9;

struct MaterialQ {
  double q = 0.0;
  double index = 0.0;    // Re(n) at the reference wavelength
  double path_nm = 0.0;  // index * proposed thickness
};

using StepQ = std::vector<MaterialQ>;

// Sorts by `key` (stable) and checks that all second differences of q are
// >= -kConvexityTolerance. Fewer than three points are convex.
bool is_discretely_convex(std::span<const MaterialQ> values, double MaterialQ::*key);

struct ConvexityResult {
  double ratio_n = 0.0;
  double ratio_p = 0.0;
  double ratio_both = 0.0;
  std::size_t steps = 0;
  bool trivially_convex = false;  // some step had fewer than three materials
};

ConvexityResult convexity_ratios(std::span<const StepQ> steps);

// Material Q-values of one state, paired with index and optical path length.
StepQ material_q_record(const agent::NetworkBundle& bundle, const objective::TaskSpec& task,
                        const optics::MaterialCatalog& catalog, std::span<const double> q,
                        std::span<const double> proposals_nm);

struct LossStats {
  double mean = 0.0;
  double stddev = 0.0;  // sample standard deviation
  std::size_t count = 0;
};

// Current squared TD error of every stored transition; no parameters change.
// nullopt when the memory is empty.
std::optional<LossStats> replay_loss_stats(const agent::NetworkBundle& bundle, const agent::Memory& memory,
                                           const agent::Hyperparameters& hyper);

struct Rollout {
  env::EpisodeTrace trace;
  env::Evaluation evaluation;
  optics::Stack stack;
  std::vector<std::vector<double>> q;          // per step, |N| + 1 values
  std::vector<std::vector<double>> proposals;  // per step, actor thicknesses
};

struct Substitution {
  int layer = 0;
  env::Action action;
};

// epsilon = 0 rollout, optionally replacing the action taken at one step.
Rollout greedy_rollout(const agent::NetworkBundle& bundle, const objective::TaskSpec& task,
                       const optics::MaterialCatalog& catalog, const objective::RewardParams& reward, double gamma,
                       std::optional<Substitution> substitution = std::nullopt);

struct WhatIfRecord {
  int layer = 0;  // zero-based step index
  env::Action action;
  double q_estimate = 0.0;
  double index = 0.0;  // 0 for TERMINATE
  double optical_path_nm = 0.0;
  double realized_return = 0.0;
};

// Follows the greedy policy up to `layer`, takes `alternative` there, then acts
// greedily to the end and reports the realized return of that step next to
// Q(s_layer, alternative).
WhatIfRecord what_if(const agent::NetworkBundle& bundle, const objective::TaskSpec& task,
                     const optics::MaterialCatalog& catalog, const objective::RewardParams& reward, double gamma,
                     int layer, const env::Action& alternative);

// Every material (with the actor's thickness for it) at every layer of the
// greedy design, optionally with TERMINATE rows.
std::vector<WhatIfRecord> what_if_table(const agent::NetworkBundle& bundle, const objective::TaskSpec& task,
                                        const optics::MaterialCatalog& catalog,
                                        const objective::RewardParams& reward, double gamma,
                                        bool include_terminate = false);

// Columns: material,re_n,layer,q_hat,p_nm,return (layer is one-based).
std::string what_if_csv(std::span<const WhatIfRecord> records);

}  // namespace optistack::analysis
