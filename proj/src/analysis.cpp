#include "optistack/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "optistack/errors.hpp"

namespace optistack::analysis {

void WelfordStats::update(double x) {
  ++count_;
  const double delta = x - mean_;
  mean_ += delta / static_cast<double>(count_);
  m2_ += delta * (x - mean_);
}

double WelfordStats::variance() const { return count_ < 2 ? 0.0 : m2_ / static_cast<double>(count_ - 1); }

double WelfordStats::stddev() const { return std::sqrt(variance()); }

bool is_discretely_convex(std::span<const MaterialQ> values, double MaterialQ::*key) {
  if (values.size() < 3) return true;
  std::vector<MaterialQ> sorted(values.begin(), values.end());
  std::stable_sort(sorted.begin(), sorted.end(),
                   [key](const MaterialQ& a, const MaterialQ& b) { return a.*key < b.*key; });
  for (std::size_t i = 1; i + 1 < sorted.size(); ++i) {
    const double second = sorted[i + 1].q - 2.0 * sorted[i].q + sorted[i - 1].q;
    if (second < -kConvexityTolerance) return false;
  }
  return true;
}

ConvexityResult convexity_ratios(std::span<const StepQ> steps) {
  ConvexityResult r;
  r.steps = steps.size();
  if (steps.empty()) return r;
  std::size_t n_ok = 0, p_ok = 0, both_ok = 0;
  for (const auto& step : steps) {
    if (step.size() < 3) r.trivially_convex = true;
    const bool by_n = is_discretely_convex(step, &MaterialQ::index);
    const bool by_p = is_discretely_convex(step, &MaterialQ::path_nm);
    n_ok += by_n;
    p_ok += by_p;
    both_ok += by_n && by_p;
  }
  const auto total = static_cast<double>(steps.size());
  r.ratio_n = static_cast<double>(n_ok) / total;
  r.ratio_p = static_cast<double>(p_ok) / total;
  r.ratio_both = static_cast<double>(both_ok) / total;
  return r;
}

StepQ material_q_record(const agent::NetworkBundle& bundle, const objective::TaskSpec& task,
                        const optics::MaterialCatalog& catalog, std::span<const double> q,
                        std::span<const double> proposals_nm) {
  StepQ out;
  out.reserve(static_cast<std::size_t>(bundle.material_count));
  for (int k = 0; k < bundle.material_count; ++k) {
    const auto kk = static_cast<std::size_t>(k);
    const double n = catalog.reference_index(task.material_ids[kk]);
    out.push_back({q[kk], n, n * proposals_nm[kk]});
  }
  return out;
}

std::optional<LossStats> replay_loss_stats(const agent::NetworkBundle& bundle, const agent::Memory& memory,
                                           const agent::Hyperparameters& hyper) {
  if (memory.empty()) return std::nullopt;
  std::vector<const agent::Transition*> all;
  all.reserve(memory.size());
  for (const auto& t : memory.items()) all.push_back(&t);
  WelfordStats w;
  // Chunked so that the multi-pass target batch stays cache friendly.
  constexpr std::size_t kChunk = 512;
  for (std::size_t start = 0; start < all.size(); start += kChunk) {
    const auto len = std::min(kChunk, all.size() - start);
    for (double e : agent::squared_td_errors(bundle, std::span(all).subspan(start, len), hyper)) w.update(e);
  }
  return LossStats{w.mean(), w.stddev(), memory.size()};
}

Rollout greedy_rollout(const agent::NetworkBundle& bundle, const objective::TaskSpec& task,
                       const optics::MaterialCatalog& catalog, const objective::RewardParams& reward, double gamma,
                       std::optional<Substitution> substitution) {
  if (substitution && (substitution->layer < 0 || substitution->layer >= task.layer_budget)) {
    throw InvalidInputError("what-if layer index out of range");
  }
  env::DesignEnvironment environment(task, catalog, reward, gamma);
  Rollout out;
  agent::Rng unused(0);
  int i = 0;
  while (!environment.terminal()) {
    const auto state = environment.state().encode();
    int blocked = -1;
    if (task.forbid_repeat_materials) {
      if (auto prev = environment.previous_material()) blocked = static_cast<int>(task.material_slot(*prev));
    }
    auto choice = agent::select_action(bundle, state, 0.0, unused, blocked);
    env::Action action = agent::to_env_action(task, choice.slot, choice.thickness_nm);
    if (substitution && substitution->layer == i) action = substitution->action;
    out.q.push_back(std::move(choice.q));
    out.proposals.push_back(std::move(choice.proposals));
    environment.step(action);
    ++i;
  }
  if (substitution && substitution->layer >= i) {
    throw InvalidInputError("the greedy design terminates before layer " + std::to_string(substitution->layer + 1));
  }
  out.evaluation = environment.finish();
  out.trace = environment.trace();
  out.stack = environment.stack();
  return out;
}

WhatIfRecord what_if(const agent::NetworkBundle& bundle, const objective::TaskSpec& task,
                     const optics::MaterialCatalog& catalog, const objective::RewardParams& reward, double gamma,
                     int layer, const env::Action& alternative) {
  const auto rollout = greedy_rollout(bundle, task, catalog, reward, gamma, Substitution{layer, alternative});
  const auto li = static_cast<std::size_t>(layer);
  const auto state = rollout.trace.steps[li].state.encode();

  WhatIfRecord rec;
  rec.layer = layer;
  rec.action = alternative;
  rec.q_estimate = agent::q_value_of(bundle, state, agent::to_slot(task, alternative), alternative.thickness_nm);
  if (!alternative.is_terminate()) {
    rec.index = catalog.reference_index(alternative.material_id);
    rec.optical_path_nm = rec.index * alternative.thickness_nm;
  }
  rec.realized_return = rollout.trace.returns[li];
  return rec;
}

std::vector<WhatIfRecord> what_if_table(const agent::NetworkBundle& bundle, const objective::TaskSpec& task,
                                        const optics::MaterialCatalog& catalog,
                                        const objective::RewardParams& reward, double gamma, bool include_terminate) {
  const auto base = greedy_rollout(bundle, task, catalog, reward, gamma);
  std::vector<WhatIfRecord> out;
  for (std::size_t i = 0; i < base.trace.steps.size(); ++i) {
    for (std::size_t k = 0; k < task.material_count(); ++k) {
      const auto action = env::Action::place(task.material_ids[k], base.proposals[i][k]);
      out.push_back(what_if(bundle, task, catalog, reward, gamma, static_cast<int>(i), action));
    }
    if (include_terminate) {
      out.push_back(what_if(bundle, task, catalog, reward, gamma, static_cast<int>(i), env::Action::terminate()));
    }
  }
  return out;
}

std::string what_if_csv(std::span<const WhatIfRecord> records) {
  std::string out = "material,re_n,layer,q_hat,p_nm,return\n";
  char buf[256];
  for (const auto& r : records) {
    const std::string mat = r.action.is_terminate() ? "TERMINATE" : std::to_string(r.action.material_id);
    std::snprintf(buf, sizeof buf, "%s,%.4f,%d,%.6f,%.3f,%.6f\n", mat.c_str(), r.index, r.layer + 1, r.q_estimate,
                  r.optical_path_nm, r.realized_return);
    out += buf;
  }
  return out;
}

}  // namespace optistack::analysis
