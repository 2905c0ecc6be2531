#include "optistack/objective.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "optistack/errors.hpp"

namespace optistack::objective {

double TargetFormula::evaluate(double wavelength_nm) const {
  switch (kind) {
    case Kind::Linear: {
      const double v = slope * wavelength_nm + intercept;
      // Snap rounding at the ends of [0, 1] (400/375 - 16/15 is -2e-16).
      if (v < 0.0 && v > -1e-12) return 0.0;
      if (v > 1.0 && v < 1.0 + 1e-12) return 1.0;
      return v;
    }
    case Kind::TanhEdge:
      return 0.5 * (1.0 - std::tanh((wavelength_nm - edge_nm) / width_nm));
    case Kind::Constant:
      return value;
    case Kind::Explicit:
      break;
  }
  throw UsageError("explicit targets have no closed form");
}

std::size_t TaskSpec::material_slot(int material_id) const {
  auto it = std::find(material_ids.begin(), material_ids.end(), material_id);
  if (it == material_ids.end()) {
    throw InvalidInputError("material " + std::to_string(material_id) + " is not available in task " + id);
  }
  return static_cast<std::size_t>(it - material_ids.begin());
}

void TaskSpec::validate(const optics::MaterialCatalog& catalog) const {
  grid.validate();
  if (target.size() != grid.size()) {
    throw ConfigError("task " + id + ": target length does not match the spectral grid");
  }
  for (double t : target) {
    if (!(t >= 0.0 && t <= 1.0)) throw ConfigError("task " + id + ": target values must lie in [0, 1]");
  }
  if (spec_band && spec_band->size() != grid.size()) {
    throw ConfigError("task " + id + ": spec band length does not match the spectral grid");
  }
  if (layer_budget < 1) throw ConfigError("task " + id + ": layer budget must be at least 1");
  if (material_ids.empty()) throw ConfigError("task " + id + ": no materials");
  for (std::size_t i = 0; i < material_ids.size(); ++i) {
    if (!catalog.contains(material_ids[i])) {
      throw ConfigError("task " + id + ": material " + std::to_string(material_ids[i]) + " not in catalog");
    }
    for (std::size_t j = 0; j < i; ++j) {
      if (material_ids[i] == material_ids[j]) throw ConfigError("task " + id + ": duplicate material id");
    }
  }
  if (!(mu >= 0.0)) throw ConfigError("task " + id + ": mu must be non-negative");
  if (!(t_min_nm >= 0.0 && t_min_nm < t_max_nm)) {
    throw ConfigError("task " + id + ": thickness range must satisfy 0 <= t_min < t_max");
  }
  if (!(substrate_index.real() > 0.0 && substrate_index.imag() >= 0.0)) {
    throw ConfigError("task " + id + ": invalid substrate index");
  }
}

void fill_target(TaskSpec& task) {
  task.target.clear();
  task.target.reserve(task.grid.size());
  for (std::size_t a = 0; a < task.grid.angles_deg.size(); ++a) {
    for (double wl : task.grid.wavelengths_nm) task.target.push_back(task.formula.evaluate(wl));
  }
}

TaskSpec builtin_task(const std::string& id) {
  TaskSpec t;
  t.id = id;
  if (id == "task1") {
    t.description = "linear ramp T = wl/375 - 16/15 over 400-700 nm at normal incidence";
    t.grid = optics::SpectralGrid::from_ranges(400, 700, 1, 0, 0, 1);
    t.formula.kind = TargetFormula::Kind::Linear;
    t.formula.slope = 1.0 / 375.0;
    t.formula.intercept = -16.0 / 15.0;
    t.layer_budget = 8;
    t.material_ids = {1, 2, 3, 4};
  } else if (id == "task2") {
    t.description = "reflect below 550 nm: T = (1 - tanh(wl - 550)) / 2 over 400-700 nm";
    t.grid = optics::SpectralGrid::from_ranges(400, 700, 1, 0, 0, 1);
    t.formula.kind = TargetFormula::Kind::TanhEdge;
    t.formula.edge_nm = 550.0;
    t.formula.width_nm = 1.0;
    t.layer_budget = 8;
    t.material_ids = {1, 2, 3, 4};
  } else if (id == "task3") {
    t.description = "full reflection over 445-455 nm and 0-60 degrees";
    t.grid = optics::SpectralGrid::from_ranges(445, 455, 1, 0, 60, 1);
    t.formula.kind = TargetFormula::Kind::Constant;
    t.formula.value = 1.0;
    t.layer_budget = 34;
    t.material_ids = {1, 4};
    t.mu = 0.1;
  } else {
    throw InvalidInputError("unknown builtin task '" + id + "'");
  }
  fill_target(t);
  return t;
}

std::vector<std::string> builtin_task_ids() { return {"task1", "task2", "task3"}; }

double objective_f(std::span<const double> reflectivity, const TaskSpec& task,
                   std::span<const double> thicknesses_nm) {
  if (reflectivity.size() != task.target.size()) {
    throw InvalidInputError("reflectivity and target lengths differ");
  }
  if (thicknesses_nm.size() > static_cast<std::size_t>(task.layer_budget)) {
    throw InvalidInputError("more layers than the task's budget");
  }
  double sq = 0.0;
  for (std::size_t i = 0; i < reflectivity.size(); ++i) {
    const double d = reflectivity[i] - task.target[i];
    sq += d * d;
  }
  const double mse = reflectivity.empty() ? 0.0 : sq / static_cast<double>(reflectivity.size());

  double penalty = 0.0;
  if (!thicknesses_nm.empty() && task.mu > 0.0) {
    double sum = 0.0;
    for (double t : thicknesses_nm) sum += t / task.t_max_nm;
    penalty = task.mu * sum / static_cast<double>(thicknesses_nm.size());
  }
  return -mse - penalty;
}

double objective_f(std::span<const double> reflectivity, const TaskSpec& task, const optics::Stack& stack) {
  std::vector<double> t;
  t.reserve(stack.layers.size());
  for (const auto& l : stack.layers) t.push_back(l.thickness_nm);
  return objective_f(reflectivity, task, t);
}

double reward(double f, const RewardParams& params) { return std::exp(params.alpha * f); }

RewardParams reward_params_from_eta(double eta, double beta_low, double beta_high) {
  if (!(eta > 0.0) || !std::isfinite(eta)) {
    throw CalibrationError("reward calibration needs a positive mean objective magnitude");
  }
  if (!(beta_low > 0.0) || !(beta_high > 0.0)) {
    throw CalibrationError("reward bounds must be positive");
  }
  RewardParams p;
  p.eta = eta;
  p.beta_low = beta_low;
  p.beta_high = beta_high;
  p.alpha = -std::log(beta_low / beta_high) / eta;
  if (!(p.alpha > 0.0) || !std::isfinite(p.alpha)) {
    throw CalibrationError("calibrated alpha must be positive; check beta_low < beta_high");
  }
  return p;
}

RewardParams calibrate_alpha(const TaskSpec& task, const optics::MaterialCatalog& catalog, int sample_count,
                             double beta_low, double beta_high, std::uint64_t seed) {
  if (sample_count < 1) throw InvalidInputError("calibration needs at least one sample");
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, task.material_ids.size() - 1);
  std::uniform_real_distribution<double> thick(task.t_min_nm, task.t_max_nm);

  double sum = 0.0;
  for (int n = 0; n < sample_count; ++n) {
    optics::Stack stack;
    stack.substrate_index = task.substrate_index;
    for (int l = 0; l < task.layer_budget; ++l) {
      const int id = task.material_ids[pick(rng)];
      stack.layers.push_back({id, thick(rng)});
    }
    const auto r = optics::reflectivity_vector(stack, catalog, task.grid);
    sum += -objective_f(r, task, stack);
  }
  return reward_params_from_eta(sum / sample_count, beta_low, beta_high);
}

}  // namespace optistack::objective
