#pragma once

// Design objective (reflectivity error plus thickness penalty) and its
// exponential reward transform.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "optistack/optics.hpp"

namespace optistack::objective {

// How the target curve of a task was specified; kept so task files can be
// written back in their original form.
struct TargetFormula {
  enum class Kind { Explicit, Linear, TanhEdge, Constant };
  Kind kind = Kind::Explicit;
  double slope = 0.0;      // linear: T = slope * wl + intercept
  double intercept = 0.0;
  double edge_nm = 550.0;  // tanh_edge: T = 0.5 * (1 - tanh((wl - edge) / width))
  double width_nm = 1.0;
  double value = 1.0;      // constant

  double evaluate(double wavelength_nm) const;
};

struct TaskSpec {
  std::string id;
  std::string description;
  optics::SpectralGrid grid;
  std::vector<double> target;  // same ordering as reflectivity_vector
  TargetFormula formula;
  int layer_budget = 1;
  std::vector<int> material_ids;
  double mu = 0.0;
  double t_min_nm = 1.0;
  double t_max_nm = 150.0;
  optics::Complex substrate_index{1.0, 0.0};
  bool forbid_repeat_materials = false;
  std::optional<std::vector<double>> spec_band;

  std::size_t material_count() const { return material_ids.size(); }
  // Position of a material id within material_ids; throws if absent.
  std::size_t material_slot(int material_id) const;
  void validate(const optics::MaterialCatalog& catalog) const;
};

// Fills task.target from task.formula over task.grid.
void fill_target(TaskSpec& task);

// task1 (linear ramp), task2 (tanh edge at 550 nm), task3 (constant 1.0 over
// 445-455 nm and 0-60 degrees, two materials, 34 layers).
TaskSpec builtin_task(const std::string& id);
std::vector<std::string> builtin_task_ids();

// F = -mean |R - T|^2 - (mu / l) * sum(t_l / t_max). Always <= 0.
double objective_f(std::span<const double> reflectivity, const TaskSpec& task,
                   std::span<const double> thicknesses_nm);

double objective_f(std::span<const double> reflectivity, const TaskSpec& task, const optics::Stack& stack);

struct RewardParams {
  double alpha = 18.42;
  double beta_low = 0.01;
  double beta_high = 1.0;
  double eta = 0.25;
};

inline constexpr double kDefaultBetaLow = 0.01;
inline constexpr double kDefaultBetaHigh = 1.0;

double reward(double f, const RewardParams& params);

// alpha = -(1/eta) ln(beta_low / beta_high); throws CalibrationError unless
// the result is a positive finite number.
RewardParams reward_params_from_eta(double eta, double beta_low = kDefaultBetaLow,
                                    double beta_high = kDefaultBetaHigh);

// Estimates eta as the mean of -F over `sample_count` random full-depth
// designs (uniform materials, uniform thicknesses) and derives alpha.
RewardParams calibrate_alpha(const TaskSpec& task, const optics::MaterialCatalog& catalog, int sample_count,
                             double beta_low, double beta_high, std::uint64_t seed);

}  // namespace optistack::objective
