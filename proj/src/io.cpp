#include "optistack/io.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "optistack/errors.hpp"

namespace optistack::io {

namespace fs = std::filesystem;

json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("malformed JSON in " + path.string() + ": " + e.what());
  }
}

void write_text_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out << text;
    if (!out) throw ConfigError("failed to write " + path.string());
  }
  fs::rename(tmp, path);
}

void write_json_file(const fs::path& path, const json& value) { write_text_file(path, value.dump(2) + "\n"); }

namespace {

template <typename T>
T required(const json& j, const char* key, const std::string& what) {
  if (!j.is_object() || !j.contains(key)) throw InvalidInputError(what + ": missing field '" + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw InvalidInputError(what + ": field '" + key + "' has the wrong type");
  }
}

template <typename T>
T optional_field(const json& j, const char* key, T fallback) {
  if (!j.contains(key) || j.at(key).is_null()) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw InvalidInputError(std::string("field '") + key + "' has the wrong type");
  }
}

optics::Complex complex_from_json(const json& j) {
  if (j.is_number()) return {j.get<double>(), 0.0};
  if (j.is_array() && (j.size() == 1 || j.size() == 2)) {
    return {j[0].get<double>(), j.size() == 2 ? j[1].get<double>() : 0.0};
  }
  throw InvalidInputError("refractive index must be a number or [re, im]");
}

json complex_to_json(optics::Complex c) { return json::array({c.real(), c.imag()}); }

// Recovers (start, end, step) when a sampled axis is evenly spaced.
std::optional<std::array<double, 3>> as_range(const std::vector<double>& v) {
  if (v.empty()) return std::nullopt;
  if (v.size() == 1) return std::array<double, 3>{v[0], v[0], 0.0};
  const double step = v[1] - v[0];
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (std::abs(v[0] + static_cast<double>(i) * step - v[i]) > 1e-9 * std::max(1.0, std::abs(v[i]))) {
      return std::nullopt;
    }
  }
  return std::array<double, 3>{v.front(), v.back(), step};
}

}  // namespace

optics::MaterialCatalog catalog_from_json(const json& j) {
  optics::MaterialCatalog c;
  c.reference_wavelength_nm = optional_field(j, "reference_wavelength_nm", 550.0);
  const json& list = j.is_array() ? j : j.value("materials", json::array());
  for (const auto& m : list) {
    const int id = required<int>(m, "id", "material");
    const std::string name = optional_field<std::string>(m, "name", "material " + std::to_string(id));
    if (m.contains("n_const")) {
      c.materials.push_back(optics::Material::constant(id, name, complex_from_json(m.at("n_const"))));
    } else if (m.contains("dispersion")) {
      std::vector<optics::DispersionSample> table;
      for (const auto& row : m.at("dispersion")) {
        if (!row.is_array() || row.size() < 2) throw InvalidInputError("dispersion rows are [wl, re, im]");
        table.push_back({row[0].get<double>(), {row[1].get<double>(), row.size() > 2 ? row[2].get<double>() : 0.0}});
      }
      c.materials.push_back(optics::Material::tabulated(id, name, std::move(table)));
    } else {
      throw InvalidInputError("material " + std::to_string(id) + " needs n_const or dispersion");
    }
  }
  c.validate();
  return c;
}

json catalog_to_json(const optics::MaterialCatalog& catalog) {
  json list = json::array();
  for (const auto& m : catalog.materials) {
    json e{{"id", m.id}, {"name", m.name}};
    if (m.constant_index) {
      e["n_const"] = complex_to_json(*m.constant_index);
    } else {
      json rows = json::array();
      for (const auto& s : m.dispersion) rows.push_back({s.wavelength_nm, s.index.real(), s.index.imag()});
      e["dispersion"] = rows;
    }
    e["reference_index"] = catalog.reference_index(m.id);
    list.push_back(e);
  }
  return {{"reference_wavelength_nm", catalog.reference_wavelength_nm}, {"materials", list}};
}

optics::SpectralGrid grid_from_json(const json& j) {
  optics::SpectralGrid g;
  if (j.contains("wavelengths_nm")) {
    g.wavelengths_nm = j.at("wavelengths_nm").get<std::vector<double>>();
    g.angles_deg = optional_field(j, "angles_deg", std::vector<double>{0.0});
  } else {
    const double ls = required<double>(j, "lambda_start", "grid");
    const double le = optional_field(j, "lambda_end", ls);
    const double lstep = optional_field(j, "lambda_step", 0.0);
    const double ps = optional_field(j, "phi_start", 0.0);
    const double pe = optional_field(j, "phi_end", ps);
    const double pstep = optional_field(j, "phi_step", 0.0);
    g = optics::SpectralGrid::from_ranges(ls, le, lstep, ps, pe, pstep);
  }
  g.validate();
  return g;
}

json grid_to_json(const optics::SpectralGrid& grid) {
  const auto wl = as_range(grid.wavelengths_nm);
  const auto ph = as_range(grid.angles_deg);
  if (wl && ph) {
    return {{"lambda_start", (*wl)[0]}, {"lambda_end", (*wl)[1]}, {"lambda_step", (*wl)[2]},
            {"phi_start", (*ph)[0]},    {"phi_end", (*ph)[1]},    {"phi_step", (*ph)[2]}};
  }
  return {{"wavelengths_nm", grid.wavelengths_nm}, {"angles_deg", grid.angles_deg}};
}

objective::TaskSpec task_from_json(const json& j) {
  if (j.is_string()) return objective::builtin_task(j.get<std::string>());
  objective::TaskSpec t;
  if (j.contains("base")) t = objective::builtin_task(j.at("base").get<std::string>());
  t.id = optional_field(j, "id", t.id.empty() ? std::string("custom") : t.id);
  t.description = optional_field(j, "description", t.description);
  if (j.contains("grid")) t.grid = grid_from_json(j.at("grid"));
  t.layer_budget = optional_field(j, "layer_budget", t.layer_budget);
  t.material_ids = optional_field(j, "material_ids", t.material_ids);
  t.mu = optional_field(j, "mu", t.mu);
  t.t_min_nm = optional_field(j, "t_min_nm", t.t_min_nm);
  t.t_max_nm = optional_field(j, "t_max_nm", t.t_max_nm);
  t.forbid_repeat_materials = optional_field(j, "forbid_repeat_materials", t.forbid_repeat_materials);
  if (j.contains("substrate_index")) t.substrate_index = complex_from_json(j.at("substrate_index"));
  if (j.contains("spec_band") && !j.at("spec_band").is_null()) {
    t.spec_band = j.at("spec_band").get<std::vector<double>>();
  }

  if (j.contains("target")) {
    const auto& target = j.at("target");
    using K = objective::TargetFormula::Kind;
    if (target.is_array()) {
      t.formula = {};
      t.formula.kind = K::Explicit;
      t.target = target.get<std::vector<double>>();
    } else if (target.is_object()) {
      const auto name = required<std::string>(target, "formula", "target");
      objective::TargetFormula f;
      if (name == "linear") {
        f.kind = K::Linear;
        f.slope = required<double>(target, "slope", "linear target");
        f.intercept = required<double>(target, "intercept", "linear target");
      } else if (name == "tanh_edge") {
        f.kind = K::TanhEdge;
        f.edge_nm = optional_field(target, "edge_nm", f.edge_nm);
        f.width_nm = optional_field(target, "width_nm", f.width_nm);
      } else if (name == "constant") {
        f.kind = K::Constant;
        f.value = required<double>(target, "value", "constant target");
      } else {
        throw InvalidInputError("unknown target formula '" + name + "'");
      }
      t.formula = f;
      objective::fill_target(t);
    } else {
      throw InvalidInputError("target must be an array or a formula object");
    }
  } else if (t.formula.kind != objective::TargetFormula::Kind::Explicit) {
    objective::fill_target(t);
  }
  return t;
}

json task_to_json(const objective::TaskSpec& t) {
  json j{{"id", t.id},
         {"description", t.description},
         {"grid", grid_to_json(t.grid)},
         {"layer_budget", t.layer_budget},
         {"material_ids", t.material_ids},
         {"mu", t.mu},
         {"t_min_nm", t.t_min_nm},
         {"t_max_nm", t.t_max_nm},
         {"substrate_index", complex_to_json(t.substrate_index)},
         {"forbid_repeat_materials", t.forbid_repeat_materials}};
  using K = objective::TargetFormula::Kind;
  switch (t.formula.kind) {
    case K::Linear:
      j["target"] = {{"formula", "linear"}, {"slope", t.formula.slope}, {"intercept", t.formula.intercept}};
      break;
    case K::TanhEdge:
      j["target"] = {{"formula", "tanh_edge"}, {"edge_nm", t.formula.edge_nm}, {"width_nm", t.formula.width_nm}};
      break;
    case K::Constant:
      j["target"] = {{"formula", "constant"}, {"value", t.formula.value}};
      break;
    case K::Explicit:
      j["target"] = t.target;
      break;
  }
  j["spec_band"] = t.spec_band ? json(*t.spec_band) : json(nullptr);
  return j;
}

objective::TaskSpec load_task(const std::string& path_or_id) {
  for (const auto& id : objective::builtin_task_ids()) {
    if (id == path_or_id) return objective::builtin_task(id);
  }
  if (!fs::exists(path_or_id)) {
    throw InvalidInputError("unknown task '" + path_or_id + "': not a built-in id or an existing file");
  }
  return task_from_json(read_json_file(path_or_id));
}

optics::Stack stack_from_json(const json& j) {
  optics::Stack s;
  const json* layers = &j;
  if (j.is_object()) {
    if (!j.contains("layers")) throw InvalidInputError("stack: missing field 'layers'");
    layers = &j.at("layers");
    if (j.contains("ambient_index")) s.ambient_index = complex_from_json(j.at("ambient_index"));
    if (j.contains("substrate_index")) s.substrate_index = complex_from_json(j.at("substrate_index"));
  }
  if (!layers->is_array()) throw InvalidInputError("stack layers must be an array");
  for (const auto& l : *layers) {
    if (l.is_array() && l.size() == 2) {
      s.layers.push_back({l[0].get<int>(), l[1].get<double>()});
    } else {
      s.layers.push_back({required<int>(l, "material", "layer"), required<double>(l, "thickness_nm", "layer")});
    }
  }
  return s;
}

json stack_to_json(const optics::Stack& stack) {
  json layers = json::array();
  for (const auto& l : stack.layers) layers.push_back({{"material", l.material_id}, {"thickness_nm", l.thickness_nm}});
  return {{"layers", layers},
          {"ambient_index", complex_to_json(stack.ambient_index)},
          {"substrate_index", complex_to_json(stack.substrate_index)},
          {"total_thickness_nm", stack.total_thickness()}};
}

json dbr_to_json(const optics::DbrSpec& d) {
  return {{"n_low", d.n_low},
          {"n_high", d.n_high},
          {"band_edge_nm", d.band_edge_nm},
          {"center_nm", d.center_nm},
          {"stopband_width_nm", d.stopband_width_nm},
          {"t_low_nm", d.t_low_nm},
          {"t_high_nm", d.t_high_nm},
          {"periods", d.periods},
          {"total_thickness_nm", d.total_thickness()}};
}

json reward_params_to_json(const objective::RewardParams& p) {
  return {{"alpha", p.alpha}, {"beta_low", p.beta_low}, {"beta_high", p.beta_high}, {"eta", p.eta}};
}

objective::RewardParams reward_params_from_json(const json& j) {
  objective::RewardParams p;
  p.alpha = required<double>(j, "alpha", "reward");
  p.beta_low = optional_field(j, "beta_low", p.beta_low);
  p.beta_high = optional_field(j, "beta_high", p.beta_high);
  p.eta = optional_field(j, "eta", p.eta);
  return p;
}

json hyper_to_json(const agent::Hyperparameters& h) {
  return {{"gamma", h.gamma},
          {"learning_rate", h.learning_rate},
          {"batch_size", h.batch_size},
          {"tau", h.tau},
          {"target_update_period", h.target_update_period},
          {"epsilon_decay", h.epsilon_decay},
          {"epsilon_final", h.epsilon_final ? json(*h.epsilon_final) : json(nullptr)},
          {"episodes", h.episodes},
          {"seed", h.seed},
          {"replay_capacity", h.replay_capacity},
          {"replay_min_fill", h.replay_min_fill},
          {"updates_per_episode", h.updates_per_episode},
          {"bootstrap", h.bootstrap},
          {"prioritized", h.prioritized},
          {"hidden_units", h.hidden_units},
          {"loss_stats_every", h.loss_stats_every},
          {"top_k", h.top_k},
          {"actor_learning_rate", h.actor_learning_rate ? json(*h.actor_learning_rate) : json(nullptr)},
          {"actor_preactivation_l2", h.actor_preactivation_l2}};
}

agent::Hyperparameters hyper_from_json(const json& j) {
  agent::Hyperparameters h;
  h.gamma = optional_field(j, "gamma", h.gamma);
  h.learning_rate = optional_field(j, "learning_rate", h.learning_rate);
  h.batch_size = optional_field(j, "batch_size", h.batch_size);
  h.tau = optional_field(j, "tau", h.tau);
  h.target_update_period = optional_field(j, "target_update_period", h.target_update_period);
  h.epsilon_decay = optional_field(j, "epsilon_decay", h.epsilon_decay);
  if (j.contains("epsilon_final") && !j.at("epsilon_final").is_null()) h.epsilon_final = j.at("epsilon_final").get<double>();
  h.episodes = optional_field(j, "episodes", h.episodes);
  h.seed = optional_field(j, "seed", h.seed);
  h.replay_capacity = optional_field(j, "replay_capacity", h.replay_capacity);
  h.replay_min_fill = optional_field(j, "replay_min_fill", h.replay_min_fill);
  h.updates_per_episode = optional_field(j, "updates_per_episode", h.updates_per_episode);
  h.bootstrap = optional_field(j, "bootstrap", h.bootstrap);
  h.prioritized = optional_field(j, "prioritized", h.prioritized);
  h.hidden_units = optional_field(j, "hidden_units", h.hidden_units);
  h.loss_stats_every = optional_field(j, "loss_stats_every", h.loss_stats_every);
  h.top_k = optional_field(j, "top_k", h.top_k);
  if (j.contains("actor_learning_rate") && !j.at("actor_learning_rate").is_null()) {
    h.actor_learning_rate = j.at("actor_learning_rate").get<double>();
  }
  h.actor_preactivation_l2 = optional_field(j, "actor_preactivation_l2", h.actor_preactivation_l2);
  h.validate();
  return h;
}

json baseline_config_to_json(const baseline::BaselineConfig& c) {
  return {{"episodes", c.episodes},
          {"steps_per_episode", c.steps_per_episode},
          {"seed", c.seed},
          {"gamma", c.gamma},
          {"learning_rate", c.learning_rate},
          {"batch_size", c.batch_size},
          {"tau", c.tau},
          {"target_update_period", c.target_update_period},
          {"replay_capacity", c.replay_capacity},
          {"replay_min_fill", c.replay_min_fill},
          {"hidden_units", c.hidden_units},
          {"train_every", c.train_every},
          {"epsilon_start", c.epsilon_start},
          {"epsilon_final", c.epsilon_final},
          {"epsilon_decay", c.epsilon_decay}};
}

json design_to_json(const agent::DesignRecord& d) {
  return {{"episode", d.episode},
          {"stack", stack_to_json(d.stack)},
          {"objective", d.objective},
          {"reward", d.reward},
          {"unconstrained_reward", d.unconstrained_reward},
          {"reflectivity", d.reflectivity}};
}

namespace {

json opt(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

}  // namespace

json metrics_to_json(const agent::EpisodeMetrics& m) {
  return {{"episode", m.episode},
          {"epsilon", m.epsilon},
          {"reward", m.reward},
          {"unconstrained_reward", m.unconstrained_reward},
          {"objective", m.objective},
          {"running_reward", m.running_reward},
          {"best_reward", m.best_reward},
          {"layers", m.layers},
          {"total_thickness_nm", m.total_thickness_nm},
          {"q_loss", opt(m.q_loss)},
          {"actor_objective", opt(m.actor_objective)},
          {"loss_mean", opt(m.loss_mean)},
          {"loss_std", opt(m.loss_std)},
          {"ratio_n", m.convexity.ratio_n},
          {"ratio_p", m.convexity.ratio_p},
          {"ratio_both", m.convexity.ratio_both},
          {"convexity_trivial", m.convexity.trivially_convex},
          {"ratio_n_mean", m.ratio_n_mean},
          {"ratio_n_std", m.ratio_n_std},
          {"ratio_p_mean", m.ratio_p_mean},
          {"ratio_p_std", m.ratio_p_std},
          {"ratio_both_mean", m.ratio_both_mean},
          {"ratio_both_std", m.ratio_both_std},
          {"simulator_calls", m.simulator_calls}};
}

json what_if_to_json(const analysis::WhatIfRecord& r) {
  json action = r.action.is_terminate()
                    ? json{{"kind", "terminate"}}
                    : json{{"kind", "place"}, {"material", r.action.material_id}, {"thickness_nm", r.action.thickness_nm}};
  return {{"layer", r.layer + 1},
          {"action", action},
          {"q_estimate", r.q_estimate},
          {"re_n", r.index},
          {"optical_path_nm", r.optical_path_nm},
          {"realized_return", r.realized_return}};
}

std::string reflectivity_csv(const optics::SpectralGrid& grid, std::span<const double> reflectivity,
                             std::span<const double> target) {
  std::string out = target.empty() ? "wavelength_nm,angle_deg,R\n" : "wavelength_nm,angle_deg,R,target\n";
  char buf[128];
  std::size_t i = 0;
  for (double a : grid.angles_deg) {
    for (double wl : grid.wavelengths_nm) {
      if (target.empty()) {
        std::snprintf(buf, sizeof buf, "%.6g,%.6g,%.10f\n", wl, a, reflectivity[i]);
      } else {
        std::snprintf(buf, sizeof buf, "%.6g,%.6g,%.10f,%.10f\n", wl, a, reflectivity[i], target[i]);
      }
      out += buf;
      ++i;
    }
  }
  return out;
}

}  // namespace optistack::io
