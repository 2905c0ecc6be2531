#pragma once

// JSON file formats for catalogs, tasks, stacks, designs and run metrics.

#include <filesystem>
#include <json.hpp>
#include <string>

#include "optistack/baseline_dqn.hpp"
#include "optistack/trainer.hpp"

namespace optistack::io {

using nlohmann::json;

json read_json_file(const std::filesystem::path& path);
// Writes through a temporary file and a rename.
void write_json_file(const std::filesystem::path& path, const json& value);
void write_text_file(const std::filesystem::path& path, const std::string& text);

// {"reference_wavelength_nm": 550, "materials": [{"id", "name", "n_const": [re, im]} |
//  {"id", "name", "dispersion": [[wl, re, im], ...]}]}
optics::MaterialCatalog catalog_from_json(const json& j);
json catalog_to_json(const optics::MaterialCatalog& catalog);

// Grid: {"lambda_start", "lambda_end", "lambda_step", "phi_start", "phi_end",
// "phi_step"} or {"wavelengths_nm": [...], "angles_deg": [...]}.
optics::SpectralGrid grid_from_json(const json& j);
json grid_to_json(const optics::SpectralGrid& grid);

// Target: an array (explicit), or {"formula": "linear"|"tanh_edge"|"constant", ...}.
// A bare string ("task2") names a built-in task.
objective::TaskSpec task_from_json(const json& j);
json task_to_json(const objective::TaskSpec& task);
objective::TaskSpec load_task(const std::string& path_or_id);

// {"layers": [{"material": id, "thickness_nm": t}, ...]} or a bare layer array.
optics::Stack stack_from_json(const json& j);
json stack_to_json(const optics::Stack& stack);

json dbr_to_json(const optics::DbrSpec& dbr);
json reward_params_to_json(const objective::RewardParams& p);
objective::RewardParams reward_params_from_json(const json& j);

json hyper_to_json(const agent::Hyperparameters& h);
agent::Hyperparameters hyper_from_json(const json& j);
json baseline_config_to_json(const baseline::BaselineConfig& c);

json design_to_json(const agent::DesignRecord& d);
json metrics_to_json(const agent::EpisodeMetrics& m);
json what_if_to_json(const analysis::WhatIfRecord& r);

// Reflectivity as CSV with columns wavelength_nm,angle_deg,R[,target].
std::string reflectivity_csv(const optics::SpectralGrid& grid, std::span<const double> reflectivity,
                             std::span<const double> target = {});

}  // namespace optistack::io
