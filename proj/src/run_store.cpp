#include "optistack/run_store.hpp"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <fstream>

#include "optistack/errors.hpp"

namespace optistack::store {

namespace fs = std::filesystem;
using io::json;

std::string to_string(RunStatus s) {
  switch (s) {
    case RunStatus::Queued:
      return "queued";
    case RunStatus::Running:
      return "running";
    case RunStatus::Finished:
      return "finished";
    case RunStatus::Failed:
      return "failed";
  }
  return "failed";
}

RunStatus status_from_string(const std::string& s) {
  if (s == "queued") return RunStatus::Queued;
  if (s == "running") return RunStatus::Running;
  if (s == "finished") return RunStatus::Finished;
  if (s == "failed") return RunStatus::Failed;
  throw ConfigError("unknown run status '" + s + "'");
}

bool transition_allowed(RunStatus from, RunStatus to) {
  switch (from) {
    case RunStatus::Queued:
      return to == RunStatus::Running || to == RunStatus::Failed;
    case RunStatus::Running:
      return to == RunStatus::Finished || to == RunStatus::Failed;
    default:
      return false;
  }
}

json RunHandle::to_json() const {
  return {{"run_id", run_id},
          {"status", to_string(status)},
          {"task_id", task_id},
          {"algo", algo},
          {"episode", episode},
          {"episodes_total", episodes_total},
          {"best_reward", best_reward ? json(*best_reward) : json(nullptr)},
          {"error", error}};
}

RunHandle RunHandle::from_json(const json& j, const fs::path& dir) {
  RunHandle h;
  h.run_id = j.at("run_id").get<std::string>();
  h.status = status_from_string(j.at("status").get<std::string>());
  h.task_id = j.value("task_id", "");
  h.algo = j.value("algo", "mpdqn");
  h.episode = j.value("episode", -1L);
  h.episodes_total = j.value("episodes_total", 0L);
  if (j.contains("best_reward") && !j.at("best_reward").is_null()) h.best_reward = j.at("best_reward").get<double>();
  h.error = j.value("error", "");
  h.dir = dir;
  return h;
}

fs::path default_data_dir() {
  if (const char* env = std::getenv("OPTISTACK_DATA_DIR"); env && *env) return env;
  return "optistack_data";
}

RunWriter::RunWriter(fs::path dir, RunHandle handle) : dir_(std::move(dir)), handle_(std::move(handle)) {
  fs::create_directories(dir_);
  handle_.dir = dir_;
  // Truncate so that repeated runs into the same directory are byte-identical.
  std::ofstream(dir_ / "metrics.jsonl", std::ios::trunc);
  std::ofstream(dir_ / "journal.jsonl", std::ios::trunc);
  journal({{"event", "created"}, {"status", to_string(handle_.status)}});
  write_status();
}

void RunWriter::journal(const json& event) {
  json e = event;
  e["seq"] = journal_seq_++;
  std::ofstream out(dir_ / "journal.jsonl", std::ios::app);
  out << e.dump() << '\n';
  out.flush();
}

void RunWriter::write_status() { io::write_json_file(dir_ / "status.json", handle_.to_json()); }

void RunWriter::write_config(const json& config) { io::write_json_file(dir_ / "config.json", config); }

void RunWriter::set_status(RunStatus status, const std::string& error) {
  if (!transition_allowed(handle_.status, status)) {
    throw UsageError("run status cannot go from " + to_string(handle_.status) + " to " + to_string(status));
  }
  handle_.status = status;
  handle_.error = error;
  json e{{"event", "status"}, {"status", to_string(status)}};
  if (!error.empty()) e["error"] = error;
  journal(e);
  write_status();
}

void RunWriter::append_metrics(const agent::EpisodeMetrics& m) {
  {
    std::ofstream out(dir_ / "metrics.jsonl", std::ios::app);
    out << io::metrics_to_json(m).dump() << '\n';
  }
  handle_.episode = m.episode;
  handle_.best_reward = m.best_reward;
}

void RunWriter::set_progress(long episode, double best_reward) {
  handle_.episode = episode;
  handle_.best_reward = best_reward;
  write_status();
}

void RunWriter::write_best(const agent::DesignRecord& best, const agent::NetworkBundle& bundle, long step) {
  io::write_json_file(dir_ / "best_design.json", io::design_to_json(best));
  save_bundle(bundle, step, dir_ / "checkpoint_best");
  handle_.best_reward = best.reward;
  journal({{"event", "best"}, {"episode", best.episode}, {"reward", best.reward}});
  write_status();
}

void RunWriter::write_last(const agent::NetworkBundle& bundle, long step) {
  save_bundle(bundle, step, dir_ / "checkpoint_last");
  journal({{"event", "checkpoint"}, {"episode", handle_.episode}});
  write_status();
}

void save_bundle(const agent::NetworkBundle& bundle, long step, const fs::path& dir) {
  nn::save_checkpoint(bundle.actor, step, dir / "actor");
  nn::save_checkpoint(bundle.q_net, step, dir / "q_net");
  nn::save_checkpoint(bundle.actor_target, step, dir / "actor_target");
  nn::save_checkpoint(bundle.q_target, step, dir / "q_target");
}

agent::NetworkBundle load_bundle(const fs::path& dir, const objective::TaskSpec& task) {
  agent::NetworkBundle b;
  b.layer_budget = task.layer_budget;
  b.material_count = static_cast<int>(task.material_count());
  b.t_min_nm = task.t_min_nm;
  b.t_max_nm = task.t_max_nm;
  b.actor = nn::load_checkpoint(dir / "actor");
  b.q_net = nn::load_checkpoint(dir / "q_net");
  b.actor_target = nn::load_checkpoint(dir / "actor_target");
  b.q_target = nn::load_checkpoint(dir / "q_target");
  if (b.actor.input_size() != b.state_size() || b.q_net.input_size() != b.state_size() + b.material_count) {
    throw ConfigError("checkpoint in " + dir.string() + " does not match the task");
  }
  b.actor_opt = nn::AdamState::for_network(b.actor);
  b.q_opt = nn::AdamState::for_network(b.q_net);
  return b;
}

RunStore::RunStore(fs::path root) : root_(std::move(root)) { fs::create_directories(root_ / "runs"); }

fs::path RunStore::run_dir(const std::string& run_id) const { return root_ / "runs" / run_id; }

std::string RunStore::allocate_id() {
  std::lock_guard lock(mutex_);
  // One past the highest existing run-NNNN, so ids sort by creation.
  int next = 1;
  if (fs::exists(root_ / "runs")) {
    for (const auto& entry : fs::directory_iterator(root_ / "runs")) {
      const auto name = entry.path().filename().string();
      int n = 0;
      if (name.size() > 4 && name.rfind("run-", 0) == 0 && std::sscanf(name.c_str() + 4, "%d", &n) == 1) {
        next = std::max(next, n + 1);
      }
    }
  }
  for (int i = next;; ++i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "run-%04d", i);
    const auto dir = run_dir(buf);
    std::error_code ec;
    fs::create_directories(root_ / "runs", ec);
    if (fs::create_directory(dir, ec)) return buf;
    if (ec) throw ConfigError("cannot create run directory " + dir.string() + ": " + ec.message());
  }
}

std::vector<RunHandle> RunStore::scan(bool mark_interrupted) {
  std::lock_guard lock(mutex_);
  std::vector<RunHandle> out;
  if (!fs::exists(root_ / "runs")) return out;
  std::vector<fs::path> dirs;
  for (const auto& entry : fs::directory_iterator(root_ / "runs")) {
    if (entry.is_directory() && fs::exists(entry.path() / "status.json")) dirs.push_back(entry.path());
  }
  std::sort(dirs.begin(), dirs.end());
  for (const auto& dir : dirs) {
    try {
      auto h = RunHandle::from_json(io::read_json_file(dir / "status.json"), dir);
      if (mark_interrupted && (h.status == RunStatus::Queued || h.status == RunStatus::Running)) {
        h.status = RunStatus::Failed;
        h.error = "interrupted by service restart";
        std::ofstream(dir / "journal.jsonl", std::ios::app)
            << json{{"event", "status"}, {"status", "failed"}, {"error", h.error}}.dump() << '\n';
        io::write_json_file(dir / "status.json", h.to_json());
      }
      out.push_back(std::move(h));
    } catch (const std::exception&) {
      // A half-written run directory is skipped rather than failing the scan.
    }
  }
  return out;
}

std::optional<RunHandle> RunStore::load(const std::string& run_id) const {
  const auto dir = run_dir(run_id);
  if (!fs::exists(dir / "status.json")) return std::nullopt;
  return RunHandle::from_json(io::read_json_file(dir / "status.json"), dir);
}

LoadedRun load_run(const fs::path& dir) {
  LoadedRun r;
  if (!fs::exists(dir / "config.json")) throw ConfigError("no run found in " + dir.string());
  r.config = io::read_json_file(dir / "config.json");
  if (fs::exists(dir / "status.json")) r.handle = RunHandle::from_json(io::read_json_file(dir / "status.json"), dir);
  r.task = io::task_from_json(r.config.at("task"));
  r.catalog = io::catalog_from_json(r.config.at("catalog"));
  r.reward = io::reward_params_from_json(r.config.at("reward"));
  if (r.config.contains("hyper")) r.hyper = io::hyper_from_json(r.config.at("hyper"));
  return r;
}

std::vector<json> read_metrics(const fs::path& dir) {
  std::vector<json> out;
  std::ifstream in(dir / "metrics.jsonl");
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) out.push_back(json::parse(line));
  }
  return out;
}

}  // namespace optistack::store

namespace optistack::store {

json training_config(const LoadedRun& setup) {
  return {{"algo", "mpdqn"},
          {"task", io::task_to_json(setup.task)},
          {"catalog", io::catalog_to_json(setup.catalog)},
          {"reward", io::reward_params_to_json(setup.reward)},
          {"hyper", io::hyper_to_json(setup.hyper)},
          {"seed", setup.hyper.seed}};
}

agent::RunResult train_run(const LoadedRun& setup, RunWriter& writer, const agent::TrainingCallbacks& extra) {
  writer.write_config(training_config(setup));
  writer.set_status(RunStatus::Running);
  agent::TrainingCallbacks cb;
  cb.stop_requested = extra.stop_requested;
  cb.on_best = [&](const agent::DesignRecord& d, const agent::NetworkBundle& b) {
    writer.write_best(d, b, d.episode);
    if (extra.on_best) extra.on_best(d, b);
  };
  cb.on_episode = [&](const agent::EpisodeMetrics& m) {
    writer.append_metrics(m);
    if (extra.on_episode) extra.on_episode(m);
  };
  cb.on_snapshot = [&](const agent::NetworkBundle& b, const agent::EpisodeMetrics& m) {
    if ((m.episode + 1) % kCheckpointEvery == 0) writer.write_last(b, m.episode);
    if (extra.on_snapshot) extra.on_snapshot(b, m);
  };
  try {
    auto result = agent::run_training(setup.task, setup.catalog, setup.reward, setup.hyper, cb);
    writer.write_last(result.final_bundle, static_cast<long>(result.metrics.size()) - 1);
    if (result.stopped_early) {
      writer.set_status(RunStatus::Failed, "stopped before completion");
    } else {
      writer.set_status(RunStatus::Finished);
    }
    return result;
  } catch (const std::exception& e) {
    writer.set_status(RunStatus::Failed, e.what());
    throw;
  }
}

baseline::BaselineResult baseline_run(const objective::TaskSpec& task, const optics::MaterialCatalog& catalog,
                                      const objective::RewardParams& reward, const baseline::BaselineConfig& config,
                                      RunWriter& writer) {
  writer.write_config({{"algo", "dqn_discrete"},
                       {"task", io::task_to_json(task)},
                       {"catalog", io::catalog_to_json(catalog)},
                       {"reward", io::reward_params_to_json(reward)},
                       {"baseline", io::baseline_config_to_json(config)},
                       {"seed", config.seed}});
  writer.set_status(RunStatus::Running);
  try {
    auto result = baseline::run_discrete_dqn(task, catalog, reward, config);
    {
      std::ofstream out(writer.dir() / "metrics.jsonl", std::ios::trunc);
      for (std::size_t e = 0; e < result.episode_best_reward.size(); ++e) {
        out << json{{"episode", e},
                    {"best_reward", result.episode_best_reward[e]},
                    {"mean_reward", result.episode_mean_reward[e]},
                    {"simulator_calls", static_cast<long>(e + 1) * config.steps_per_episode}}
                   .dump()
            << '\n';
      }
    }
    writer.set_progress(static_cast<long>(result.episode_best_reward.size()) - 1, result.best_reward);
    agent::DesignRecord best;
    best.stack = result.best.to_stack(task);
    best.objective = result.best_objective;
    best.reward = result.best_reward;
    best.unconstrained_reward = env::evaluate_stack(best.stack, task, catalog, reward).unconstrained_reward;
    best.reflectivity = result.best_reflectivity;
    io::write_json_file(writer.dir() / "best_design.json", io::design_to_json(best));
    if (result.network) nn::save_checkpoint(*result.network, result.simulator_calls, writer.dir() / "checkpoint_last" / "q_net");
    writer.set_status(RunStatus::Finished);
    return result;
  } catch (const std::exception& e) {
    writer.set_status(RunStatus::Failed, e.what());
    throw;
  }
}

}  // namespace optistack::store
