#pragma once

// Filesystem run store. Each run lives in <root>/runs/<run_id>/ with
// config.json, metrics.jsonl, checkpoint_best/, checkpoint_last/,
// best_design.json, status.json and an append-only journal.jsonl.

#include <filesystem>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "optistack/io.hpp"

namespace optistack::store {

enum class RunStatus { Queued, Running, Finished, Failed };

std::string to_string(RunStatus s);
RunStatus status_from_string(const std::string& s);
// queued -> running -> finished | failed, plus queued -> failed.
bool transition_allowed(RunStatus from, RunStatus to);

struct RunHandle {
  std::string run_id;
  RunStatus status = RunStatus::Queued;
  std::string task_id;
  std::string algo = "mpdqn";
  long episode = -1;  // last completed episode
  long episodes_total = 0;
  std::optional<double> best_reward;
  std::string error;
  std::filesystem::path dir;

  io::json to_json() const;
  static RunHandle from_json(const io::json& j, const std::filesystem::path& dir);
};

// OPTISTACK_DATA_DIR, or ./optistack_data when unset.
std::filesystem::path default_data_dir();

// Writes the artifacts of one run as training progresses.
class RunWriter {
 public:
  RunWriter(std::filesystem::path dir, RunHandle handle);

  const RunHandle& handle() const { return handle_; }
  const std::filesystem::path& dir() const { return dir_; }

  void write_config(const io::json& config);
  void set_status(RunStatus status, const std::string& error = {});
  void append_metrics(const agent::EpisodeMetrics& m);
  void set_progress(long episode, double best_reward);
  void write_best(const agent::DesignRecord& best, const agent::NetworkBundle& bundle, long step);
  void write_last(const agent::NetworkBundle& bundle, long step);

 private:
  void journal(const io::json& event);
  void write_status();

  std::filesystem::path dir_;
  RunHandle handle_;
  long journal_seq_ = 0;
};

void save_bundle(const agent::NetworkBundle& bundle, long step, const std::filesystem::path& dir);
agent::NetworkBundle load_bundle(const std::filesystem::path& dir, const objective::TaskSpec& task);

class RunStore {
 public:
  explicit RunStore(std::filesystem::path root);

  const std::filesystem::path& root() const { return root_; }
  std::filesystem::path run_dir(const std::string& run_id) const;

  // Fresh id of the form run-0001, unique within the store.
  std::string allocate_id();
  // Reads every run from disk; runs left queued or running by a previous
  // process are marked failed.
  std::vector<RunHandle> scan(bool mark_interrupted = true);
  std::optional<RunHandle> load(const std::string& run_id) const;

 private:
  std::filesystem::path root_;
  std::mutex mutex_;
};

// Everything needed to query a stored run.
struct LoadedRun {
  RunHandle handle;
  io::json config;
  objective::TaskSpec task;
  optics::MaterialCatalog catalog;
  objective::RewardParams reward;
  agent::Hyperparameters hyper;
};

LoadedRun load_run(const std::filesystem::path& dir);

// config.json contents for a training run.
io::json training_config(const LoadedRun& setup);

inline constexpr long kCheckpointEvery = 100;  // episodes between checkpoint_last writes

// Trains `setup` while streaming artifacts through `writer`: metrics every
// episode, best design and checkpoint_best on improvement, checkpoint_last
// every kCheckpointEvery episodes and at the end. `extra` callbacks run after
// the artifacts are written. Marks the run finished or failed.
agent::RunResult train_run(const LoadedRun& setup, RunWriter& writer, const agent::TrainingCallbacks& extra = {});

// Discrete baseline with the same layout (algo "dqn_discrete"); only
// checkpoint_last/q_net is written since the baseline has no actor.
baseline::BaselineResult baseline_run(const objective::TaskSpec& task, const optics::MaterialCatalog& catalog,
                                      const objective::RewardParams& reward, const baseline::BaselineConfig& config,
                                      RunWriter& writer);
std::vector<io::json> read_metrics(const std::filesystem::path& dir);

}  // namespace optistack::store
