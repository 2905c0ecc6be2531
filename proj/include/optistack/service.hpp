#pragma once

// HTTP service around simulation, training and analysis. Training runs on a
// single background worker; request handlers talk to it through a job queue
// and read immutable per-episode snapshots.

#include <condition_variable>
#include <deque>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <thread>

#include "optistack/run_store.hpp"

namespace httplib {
class Server;
}

namespace optistack::service {

struct ServiceConfig {
  std::string host = "127.0.0.1";
  int port = 8080;  // 0 picks a free port
  std::filesystem::path data_dir;
  std::optional<std::filesystem::path> static_dir;
  optics::MaterialCatalog catalog = optics::default_catalog();
};

// Parsed "host:port" (a bare port binds to 127.0.0.1).
std::pair<std::string, int> parse_bind(const std::string& bind);

struct ApiResponse {
  int status = 200;
  std::string body;
  std::string content_type = "application/json";
  std::map<std::string, std::string> headers;
};

class Service {
 public:
  explicit Service(ServiceConfig config);
  ~Service();
  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  // Binds the socket; returns the bound port. Throws ConfigError if busy.
  int bind();
  // Blocks serving requests until stop().
  void listen();
  void stop();

  // Routes one request without the network layer (also used by the server).
  ApiResponse handle(const std::string& method, const std::string& path, const std::string& body,
                     const std::map<std::string, std::string>& query = {});

  // Blocks until the worker has no queued or running job.
  void wait_idle();

 private:
  struct RunEntry;
  struct Snapshot;

  ApiResponse route(const std::string& method, const std::string& path, const io::json& body,
                    const std::map<std::string, std::string>& query);
  ApiResponse tasks() const;
  ApiResponse materials() const;
  ApiResponse simulate(const io::json& body);
  ApiResponse dbr(const io::json& body) const;
  ApiResponse start_run(const io::json& body);
  ApiResponse list_runs();
  ApiResponse get_run(const std::string& id);
  ApiResponse run_metrics(const std::string& id, long after);
  ApiResponse run_best(const std::string& id);
  ApiResponse what_if(const io::json& body);
  ApiResponse q_values(const io::json& body);

  std::shared_ptr<RunEntry> find_run(const std::string& id);
  std::shared_ptr<const Snapshot> snapshot_for(RunEntry& entry, const std::string& which);
  objective::TaskSpec resolve_task(const io::json& j) const;
  void worker_loop();

  ServiceConfig config_;
  store::RunStore store_;
  std::unique_ptr<httplib::Server> server_;

  std::mutex runs_mutex_;
  std::map<std::string, std::shared_ptr<RunEntry>> runs_;

  std::mutex cache_mutex_;
  std::map<std::string, std::string> sim_cache_;  // content hash -> response body

  std::mutex queue_mutex_;
  std::condition_variable queue_cv_;
  std::deque<std::string> queue_;
  bool busy_ = false;
  bool shutting_down_ = false;
  std::thread worker_;
};

}  // namespace optistack::service
