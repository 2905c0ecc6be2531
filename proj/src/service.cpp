#include "optistack/service.hpp"

#include <httplib.h>

#include <atomic>
#include <charconv>
#include <cstdio>
#include <regex>

#include "optistack/errors.hpp"

namespace optistack::service {

namespace fs = std::filesystem;
using io::json;

namespace {

class NotFound : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

ApiResponse json_response(const json& j, int status = 200) { return {status, j.dump(), "application/json", {}}; }

ApiResponse error_response(int status, const std::string& code, const std::string& message) {
  return json_response({{"error", {{"code", code}, {"message", message}}}}, status);
}

std::string fnv1a_hex(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// Parameters only; optimizer moments are not needed for queries.
agent::NetworkBundle lean_copy(const agent::NetworkBundle& b) {
  agent::NetworkBundle out;
  out.layer_budget = b.layer_budget;
  out.material_count = b.material_count;
  out.t_min_nm = b.t_min_nm;
  out.t_max_nm = b.t_max_nm;
  out.actor = b.actor;
  out.q_net = b.q_net;
  out.actor_target = b.actor_target;
  out.q_target = b.q_target;
  return out;
}

json task_summary(const objective::TaskSpec& t) {
  json j = io::task_to_json(t);
  j["grid_size"] = t.grid.size();
  j["wavelengths_nm"] = t.grid.wavelengths_nm;
  j["angles_deg"] = t.grid.angles_deg;
  j["target_values"] = t.target;
  return j;
}

long parse_long(const std::string& s, const char* what) {
  long v = 0;
  const auto* end = s.data() + s.size();
  auto [p, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || p != end) throw InvalidInputError(std::string("query parameter '") + what + "' is not an integer");
  return v;
}

std::vector<double> encode_stack_state(const optics::Stack& stack, const objective::TaskSpec& task,
                                       const optics::MaterialCatalog& catalog) {
  auto state = env::reset(task);
  for (const auto& l : stack.layers) {
    state = env::step(state, env::Action::place(l.material_id, l.thickness_nm), task, catalog).next;
  }
  return state.encode();
}

}  // namespace

struct Service::Snapshot {
  agent::NetworkBundle bundle;
  long episode = -1;
};

struct Service::RunEntry {
  std::mutex mutex;
  store::RunHandle handle;
  std::shared_ptr<const store::LoadedRun> setup;
  std::vector<std::string> metrics;  // serialized records, index == episode
  bool metrics_loaded = false;
  std::shared_ptr<const Snapshot> last;
  std::shared_ptr<const Snapshot> best;
  std::unique_ptr<store::RunWriter> writer;
  std::atomic<bool> cancel{false};
};

std::pair<std::string, int> parse_bind(const std::string& bind) {
  const auto colon = bind.rfind(':');
  const std::string host = colon == std::string::npos ? "127.0.0.1" : bind.substr(0, colon);
  const std::string port = colon == std::string::npos ? bind : bind.substr(colon + 1);
  const long p = parse_long(port, "port");
  if (p < 0 || p > 65535) throw InvalidInputError("port out of range: " + port);
  return {host.empty() ? "127.0.0.1" : host, static_cast<int>(p)};
}

Service::Service(ServiceConfig config)
    : config_(std::move(config)),
      store_(config_.data_dir.empty() ? store::default_data_dir() : config_.data_dir),
      server_(std::make_unique<httplib::Server>()) {
  config_.catalog.validate();
  for (auto& h : store_.scan(true)) {
    auto entry = std::make_shared<RunEntry>();
    entry->handle = h;
    runs_[h.run_id] = entry;
  }

  auto dispatch = [this](const httplib::Request& req, httplib::Response& res) {
    std::map<std::string, std::string> query;
    for (const auto& [k, v] : req.params) query[k] = v;
    const auto r = handle(req.method, req.path, req.body, query);
    res.status = r.status;
    for (const auto& [k, v] : r.headers) res.set_header(k, v);
    res.set_content(r.body, r.content_type);
  };
  server_->Get(R"(/api/.*)", dispatch);
  server_->Post(R"(/api/.*)", dispatch);
  if (config_.static_dir) server_->set_mount_point("/", config_.static_dir->string());

  worker_ = std::thread([this] { worker_loop(); });
}

Service::~Service() {
  stop();
  {
    std::lock_guard lock(queue_mutex_);
    shutting_down_ = true;
  }
  {
    std::lock_guard lock(runs_mutex_);
    for (auto& [id, e] : runs_) e->cancel = true;
  }
  queue_cv_.notify_all();
  if (worker_.joinable()) worker_.join();
}

int Service::bind() {
  if (config_.port == 0) {
    const int port = server_->bind_to_any_port(config_.host);
    if (port < 0) throw ConfigError("cannot bind to " + config_.host);
    return port;
  }
  if (!server_->bind_to_port(config_.host, config_.port)) {
    throw ConfigError("cannot bind to " + config_.host + ":" + std::to_string(config_.port) + " (port busy?)");
  }
  return config_.port;
}

void Service::listen() { server_->listen_after_bind(); }

void Service::stop() { server_->stop(); }

void Service::wait_idle() {
  std::unique_lock lock(queue_mutex_);
  queue_cv_.wait(lock, [this] { return queue_.empty() && !busy_; });
}

ApiResponse Service::handle(const std::string& method, const std::string& path, const std::string& body,
                            const std::map<std::string, std::string>& query) {
  try {
    json parsed;
    if (method == "POST") {
      if (body.empty()) throw InvalidInputError("request body must be a JSON object");
      try {
        parsed = json::parse(body);
      } catch (const json::parse_error& e) {
        return error_response(400, "malformed_json", e.what());
      }
      if (!parsed.is_object()) throw InvalidInputError("request body must be a JSON object");
    }
    return route(method, path, parsed, query);
  } catch (const NotFound& e) {
    return error_response(404, "not_found", e.what());
  } catch (const InvalidInputError& e) {
    return error_response(400, "invalid_input", e.what());
  } catch (const CalibrationError& e) {
    return error_response(400, "calibration_failed", e.what());
  } catch (const ConfigError& e) {
    return error_response(400, "invalid_config", e.what());
  } catch (const UsageError& e) {
    return error_response(409, "invalid_state", e.what());
  } catch (const json::exception& e) {
    return error_response(400, "invalid_request", e.what());
  } catch (const std::exception& e) {
    return error_response(500, "internal", e.what());
  }
}

ApiResponse Service::route(const std::string& method, const std::string& path, const json& body,
                           const std::map<std::string, std::string>& query) {
  static const std::regex run_re(R"(^/api/runs/([A-Za-z0-9_.-]+)$)");
  static const std::regex metrics_re(R"(^/api/runs/([A-Za-z0-9_.-]+)/metrics$)");
  static const std::regex best_re(R"(^/api/runs/([A-Za-z0-9_.-]+)/best$)");
  std::smatch m;
  if (method == "GET") {
    if (path == "/api/tasks") return tasks();
    if (path == "/api/materials") return materials();
    if (path == "/api/runs") return list_runs();
    if (std::regex_match(path, m, run_re)) return get_run(m[1]);
    if (std::regex_match(path, m, metrics_re)) {
      const auto it = query.find("after");
      return run_metrics(m[1], it == query.end() ? -1 : parse_long(it->second, "after"));
    }
    if (std::regex_match(path, m, best_re)) return run_best(m[1]);
  } else if (method == "POST") {
    if (path == "/api/simulate") return simulate(body);
    if (path == "/api/dbr") return dbr(body);
    if (path == "/api/runs") return start_run(body);
    if (path == "/api/whatif") return what_if(body);
    if (path == "/api/qvalues") return q_values(body);
  }
  throw NotFound("no route for " + method + " " + path);
}

objective::TaskSpec Service::resolve_task(const json& j) const {
  if (j.is_string()) {
    const auto id = j.get<std::string>();
    for (const auto& b : objective::builtin_task_ids()) {
      if (b == id) return objective::builtin_task(id);
    }
    const auto file = store_.root() / "tasks" / (id + ".json");
    if (fs::exists(file)) return io::task_from_json(io::read_json_file(file));
    throw InvalidInputError("unknown task '" + id + "'");
  }
  if (j.is_object()) return io::task_from_json(j);
  throw InvalidInputError("task must be an id or a task object");
}

ApiResponse Service::tasks() const {
  json list = json::array();
  for (const auto& id : objective::builtin_task_ids()) list.push_back(task_summary(objective::builtin_task(id)));
  const auto dir = store_.root() / "tasks";
  if (fs::exists(dir)) {
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir)) {
      if (e.path().extension() == ".json") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      try {
        list.push_back(task_summary(io::task_from_json(io::read_json_file(f))));
      } catch (const std::exception&) {
        // Unreadable task files are not listed.
      }
    }
  }
  return json_response({{"tasks", list}});
}

ApiResponse Service::materials() const { return json_response(io::catalog_to_json(config_.catalog)); }

ApiResponse Service::simulate(const json& body) {
  const auto task = resolve_task(body.at("task"));
  task.validate(config_.catalog);
  if (!body.contains("stack")) throw InvalidInputError("missing field 'stack'");
  auto stack = io::stack_from_json(body.at("stack"));
  if (!body.at("stack").is_object() || !body.at("stack").contains("substrate_index")) {
    stack.substrate_index = task.substrate_index;
  }
  if (static_cast<int>(stack.layers.size()) > task.layer_budget) {
    throw InvalidInputError("stack has " + std::to_string(stack.layers.size()) + " layers, task allows " +
                            std::to_string(task.layer_budget));
  }
  for (const auto& l : stack.layers) {
    if (std::find(task.material_ids.begin(), task.material_ids.end(), l.material_id) == task.material_ids.end()) {
      throw InvalidInputError("material " + std::to_string(l.material_id) + " is not available in this task");
    }
    if (!(l.thickness_nm >= task.t_min_nm && l.thickness_nm <= task.t_max_nm)) {
      throw InvalidInputError("thickness must lie in [" + std::to_string(task.t_min_nm) + ", " +
                              std::to_string(task.t_max_nm) + "] nm");
    }
  }
  objective::RewardParams rp;
  if (body.contains("alpha")) rp.alpha = body.at("alpha").get<double>();

  const json key{{"grid", io::grid_to_json(task.grid)},  {"target", task.target},
                 {"stack", io::stack_to_json(stack)},    {"catalog", io::catalog_to_json(config_.catalog)},
                 {"mu", task.mu},                        {"t_max_nm", task.t_max_nm},
                 {"layer_budget", task.layer_budget},    {"alpha", rp.alpha}};
  const std::string canonical = key.dump();
  const std::string hash = fnv1a_hex(canonical);
  {
    std::lock_guard lock(cache_mutex_);
    if (auto it = sim_cache_.find(hash + canonical); it != sim_cache_.end()) {
      ApiResponse r{200, it->second, "application/json", {{"X-Cache", "hit"}, {"X-Content-Hash", hash}}};
      return r;
    }
  }
  const auto ev = env::evaluate_stack(stack, task, config_.catalog, rp);
  const json out{{"task_id", task.id},
                 {"wavelengths_nm", task.grid.wavelengths_nm},
                 {"angles_deg", task.grid.angles_deg},
                 {"reflectivity", ev.reflectivity},
                 {"target", task.target},
                 {"objective", ev.objective},
                 {"reward", ev.reward},
                 {"unconstrained_reward", ev.unconstrained_reward},
                 {"alpha", rp.alpha},
                 {"total_thickness_nm", stack.total_thickness()}};
  std::string body_text = out.dump();
  {
    std::lock_guard lock(cache_mutex_);
    if (sim_cache_.size() >= 512) sim_cache_.clear();
    sim_cache_.emplace(hash + canonical, body_text);
  }
  return {200, std::move(body_text), "application/json", {{"X-Cache", "miss"}, {"X-Content-Hash", hash}}};
}

ApiResponse Service::dbr(const json& body) const {
  const double n1 = body.value("n1", 1.457);
  const double n2 = body.value("n2", 2.327);
  const double edge = body.value("band_edge", 550.0);
  const int periods = body.value("periods", 4);
  if (periods < 1) throw InvalidInputError("periods must be positive");
  const auto d = optics::design_dbr(n1, n2, edge, periods);
  json out = io::dbr_to_json(d);
  std::optional<int> low, high;
  for (const auto& m : config_.catalog.materials) {
    const double n = config_.catalog.reference_index(m.id);
    if (std::abs(n - n1) < 1e-12) low = m.id;
    if (std::abs(n - n2) < 1e-12) high = m.id;
  }
  if (low && high) out["stack"] = io::stack_to_json(d.as_stack(*low, *high));
  return json_response(out);
}

ApiResponse Service::start_run(const json& body) {
  auto setup = std::make_shared<store::LoadedRun>();
  setup->catalog = config_.catalog;
  setup->task = resolve_task(body.value("task", json("task2")));
  if (body.contains("mu")) setup->task.mu = body.at("mu").get<double>();
  setup->task.validate(setup->catalog);
  setup->hyper = body.contains("hyper") ? io::hyper_from_json(body.at("hyper")) : agent::Hyperparameters{};
  if (body.contains("episodes")) setup->hyper.episodes = body.at("episodes").get<int>();
  if (body.contains("seed")) setup->hyper.seed = body.at("seed").get<std::uint64_t>();
  setup->hyper.validate();
  if (body.contains("alpha")) {
    setup->reward.alpha = body.at("alpha").get<double>();
    if (!(setup->reward.alpha > 0.0)) throw InvalidInputError("alpha must be positive");
  } else {
    const int samples = body.value("calibration_samples", 1000);
    if (samples < 1) throw InvalidInputError("calibration_samples must be positive");
    setup->reward = objective::calibrate_alpha(setup->task, setup->catalog, samples, objective::kDefaultBetaLow,
                                               objective::kDefaultBetaHigh, setup->hyper.seed);
  }

  auto entry = std::make_shared<RunEntry>();
  const auto id = store_.allocate_id();
  store::RunHandle h;
  h.run_id = id;
  h.task_id = setup->task.id;
  h.episodes_total = setup->hyper.episodes;
  entry->writer = std::make_unique<store::RunWriter>(store_.run_dir(id), h);
  entry->writer->write_config(store::training_config(*setup));
  entry->handle = entry->writer->handle();
  entry->setup = setup;
  entry->metrics_loaded = true;
  {
    std::lock_guard lock(runs_mutex_);
    runs_[id] = entry;
  }
  {
    std::lock_guard lock(queue_mutex_);
    queue_.push_back(id);
  }
  queue_cv_.notify_all();
  json out = entry->handle.to_json();
  out["reward"] = io::reward_params_to_json(setup->reward);
  return json_response(out, 202);
}

void Service::worker_loop() {
  for (;;) {
    std::string id;
    {
      std::unique_lock lock(queue_mutex_);
      queue_cv_.wait(lock, [this] { return shutting_down_ || !queue_.empty(); });
      if (shutting_down_) return;
      id = queue_.front();
      queue_.pop_front();
      busy_ = true;
    }
    std::shared_ptr<RunEntry> entry;
    {
      std::lock_guard lock(runs_mutex_);
      entry = runs_.at(id);
    }
    agent::TrainingCallbacks cb;
    cb.stop_requested = [&] { return entry->cancel.load(); };
    cb.on_episode = [&](const agent::EpisodeMetrics& m) {
      auto line = io::metrics_to_json(m).dump();
      std::lock_guard lock(entry->mutex);
      entry->metrics.push_back(std::move(line));
      entry->handle = entry->writer->handle();
    };
    cb.on_snapshot = [&](const agent::NetworkBundle& b, const agent::EpisodeMetrics& m) {
      auto snap = std::make_shared<const Snapshot>(Snapshot{lean_copy(b), m.episode});
      std::lock_guard lock(entry->mutex);
      entry->last = std::move(snap);
    };
    cb.on_best = [&](const agent::DesignRecord& d, const agent::NetworkBundle& b) {
      auto snap = std::make_shared<const Snapshot>(Snapshot{lean_copy(b), d.episode});
      std::lock_guard lock(entry->mutex);
      entry->best = std::move(snap);
    };
    {
      std::lock_guard lock(entry->mutex);
      entry->handle.status = store::RunStatus::Running;
    }
    try {
      store::train_run(*entry->setup, *entry->writer, cb);
    } catch (const std::exception&) {
      // The writer has already journaled the failure.
    }
    {
      std::lock_guard lock(entry->mutex);
      entry->handle = entry->writer->handle();
    }
    {
      std::lock_guard lock(queue_mutex_);
      busy_ = false;
    }
    queue_cv_.notify_all();
  }
}

std::shared_ptr<Service::RunEntry> Service::find_run(const std::string& id) {
  std::lock_guard lock(runs_mutex_);
  const auto it = runs_.find(id);
  if (it != runs_.end()) return it->second;
  // A run created by another process (e.g. the CLI) after startup.
  if (auto h = store_.load(id)) {
    auto entry = std::make_shared<RunEntry>();
    entry->handle = *h;
    runs_[id] = entry;
    return entry;
  }
  throw NotFound("unknown run '" + id + "'");
}

ApiResponse Service::list_runs() {
  json list = json::array();
  std::vector<std::shared_ptr<RunEntry>> entries;
  {
    std::lock_guard lock(runs_mutex_);
    for (auto& [id, e] : runs_) entries.push_back(e);
  }
  for (auto& e : entries) {
    std::lock_guard lock(e->mutex);
    list.push_back(e->handle.to_json());
  }
  return json_response({{"runs", list}});
}

ApiResponse Service::get_run(const std::string& id) {
  auto e = find_run(id);
  json out;
  {
    std::lock_guard lock(e->mutex);
    out = e->handle.to_json();
  }
  const auto cfg = store_.run_dir(id) / "config.json";
  if (fs::exists(cfg)) out["config"] = io::read_json_file(cfg);
  return json_response(out);
}

ApiResponse Service::run_metrics(const std::string& id, long after) {
  auto e = find_run(id);
  std::vector<std::string> lines;
  std::string status;
  {
    std::lock_guard lock(e->mutex);
    if (!e->metrics_loaded) {
      for (const auto& rec : store::read_metrics(e->handle.dir)) e->metrics.push_back(rec.dump());
      e->metrics_loaded = e->handle.status == store::RunStatus::Finished || e->handle.status == store::RunStatus::Failed;
    }
    const auto start = static_cast<std::size_t>(std::max(0L, after + 1));
    for (std::size_t i = start; i < e->metrics.size(); ++i) lines.push_back(e->metrics[i]);
    status = store::to_string(e->handle.status);
    if (!e->metrics_loaded) e->metrics.clear();
  }
  std::string body = R"({"run_id":)" + json(id).dump() + R"(,"status":)" + json(status).dump() + R"(,"after":)" +
                     std::to_string(after) + R"(,"records":[)";
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (i) body += ',';
    body += lines[i];
  }
  body += "]}";
  return {200, std::move(body), "application/json", {}};
}

ApiResponse Service::run_best(const std::string& id) {
  auto e = find_run(id);
  fs::path dir;
  {
    std::lock_guard lock(e->mutex);
    dir = e->handle.dir.empty() ? store_.run_dir(id) : e->handle.dir;
  }
  const auto file = dir / "best_design.json";
  if (!fs::exists(file)) throw NotFound("run '" + id + "' has no best design yet");
  return json_response(io::read_json_file(file));
}

std::shared_ptr<const Service::Snapshot> Service::snapshot_for(RunEntry& e, const std::string& which) {
  if (which != "last" && which != "best") throw InvalidInputError("checkpoint must be 'last' or 'best'");
  std::lock_guard lock(e.mutex);
  if (!e.setup) e.setup = std::make_shared<const store::LoadedRun>(store::load_run(e.handle.dir));
  auto& slot = which == "best" ? e.best : e.last;
  if (!slot) {
    const auto dir = e.handle.dir / ("checkpoint_" + which);
    if (!fs::exists(dir / "q_net")) throw NotFound("run '" + e.handle.run_id + "' has no " + which + " checkpoint yet");
    long step = -1;
    nn::load_checkpoint(dir / "q_net", &step);
    slot = std::make_shared<const Snapshot>(Snapshot{store::load_bundle(dir, e.setup->task), step});
  }
  return slot;
}

ApiResponse Service::what_if(const json& body) {
  const auto id = body.at("run_id").get<std::string>();
  auto e = find_run(id);
  const auto snap = snapshot_for(*e, body.value("checkpoint", std::string("last")));
  std::shared_ptr<const store::LoadedRun> setup;
  {
    std::lock_guard lock(e->mutex);
    setup = e->setup;
  }
  const auto& task = setup->task;
  const double gamma = setup->hyper.gamma;

  if (body.value("table", false)) {
    const auto base = analysis::greedy_rollout(snap->bundle, task, setup->catalog, setup->reward, gamma);
    const auto table = analysis::what_if_table(snap->bundle, task, setup->catalog, setup->reward, gamma,
                                               body.value("include_terminate", false));
    json records = json::array();
    for (const auto& r : table) records.push_back(io::what_if_to_json(r));
    return json_response({{"run_id", id},
                          {"episode", snap->episode},
                          {"material_ids", task.material_ids},
                          {"greedy", {{"stack", io::stack_to_json(base.stack)},
                                      {"returns", base.trace.returns},
                                      {"q", base.q},
                                      {"proposals_nm", base.proposals},
                                      {"reward", base.evaluation.reward}}},
                          {"records", records}});
  }

  const int layer = body.at("layer").get<int>();
  if (layer < 1 || layer > task.layer_budget) {
    throw InvalidInputError("layer must lie in [1, " + std::to_string(task.layer_budget) + "]");
  }
  env::Action action = env::Action::terminate();
  if (!body.value("terminate", false)) {
    const int material = body.at("material").get<int>();
    task.material_slot(material);
    double thickness = 0.0;
    if (body.contains("thickness_nm") || body.contains("thickness")) {
      thickness = body.contains("thickness_nm") ? body.at("thickness_nm").get<double>() : body.at("thickness").get<double>();
    } else {
      const auto base = analysis::greedy_rollout(snap->bundle, task, setup->catalog, setup->reward, gamma);
      if (static_cast<std::size_t>(layer) > base.proposals.size()) {
        throw InvalidInputError("the greedy design terminates before layer " + std::to_string(layer));
      }
      thickness = base.proposals[static_cast<std::size_t>(layer - 1)][task.material_slot(material)];
    }
    action = env::Action::place(material, thickness);
  }
  const auto rec = analysis::what_if(snap->bundle, task, setup->catalog, setup->reward, gamma, layer - 1, action);
  const auto rollout = analysis::greedy_rollout(snap->bundle, task, setup->catalog, setup->reward, gamma,
                                                analysis::Substitution{layer - 1, action});
  json out = io::what_if_to_json(rec);
  out["run_id"] = id;
  out["episode"] = snap->episode;
  out["design"] = io::stack_to_json(rollout.stack);
  out["returns"] = rollout.trace.returns;
  out["reward"] = rollout.evaluation.reward;
  return json_response(out);
}

ApiResponse Service::q_values(const json& body) {
  const auto id = body.at("run_id").get<std::string>();
  auto e = find_run(id);
  const auto snap = snapshot_for(*e, body.value("checkpoint", std::string("last")));
  std::shared_ptr<const store::LoadedRun> setup;
  {
    std::lock_guard lock(e->mutex);
    setup = e->setup;
  }
  std::vector<double> state;
  if (body.contains("state")) {
    state = body.at("state").get<std::vector<double>>();
  } else if (body.contains("stack")) {
    state = encode_stack_state(io::stack_from_json(body.at("stack")), setup->task, setup->catalog);
  } else {
    state = env::reset(setup->task).encode();
  }
  if (static_cast<int>(state.size()) != snap->bundle.state_size()) {
    throw InvalidInputError("state must have " + std::to_string(snap->bundle.state_size()) + " entries");
  }
  const auto proposals = agent::actor_thicknesses(snap->bundle, state);
  const auto q = agent::q_values(snap->bundle, state, proposals);
  return json_response({{"run_id", id},
                        {"episode", snap->episode},
                        {"state", state},
                        {"material_ids", setup->task.material_ids},
                        {"q", q},
                        {"thicknesses_nm", proposals},
                        {"greedy_slot", agent::greedy_slot(q)}});
}

}  // namespace optistack::service
