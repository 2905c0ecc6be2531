#include "optistack/cli.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <cmath>
#include <iostream>

#include "optistack/errors.hpp"
#include "optistack/run_store.hpp"
#include "optistack/service.hpp"

namespace optistack::cli {

namespace fs = std::filesystem;
using io::json;

namespace {

struct Common {
  std::string task = "task2";
  std::string catalog;
};

optics::MaterialCatalog load_catalog(const std::string& path) {
  if (path.empty()) return optics::default_catalog();
  return io::catalog_from_json(io::read_json_file(path));
}

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

struct RewardChoice {
  std::optional<double> alpha;
  bool calibrate = false;
  int samples = 1000;
};

objective::RewardParams resolve_reward(const RewardChoice& c, const objective::TaskSpec& task,
                                       const optics::MaterialCatalog& catalog, std::uint64_t seed) {
  if (c.alpha) {
    if (!(*c.alpha > 0.0)) throw InvalidInputError("--alpha must be positive");
    objective::RewardParams p;
    p.alpha = *c.alpha;
    p.eta = -std::log(p.beta_low / p.beta_high) / p.alpha;
    return p;
  }
  return objective::calibrate_alpha(task, catalog, c.samples, objective::kDefaultBetaLow,
                                    objective::kDefaultBetaHigh, seed);
}

fs::path new_run_dir(const std::string& data_dir) {
  store::RunStore store(data_dir.empty() ? store::default_data_dir() : fs::path(data_dir));
  return store.run_dir(store.allocate_id());
}

void add_reward_options(CLI::App* cmd, RewardChoice& c) {
  auto* a = cmd->add_option("--alpha", c.alpha, "Fixed reward sharpness alpha");
  auto* k = cmd->add_flag("--calibrate", c.calibrate, "Calibrate alpha from random designs (default)");
  a->excludes(k);
  cmd->add_option("--samples", c.samples, "Random designs used for calibration")->check(CLI::PositiveNumber);
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Reinforcement-learning workbench for multilayer optical coatings", "optistack"};
  app.require_subcommand(1);

  Common common;
  auto add_common = [&](CLI::App* cmd, bool task_required) {
    auto* t = cmd->add_option("--task", common.task, "Built-in task id or task JSON file");
    if (task_required) t->required();
    cmd->add_option("--catalog", common.catalog, "Material catalog JSON (default: built-in)");
  };

  // simulate
  std::string stack_path, out_path;
  bool as_json = false;
  auto* simulate = app.add_subcommand("simulate", "Reflectivity of a stack over a task grid");
  add_common(simulate, true);
  simulate->add_option("--stack", stack_path, "Stack JSON file")->required();
  simulate->add_option("--out", out_path, "Write CSV here instead of stdout");
  simulate->add_flag("--json", as_json, "Print objective and reward as JSON instead of CSV");

  // dbr
  double n1 = 1.457, n2 = 2.327, band_edge = 550.0;
  int periods = 4;
  std::string dbr_stack_out;
  auto* dbr = app.add_subcommand("dbr", "Quarter-wave Bragg reflector for a band edge");
  dbr->add_option("--n1", n1, "Low refractive index")->check(CLI::PositiveNumber);
  dbr->add_option("--n2", n2, "High refractive index")->check(CLI::PositiveNumber);
  dbr->add_option("--band-edge", band_edge, "Upper band edge in nm")->check(CLI::PositiveNumber);
  dbr->add_option("--periods", periods, "Number of low/high pairs")->check(CLI::PositiveNumber);
  dbr->add_flag("--json", as_json, "Print JSON");
  dbr->add_option("--stack-out", dbr_stack_out, "Write the stack (catalog materials with these indexes) here");
  dbr->add_option("--catalog", common.catalog, "Material catalog JSON (default: built-in)");

  // calibrate-alpha
  int samples = 1000;
  std::uint64_t seed = 0;
  double beta_low = objective::kDefaultBetaLow, beta_high = objective::kDefaultBetaHigh;
  auto* calibrate = app.add_subcommand("calibrate-alpha", "Estimate eta from random designs and derive alpha");
  add_common(calibrate, true);
  calibrate->add_option("--samples", samples, "Number of random designs")->check(CLI::PositiveNumber);
  calibrate->add_option("--seed", seed, "Random seed");
  calibrate->add_option("--beta-low", beta_low, "Reward at F = -eta");
  calibrate->add_option("--beta-high", beta_high, "Reward at F = 0");

  // train
  int episodes = 10000;
  std::optional<double> mu;
  std::string run_out, hyper_path, data_dir;
  std::optional<int> updates;
  RewardChoice reward_choice;
  auto* train = app.add_subcommand("train", "Train the parameterized-action agent");
  add_common(train, true);
  train->add_option("--episodes", episodes, "Training episodes")->check(CLI::NonNegativeNumber);
  train->add_option("--seed", seed, "Random seed");
  train->add_option("--mu", mu, "Thickness penalty weight (overrides the task)");
  train->add_option("--out", run_out, "Run directory (default: a new run in the data directory)");
  train->add_option("--data-dir", data_dir, "Run store root (default: $OPTISTACK_DATA_DIR or ./optistack_data)");
  train->add_option("--config", hyper_path, "Hyperparameter JSON");
  train->add_option("--updates-per-episode", updates, "Gradient updates per episode");
  add_reward_options(train, reward_choice);

  // baseline-dqn
  baseline::BaselineConfig bcfg;
  auto* base = app.add_subcommand("baseline-dqn", "Discrete-thickness DQN baseline with a fixed stack depth");
  add_common(base, true);
  base->add_option("--episodes", bcfg.episodes, "Episodes")->check(CLI::NonNegativeNumber);
  base->add_option("--steps", bcfg.steps_per_episode, "Steps per episode")->check(CLI::PositiveNumber);
  base->add_option("--seed", seed, "Random seed");
  base->add_option("--mu", mu, "Thickness penalty weight (overrides the task)");
  base->add_option("--out", run_out, "Run directory (default: a new run in the data directory)");
  base->add_option("--data-dir", data_dir, "Run store root (default: $OPTISTACK_DATA_DIR or ./optistack_data)");
  add_reward_options(base, reward_choice);

  // whatif
  std::string run_dir, checkpoint = "last", csv_path;
  std::optional<int> layer, material;
  std::optional<double> thickness;
  bool terminate = false, table = false, with_terminate = false;
  auto* whatif = app.add_subcommand("whatif", "Replace one greedy action and report estimate vs realized return");
  whatif->add_option("--run", run_dir, "Run directory")->required();
  whatif->add_option("--layer", layer, "One-based layer index")->check(CLI::PositiveNumber);
  whatif->add_option("--material", material, "Material id");
  whatif->add_option("--thickness", thickness, "Thickness in nm (default: the actor's proposal)");
  whatif->add_flag("--terminate", terminate, "Terminate at the layer instead");
  whatif->add_flag("--table", table, "Every material at every greedy layer");
  whatif->add_flag("--include-terminate", with_terminate, "Add TERMINATE rows to --table");
  whatif->add_option("--checkpoint", checkpoint, "last or best")->check(CLI::IsMember({"last", "best"}));
  whatif->add_option("--csv", csv_path, "Write the table as CSV here");

  // analyze
  auto* analyze = app.add_subcommand("analyze", "Summarize a run directory");
  analyze->add_option("--run", run_dir, "Run directory")->required();

  // serve
  std::string bind = "127.0.0.1:8080", static_dir;
  auto* serve = app.add_subcommand("serve", "HTTP API for simulation, training and what-if queries");
  serve->add_option("--bind", bind, "host:port");
  serve->add_option("--data-dir", data_dir, "Run store root (default: $OPTISTACK_DATA_DIR or ./optistack_data)");
  serve->add_option("--static", static_dir, "Directory of UI assets served at /");
  serve->add_option("--catalog", common.catalog, "Material catalog JSON (default: built-in)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    const auto catalog = load_catalog(common.catalog);

    if (*simulate) {
      const auto task = io::load_task(common.task);
      const auto sj = io::read_json_file(stack_path);
      auto stack = io::stack_from_json(sj);
      if (!sj.is_object() || !sj.contains("substrate_index")) stack.substrate_index = task.substrate_index;
      const auto refl = optics::reflectivity_vector(stack, catalog, task.grid);
      if (as_json) {
        const auto ev = env::evaluate_stack(stack, task, catalog, objective::RewardParams{});
        out << json{{"objective", ev.objective},
                    {"reward", ev.reward},
                    {"alpha", objective::RewardParams{}.alpha},
                    {"reflectivity", refl}}
                   .dump(2)
            << '\n';
      } else {
        const auto csv = io::reflectivity_csv(task.grid, refl, task.target);
        if (out_path.empty()) {
          out << csv;
        } else {
          io::write_text_file(out_path, csv);
        }
      }
      return kExitOk;
    }

    if (*dbr) {
      const auto d = optics::design_dbr(n1, n2, band_edge, periods);
      if (as_json) {
        out << io::dbr_to_json(d).dump(2) << '\n';
      } else {
        out << "lambda0=" << fixed(d.center_nm, 2) << " nm\n"
            << "t1=" << fixed(d.t_low_nm, 2) << " nm\n"
            << "t2=" << fixed(d.t_high_nm, 2) << " nm\n"
            << "total=" << fixed(d.total_thickness(), 2) << " nm\n"
            << "stopband_width=" << fixed(d.stopband_width_nm, 2) << " nm\n";
      }
      if (!dbr_stack_out.empty()) {
        std::optional<int> low, high;
        for (const auto& m : catalog.materials) {
          if (std::abs(catalog.reference_index(m.id) - n1) < 1e-12) low = m.id;
          if (std::abs(catalog.reference_index(m.id) - n2) < 1e-12) high = m.id;
        }
        if (!low || !high) throw InvalidInputError("no catalog materials with indexes n1 and n2 for --stack-out");
        io::write_json_file(dbr_stack_out, io::stack_to_json(d.as_stack(*low, *high)));
      }
      return kExitOk;
    }

    if (*calibrate) {
      const auto task = io::load_task(common.task);
      const auto p = objective::calibrate_alpha(task, catalog, samples, beta_low, beta_high, seed);
      auto j = io::reward_params_to_json(p);
      j["samples"] = samples;
      j["seed"] = seed;
      j["task"] = task.id;
      out << j.dump(2) << '\n';
      return kExitOk;
    }

    if (*train) {
      store::LoadedRun setup;
      setup.catalog = catalog;
      setup.task = io::load_task(common.task);
      if (mu) setup.task.mu = *mu;
      setup.task.validate(catalog);
      if (!hyper_path.empty()) setup.hyper = io::hyper_from_json(io::read_json_file(hyper_path));
      setup.hyper.episodes = episodes;
      setup.hyper.seed = seed;
      if (updates) setup.hyper.updates_per_episode = *updates;
      setup.hyper.validate();
      setup.reward = resolve_reward(reward_choice, setup.task, catalog, seed);
      if (run_out.empty()) run_out = new_run_dir(data_dir).string();
      store::RunHandle h;
      h.run_id = fs::path(run_out).filename().string();
      h.task_id = setup.task.id;
      h.episodes_total = episodes;
      store::RunWriter writer(run_out, h);
      const auto result = store::train_run(setup, writer);
      out << json{{"run_dir", run_out},
                  {"episodes", result.metrics.size()},
                  {"simulator_calls", result.simulator_calls},
                  {"alpha", setup.reward.alpha},
                  {"best", io::design_to_json(result.best)}}
                 .dump(2)
          << '\n';
      return kExitOk;
    }

    if (*base) {
      auto task = io::load_task(common.task);
      if (mu) task.mu = *mu;
      task.validate(catalog);
      bcfg.seed = seed;
      const auto reward = resolve_reward(reward_choice, task, catalog, seed);
      if (run_out.empty()) run_out = new_run_dir(data_dir).string();
      store::RunHandle h;
      h.run_id = fs::path(run_out).filename().string();
      h.task_id = task.id;
      h.algo = "dqn_discrete";
      h.episodes_total = bcfg.episodes;
      store::RunWriter writer(run_out, h);
      const auto result = store::baseline_run(task, catalog, reward, bcfg, writer);
      out << json{{"run_dir", run_out},
                  {"simulator_calls", result.simulator_calls},
                  {"alpha", reward.alpha},
                  {"best_reward", result.best_reward},
                  {"best_objective", result.best_objective},
                  {"best_stack", io::stack_to_json(result.best.to_stack(task))}}
                 .dump(2)
          << '\n';
      return kExitOk;
    }

    if (*whatif) {
      const auto setup = store::load_run(run_dir);
      const auto bundle = store::load_bundle(fs::path(run_dir) / ("checkpoint_" + checkpoint), setup.task);
      const double gamma = setup.hyper.gamma;
      if (table) {
        const auto records = analysis::what_if_table(bundle, setup.task, setup.catalog, setup.reward, gamma, with_terminate);
        const auto csv = analysis::what_if_csv(records);
        if (csv_path.empty()) {
          out << csv;
        } else {
          io::write_text_file(csv_path, csv);
        }
        return kExitOk;
      }
      if (!layer) throw InvalidInputError("--layer is required unless --table is given");
      env::Action action = env::Action::terminate();
      if (!terminate) {
        if (!material) throw InvalidInputError("--material is required unless --terminate is given");
        double t = 0.0;
        if (thickness) {
          t = *thickness;
        } else {
          const auto base_roll = analysis::greedy_rollout(bundle, setup.task, setup.catalog, setup.reward, gamma);
          if (static_cast<std::size_t>(*layer) > base_roll.proposals.size()) {
            throw InvalidInputError("the greedy design terminates before layer " + std::to_string(*layer));
          }
          t = base_roll.proposals[static_cast<std::size_t>(*layer - 1)][setup.task.material_slot(*material)];
        }
        action = env::Action::place(*material, t);
      }
      const auto rec = analysis::what_if(bundle, setup.task, setup.catalog, setup.reward, gamma, *layer - 1, action);
      out << io::what_if_to_json(rec).dump(2) << '\n';
      return kExitOk;
    }

    if (*analyze) {
      const auto metrics = store::read_metrics(run_dir);
      const auto cfg = io::read_json_file(fs::path(run_dir) / "config.json");
      json summary{{"run_dir", run_dir}, {"algo", cfg.value("algo", "mpdqn")}, {"episodes", metrics.size()}};
      if (!metrics.empty()) {
        const auto& last = metrics.back();
        summary["best_reward"] = last.at("best_reward");
        summary["simulator_calls"] = last.at("simulator_calls");
        for (const char* key : {"running_reward", "ratio_n_mean", "ratio_n_std", "ratio_p_mean", "ratio_p_std",
                                "ratio_both_mean", "ratio_both_std"}) {
          if (last.contains(key)) summary[key] = last.at(key);
        }
        for (auto it = metrics.rbegin(); it != metrics.rend(); ++it) {
          if (it->contains("loss_mean") && !it->at("loss_mean").is_null()) {
            summary["loss_mean"] = it->at("loss_mean");
            summary["loss_std"] = it->at("loss_std");
            summary["loss_episode"] = it->at("episode");
            break;
          }
        }
      }
      const auto best = fs::path(run_dir) / "best_design.json";
      if (fs::exists(best)) {
        const auto b = io::read_json_file(best);
        summary["best_design"] = {{"episode", b.value("episode", -1L)},
                                  {"stack", b.at("stack")},
                                  {"objective", b.at("objective")},
                                  {"reward", b.at("reward")}};
      }
      out << summary.dump(2) << '\n';
      return kExitOk;
    }

    if (*serve) {
      service::ServiceConfig sc;
      std::tie(sc.host, sc.port) = service::parse_bind(bind);
      sc.data_dir = data_dir.empty() ? store::default_data_dir() : fs::path(data_dir);
      if (!static_dir.empty()) sc.static_dir = static_dir;
      sc.catalog = catalog;
      service::Service svc(sc);
      const int port = svc.bind();
      err << "listening on " << sc.host << ":" << port << std::endl;
      svc.listen();
      return kExitOk;
    }
  } catch (const InvalidInputError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitUsage;
}

}  // namespace optistack::cli
