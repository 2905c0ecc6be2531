// Acceptance suite: one PASS/FAIL line per criterion. Arguments select a
// subset of criteria by number; with none, all run. Exit status is nonzero
// if any selected criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "optistack/analysis.hpp"
#include "optistack/baseline_dqn.hpp"
#include "optistack/trainer.hpp"
#include "oracles.hpp"

using namespace optistack;

namespace {

// Tolerances and budgets.
constexpr double kOpticsRelTol = 1e-9;
constexpr double kIdentityTol = 1e-12;
constexpr double kOpticsSeconds = 1.0;
constexpr double kDbrTolNm = 0.01;
constexpr double kAlphaTol = 0.005;
constexpr double kRewardEndpointTol = 1e-4;
constexpr double kGradientRelTol = 1e-4;
constexpr double kGradientSeconds = 10.0;
constexpr double kEpsilonTol = 1e-4;
constexpr double kUnitTol = 1e-12;
constexpr long kTrainingEpisodes = 10000;
constexpr double kSecondsPerSeed = 30.0 * 60.0;
constexpr double kDbrFraction = 0.8;
constexpr long kConstraintEpisodes = 2000;
constexpr int kBaselineRuns = 10;
constexpr long kAnalysisEpisodes = 500;
constexpr double kWelfordTol = 1e-10;
constexpr double kLossStatsRelTol = 1e-9;

const std::vector<std::uint64_t> kTrainingSeeds = {1, 2, 3};
const std::vector<std::uint64_t> kConstraintSeeds = {1, 2, 3};

struct Outcome {
  bool pass = true;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

double rel_err(double a, double b) { return std::abs(a - b) / std::max(std::abs(b), 1e-300); }

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const auto n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

const optics::MaterialCatalog& catalog() {
  static const auto c = optics::default_catalog();
  return c;
}

objective::RewardParams reward_params() { return objective::reward_params_from_eta(0.25); }

// Shared by criteria 7, 9 and 10 so task-2 training runs once.
struct TrainingRuns {
  std::vector<agent::RunResult> runs;
  std::vector<double> seconds;
  double median_best = 0.0;
};

const TrainingRuns& task2_training() {
  static const TrainingRuns cached = [] {
    TrainingRuns t;
    const auto task = objective::builtin_task("task2");
    std::vector<double> best;
    for (auto seed : kTrainingSeeds) {
      agent::Hyperparameters h;
      h.episodes = kTrainingEpisodes;
      h.seed = seed;
      const auto t0 = Clock::now();
      t.runs.push_back(agent::run_training(task, catalog(), reward_params(), h));
      t.seconds.push_back(seconds_since(t0));
      best.push_back(t.runs.back().best.reward);
      std::fprintf(stderr, "  task2 seed %llu: best %.4f in %.0f s\n", static_cast<unsigned long long>(seed),
                   best.back(), t.seconds.back());
    }
    t.median_best = median(best);
    return t;
  }();
  return cached;
}

double dbr_reward_task2() {
  const auto task = objective::builtin_task("task2");
  const auto dbr = optics::design_dbr(1.457, 2.327, 550.0, 4);
  auto stack = dbr.as_stack(1, 4);
  stack.substrate_index = task.substrate_index;
  auto zero_mu = task;
  zero_mu.mu = 0.0;
  return env::evaluate_stack(stack, zero_mu, catalog(), reward_params()).reward;
}

Outcome optics_oracles() {
  const auto t0 = Clock::now();
  Outcome o;
  using optics::Polarization;
  const optics::Complex air{1.0, 0.0};
  double worst_analytic = 0.0, worst_identity = 0.0;

  // Bare interface at normal incidence: ((n0 - ns) / (n0 + ns))^2.
  const double fresnel = std::pow((1.0 - 1.5) / (1.0 + 1.5), 2);
  for (auto pol : {Polarization::S, Polarization::P}) {
    const double r = optics::reflectance({}, air, {1.5, 0.0}, 550.0, 0.0, pol);
    worst_analytic = std::max(worst_analytic, rel_err(r, fresnel));
  }
  const bool fresnel_matches_quote = std::abs(fresnel - 0.04) < 1e-15;

  // Quarter-wave layer at its design wavelength: ((n0 ns - n1^2) / (n0 ns + n1^2))^2.
  const double n1 = 1.38, ns = 1.52, wl = 600.0;
  const double qw = std::pow((ns - n1 * n1) / (ns + n1 * n1), 2);
  const std::vector<optics::Film> coat{{{n1, 0.0}, wl / (4.0 * n1)}};
  for (auto pol : {Polarization::S, Polarization::P}) {
    const double r = optics::reflectance(coat, air, {ns, 0.0}, wl, 0.0, pol);
    worst_analytic = std::max(worst_analytic, rel_err(r, qw));
  }
  const bool qw_matches_quote = std::abs(qw - 0.012601) < 5e-7;

  // Zero-thickness insertion and splitting a layer in two.
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> nre(1.3, 2.5), nim(0.0, 0.05), th(5.0, 150.0), ang(0.0, 70.0);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<optics::Film> films;
    for (int i = 0; i < 5; ++i) films.push_back({{nre(rng), nim(rng)}, th(rng)});
    const optics::Complex sub{nre(rng), 0.0};
    const double a = ang(rng), w = 400.0 + 3.0 * trial;
    auto with_zero = films;
    with_zero.insert(with_zero.begin() + 2, optics::Film{{nre(rng), 0.0}, 0.0});
    auto split = films;
    const double cut = 0.3 * split[3].thickness_nm;
    split[3].thickness_nm -= cut;
    split.insert(split.begin() + 4, optics::Film{split[3].index, cut});
    for (auto pol : {Polarization::S, Polarization::P}) {
      const double base = optics::reflectance(films, air, sub, w, a, pol);
      worst_identity = std::max(worst_identity, std::abs(optics::reflectance(with_zero, air, sub, w, a, pol) - base));
      worst_identity = std::max(worst_identity, std::abs(optics::reflectance(split, air, sub, w, a, pol) - base));
    }
  }
  const double secs = seconds_since(t0);
  o.pass = worst_analytic <= kOpticsRelTol && worst_identity <= kIdentityTol && secs < kOpticsSeconds &&
           fresnel_matches_quote && qw_matches_quote;
  o.detail = "R(1.0|1.5)=" + fmt("%.6f", fresnel) + " R(quarter-wave 1.38 on 1.52)=" + fmt("%.6f", qw) +
             "; max rel err " + fmt("%.2e", worst_analytic) + ", identity max abs err " + fmt("%.2e", worst_identity) +
             ", " + fmt("%.3f", secs) + " s";
  return o;
}

Outcome dbr_reproduction() {
  const auto d = optics::design_dbr(1.457, 2.327, 550.0, 4);
  const double quoted[] = {424.59, 72.85, 45.62, 473.88};
  const double got[] = {d.center_nm, d.t_low_nm, d.t_high_nm, d.total_thickness()};
  Outcome o;
  for (int i = 0; i < 4; ++i) o.pass = o.pass && std::abs(got[i] - quoted[i]) <= kDbrTolNm;
  o.detail = "lambda0=" + fmt("%.3f", got[0]) + " t1=" + fmt("%.3f", got[1]) + " t2=" + fmt("%.3f", got[2]) +
             " total=" + fmt("%.3f", got[3]) + " nm";
  return o;
}

Outcome reward_calibration() {
  const auto p = objective::reward_params_from_eta(0.25, 0.01, 1.0);
  const double r0 = objective::reward(0.0, p);
  const double r_eta = objective::reward(-0.25, p);
  Outcome o;
  o.pass = std::abs(p.alpha - 18.42) <= kAlphaTol && std::abs(r0 - 1.0) <= kRewardEndpointTol &&
           std::abs(r_eta - 0.01) <= kRewardEndpointTol;
  o.detail = "alpha=" + fmt("%.4f", p.alpha) + " r(0)=" + fmt("%.6f", r0) + " r(-eta)=" + fmt("%.6f", r_eta);
  return o;
}

Outcome state_space_counts() {
  struct Case {
    int L, T, N;
    const char* quoted;
  };
  Outcome o;
  for (const Case c : {Case{8, 1500, 4, "2.24e29"}, Case{34, 1500, 2, "1.94e108"}}) {
    const auto big = env::state_space_size(c.L, c.T, c.N);
    const auto text = env::format_scientific(big);
    // Closed-form geometric series in long double as an independent check.
    const long double q = static_cast<long double>(c.T) * (c.N - 1);
    const long double closed = static_cast<long double>(c.N) * c.T * (std::pow(q, c.L) - 1.0L) / (q - 1.0L);
    const long double as_ld = static_cast<long double>(big.convert_to<long double>());
    const bool agree = std::abs(as_ld - closed) / closed < 1e-12L;
    o.pass = o.pass && text == c.quoted && agree;
    if (!o.detail.empty()) o.detail += ", ";
    o.detail += "L=" + std::to_string(c.L) + ": " + text + (agree ? "" : " (closed form disagrees)");
  }
  return o;
}

Outcome gradient_integrity() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(77);
  std::uniform_int_distribution<int> width(2, 24), io_width(1, 6);
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const int in = io_width(rng), out = io_width(rng);
    const auto head = trial % 2 ? nn::OutputHead::Sigmoid : nn::OutputHead::Identity;
    nn::Mlp net({in, width(rng), width(rng), out}, head, 500 + static_cast<std::uint64_t>(trial));
    const Eigen::MatrixXd x = Eigen::MatrixXd::Random(in, 4);
    const Eigen::MatrixXd w = Eigen::MatrixXd::Random(out, 4);
    auto loss = [&](const nn::Mlp& m, const Eigen::MatrixXd& xx) { return m.forward(xx).cwiseProduct(w).sum(); };
    nn::ForwardCache cache;
    net.forward(x, &cache);
    const auto g = net.backward(cache, w);
    std::vector<double> analytic;
    for (std::size_t l = 0; l < g.weights.size(); ++l) {
      for (Eigen::Index r = 0; r < g.weights[l].rows(); ++r) {
        for (Eigen::Index c = 0; c < g.weights[l].cols(); ++c) analytic.push_back(g.weights[l](r, c));
      }
      for (Eigen::Index r = 0; r < g.bias[l].size(); ++r) analytic.push_back(g.bias[l](r));
    }
    const auto params = net.flatten();
    nn::Mlp probe = net;
    for (std::size_t p = 0; p < params.size(); ++p) {
      const double numeric = oracle::central_difference(
          [&](double v) {
            auto q = params;
            q[p] = v;
            probe.assign(q);
            return loss(probe, x);
          },
          params[p], 1e-5);
      if (std::abs(numeric) < 1e-7 && std::abs(analytic[p]) < 1e-7) continue;
      worst = std::max(worst, std::abs(numeric - analytic[p]) / std::max(std::abs(numeric), std::abs(analytic[p])));
    }
  }
  const double secs = seconds_since(t0);
  Outcome o;
  o.pass = worst < kGradientRelTol && secs < kGradientSeconds;
  o.detail = "max rel err " + fmt("%.2e", worst) + " over 20 networks, " + fmt("%.2f", secs) + " s";
  return o;
}

Outcome unit_identities() {
  Outcome o;
  env::EpisodeTrace trace;
  trace.steps.resize(3);
  trace.steps[2].terminal = true;
  const auto ret = env::finalize_episode(trace, 1.0, 0.95);
  const bool backfill = ret.size() == 3 && std::abs(ret[0] - 0.9025) <= kUnitTol &&
                        std::abs(ret[1] - 0.95) <= kUnitTol && ret[2] == 1.0;

  nn::Mlp src({3, 5, 2}, nn::OutputHead::Identity, 1), dst({3, 5, 2}, nn::OutputHead::Identity, 2);
  auto keep = dst;
  nn::polyak_update(keep, src, 0.0);
  auto take = dst;
  nn::polyak_update(take, src, 1.0);
  const bool polyak = keep.flatten() == dst.flatten() && take.flatten() == src.flatten();

  agent::Memory memory(10, 1);
  memory.push({});
  memory.push({});
  memory[0].last_loss = 0.0;
  memory[1].last_loss = std::log(2.0);
  const auto p = memory.probabilities();
  const bool softmax = std::abs(p[0] - 1.0 / 3.0) <= kUnitTol && std::abs(p[1] - 2.0 / 3.0) <= kUnitTol;

  const double eps = agent::epsilon_schedule(100000, 8);
  const double eps_oracle = 1.0 - std::pow(0.3, 1.0 / 8.0);
  const bool epsilon = std::abs(eps - 0.1397) <= kEpsilonTol && std::abs(eps - eps_oracle) <= kUnitTol;

  o.pass = backfill && polyak && softmax && epsilon;
  o.detail = "backfill [" + fmt("%.4f", ret[0]) + ", " + fmt("%.4f", ret[1]) + ", " + fmt("%.4f", ret[2]) +
             "] polyak " + (polyak ? "ok" : "BAD") + " softmax {" + fmt("%.6f", p[0]) + ", " + fmt("%.6f", p[1]) +
             "} eps_final(L=8)=" + fmt("%.5f", eps);
  return o;
}

Outcome desk_scale_training() {
  const auto& t = task2_training();
  const double dbr = dbr_reward_task2();
  Outcome o;
  bool calls_ok = true, time_ok = true;
  std::string per_seed;
  for (std::size_t i = 0; i < t.runs.size(); ++i) {
    calls_ok = calls_ok && t.runs[i].simulator_calls == kTrainingEpisodes;
    time_ok = time_ok && t.seconds[i] <= kSecondsPerSeed;
    if (i) per_seed += ", ";
    per_seed += fmt("%.4f", t.runs[i].best.reward) + " in " + fmt("%.0f s", t.seconds[i]) + " with " +
                std::to_string(t.runs[i].simulator_calls) + " calls";
  }
  o.pass = calls_ok && time_ok && t.median_best >= kDbrFraction * dbr;
  o.detail = "median best " + fmt("%.4f", t.median_best) + " vs 0.8 x DBR " + fmt("%.4f", kDbrFraction * dbr) +
             " (DBR " + fmt("%.4f", dbr) + "); seeds: " + per_seed + "; soft target median >= DBR: " +
             (t.median_best >= dbr ? "met" : "not met");
  return o;
}

double mean_top_thickness(const agent::RunResult& r) {
  double sum = 0.0;
  for (const auto& d : r.top_designs) sum += d.stack.total_thickness();
  return r.top_designs.empty() ? 0.0 : sum / static_cast<double>(r.top_designs.size());
}

Outcome constraint_effect() {
  auto task = objective::builtin_task("task1");
  double sum_free = 0.0, sum_penalized = 0.0;
  std::string per_seed;
  bool full_lists = true;
  for (auto seed : kConstraintSeeds) {
    agent::Hyperparameters h;
    h.episodes = kConstraintEpisodes;
    h.seed = seed;
    h.loss_stats_every = 0;
    double pair[2];
    for (int i = 0; i < 2; ++i) {
      task.mu = i == 0 ? 0.0 : 0.1;
      const auto r = agent::run_training(task, catalog(), reward_params(), h);
      full_lists = full_lists && r.top_designs.size() == 10;
      pair[i] = mean_top_thickness(r);
    }
    sum_free += pair[0];
    sum_penalized += pair[1];
    if (!per_seed.empty()) per_seed += ", ";
    per_seed += "seed " + std::to_string(seed) + ": " + fmt("%.1f", pair[1]) + " vs " + fmt("%.1f", pair[0]);
  }
  const double n = static_cast<double>(kConstraintSeeds.size());
  Outcome o;
  o.pass = full_lists && sum_penalized / n < sum_free / n;
  o.detail = "top-10 mean thickness mu=0.1: " + fmt("%.1f", sum_penalized / n) + " nm, mu=0: " +
             fmt("%.1f", sum_free / n) + " nm (" + per_seed + ")";
  return o;
}

Outcome baseline_comparison() {
  const auto task = objective::builtin_task("task2");
  double best_of = -1.0;
  bool calls_ok = true;
  for (int i = 0; i < kBaselineRuns; ++i) {
    baseline::BaselineConfig c;
    c.seed = static_cast<std::uint64_t>(i);
    const auto t0 = Clock::now();
    const auto r = baseline::run_discrete_dqn(task, catalog(), reward_params(), c);
    calls_ok = calls_ok && r.simulator_calls == 200L * 250L;
    best_of = std::max(best_of, r.best_reward);
    std::fprintf(stderr, "  baseline seed %d: best %.4f in %.0f s\n", i, r.best_reward, seconds_since(t0));
  }
  const double mp = task2_training().median_best;
  Outcome o;
  o.pass = calls_ok && mp >= best_of;
  o.detail = "MP-DQN median " + fmt("%.4f", mp) + " vs discrete best-of-10 " + fmt("%.4f", best_of) +
             " (ratio " + fmt("%.2f", mp / best_of) + "); soft target ratio >= 1.2: " +
             (mp >= 1.2 * best_of ? "met" : "not met");
  return o;
}

Outcome analysis_apparatus() {
  const auto task = objective::builtin_task("task2");
  const auto rp = reward_params();
  agent::Hyperparameters h;
  h.episodes = kAnalysisEpisodes;
  h.seed = 4;
  const auto run = agent::run_training(task, catalog(), rp, h);

  bool ratios = run.metrics.size() == static_cast<std::size_t>(kAnalysisEpisodes);
  for (const auto& m : run.metrics) {
    ratios = ratios && m.convexity.ratio_both <= std::min(m.convexity.ratio_n, m.convexity.ratio_p);
  }

  bool identity = true;
  for (const auto* bundle : {&run.final_bundle, &task2_training().runs.front().final_bundle}) {
    const auto base = analysis::greedy_rollout(*bundle, task, catalog(), rp, h.gamma);
    for (std::size_t i = 0; i < base.trace.steps.size(); ++i) {
      const auto rec =
          analysis::what_if(*bundle, task, catalog(), rp, h.gamma, static_cast<int>(i), base.trace.steps[i].action);
      identity = identity && rec.realized_return == base.trace.returns[i];
    }
  }

  std::mt19937_64 rng(5);
  std::normal_distribution<double> gauss(3.0, 2.0);
  analysis::WelfordStats w;
  std::vector<double> xs;
  for (int i = 0; i < 10000; ++i) {
    xs.push_back(gauss(rng));
    w.update(xs.back());
  }
  double mean = 0.0;
  for (double x : xs) mean += x;
  mean /= static_cast<double>(xs.size());
  double ss = 0.0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  const double var = ss / static_cast<double>(xs.size() - 1);
  const bool welford = std::abs(w.mean() - mean) <= kWelfordTol && std::abs(w.variance() - var) <= kWelfordTol;

  // Replay loss statistics against a per-transition recomputation.
  const auto& bundle = run.final_bundle;
  agent::Memory memory(5000, 1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 2000; ++i) {
    agent::Transition t;
    t.state.resize(16);
    t.next_state.resize(16);
    for (auto& v : t.state) v = u(rng);
    for (auto& v : t.next_state) v = u(rng);
    t.slot = i % 5;
    t.thickness_nm = 1.0 + 149.0 * u(rng);
    t.reward = u(rng);
    t.terminal = i % 3 == 0;
    memory.push(t);
  }
  const auto stats = analysis::replay_loss_stats(bundle, memory, h);
  std::vector<double> losses;
  for (const auto& t : memory.items()) {
    const auto proposals = agent::actor_thicknesses(bundle, t.next_state, true);
    const auto q_next = agent::q_values(bundle, t.next_state, proposals, true);
    const double best = *std::max_element(q_next.begin(), q_next.end());
    const double y = t.reward + (t.terminal || !h.bootstrap ? 0.0 : h.gamma * best);
    const double q = agent::q_value_of(bundle, t.state, t.slot, t.thickness_nm);
    losses.push_back((y - q) * (y - q));
  }
  double lm = 0.0;
  for (double l : losses) lm += l;
  lm /= static_cast<double>(losses.size());
  double lss = 0.0;
  for (double l : losses) lss += (l - lm) * (l - lm);
  const double lsd = std::sqrt(lss / static_cast<double>(losses.size() - 1));
  const bool loss_ok = stats && stats->count == losses.size() && rel_err(stats->mean, lm) <= kLossStatsRelTol &&
                       rel_err(stats->stddev, lsd) <= kLossStatsRelTol;

  Outcome o;
  o.pass = ratios && identity && welford && loss_ok;
  o.detail = std::string("what-if identity ") + (identity ? "exact" : "BROKEN") + ", ratio_both bound " +
             (ratios ? "holds" : "VIOLATED") + " over " + std::to_string(run.metrics.size()) + " episodes, welford " +
             (welford ? "ok" : "BAD") + ", loss stats " +
             (stats ? fmt("%.6g", stats->mean) + " vs " + fmt("%.6g", lm) : std::string("missing"));
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
      {"optics oracle suite", optics_oracles},
      {"DBR reproduction", dbr_reproduction},
      {"reward calibration", reward_calibration},
      {"state-space counts", state_space_counts},
      {"gradient integrity", gradient_integrity},
      {"unit identities", unit_identities},
      {"desk-scale training (task 2, 3 seeds x 10000 episodes)", desk_scale_training},
      {"thickness constraint effect (task 1)", constraint_effect},
      {"baseline comparison (10 discrete DQN runs)", baseline_comparison},
      {"analysis apparatus", analysis_apparatus},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));

  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int number = static_cast<int>(i + 1);
    if (!selected.empty() && !selected.count(number)) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += !o.pass;
    std::printf("%s %2d %s: %s\n", o.pass ? "PASS" : "FAIL", number, criteria[i].first, o.detail.c_str());
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
