// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fail.
//
//   acceptance [--only P1,P2,...] [--out-dir DIR]
//
// P6 to P9 train full-size networks and take roughly twenty minutes on one core.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "oracles.hpp"
#include "rbsched/agent.hpp"
#include "rbsched/config.hpp"
#include "rbsched/experiment.hpp"
#include "rbsched/metrics.hpp"
#include "rbsched/replay.hpp"
#include "rbsched/schedulers.hpp"
#include "rbsched/sim.hpp"

using namespace rbsched;
namespace fs = std::filesystem;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// ---------------------------------------------------------------------------

Verdict p1_closed_forms() {
  SimConfig cfg;
  StepOutcome out;
  out.gains = {1.0};
  out.scheduled_users = {0};
  const double c = capacity_metric(out, cfg.tx_snr_linear());
  const double expected = 3.0422638485390396;  // ln(1 + 10^1.3)
  const double pl[] = {path_loss(0.5), path_loss(1.0), path_loss(2.0), path_loss(4.0)};
  const bool ok = std::abs(c - expected) <= 1e-9 && pl[0] == 1.0 && pl[1] == 1.0 && pl[2] == 0.5 &&
                  pl[3] == 0.25;
  return {ok, fmt("capacity %.12f (|err| %.1e); path loss %g %g %g %g", c, std::abs(c - expected), pl[0],
                  pl[1], pl[2], pl[3])};
}

Verdict p2_gradients() {
  Rng rng(20240601);
  double worst = 0.0;
  long checked = 0, kinks = 0;
  const int nets = 120;
  for (int trial = 0; trial < nets; ++trial) {
    QNetShape s;
    s.input = 10;
    s.shared = {6, 5};
    s.branch = 4;
    s.actions = 4;
    DuelingQNet<double> net(s, 500 + trial);
    std::uniform_real_distribution<double> u(-0.8, 0.8);
    for (auto& p : net.parameters()) p = u(rng);
    const int batch = 1 + trial % 4;
    DuelingQNet<double>::Matrix states(10, batch);
    std::vector<std::vector<double>> cols(batch);
    std::vector<int> actions(batch);
    std::vector<double> targets(batch);
    for (int b = 0; b < batch; ++b) {
      for (int i = 0; i < 10; ++i) cols[b].push_back(states(i, b) = u(rng));
      actions[b] = static_cast<int>(rng() % 4);
      targets[b] = std::normal_distribution<double>(0.0, 2.0)(rng);
    }
    std::vector<double> grad(net.num_parameters());
    net.gradient(states, actions, targets, grad);
    const auto fd = oracle::finite_difference(net, cols, actions, targets, 1e-4);
    for (std::size_t i = 0; i < grad.size(); ++i) {
      if (!fd.valid[i]) {
        ++kinks;
        continue;
      }
      if (std::abs(grad[i]) < 1e-7 && std::abs(fd.gradient[i]) < 1e-7) continue;
      worst = std::max(worst, oracle::relative_error(grad[i], fd.gradient[i]));
      ++checked;
    }
  }
  return {worst < 1e-4, fmt("%d networks, %ld coordinates, max relative error %.2e (%ld kink coordinates skipped)",
                            nets, checked, worst, kinks)};
}

Verdict p3_replay() {
  PrioritizedReplay r(2);
  r.push({});
  r.push({});
  r.update_priority(0, 1.0 - PrioritizedReplay::kPriorityFloor);
  r.update_priority(1, 3.0 - PrioritizedReplay::kPriorityFloor);
  Rng rng(3);
  const int n = 100000;
  int second = 0;
  for (const auto& s : r.sample(n, rng)) second += s.index == 1;
  const double freq = double(second) / n, sigma = std::sqrt(0.75 * 0.25 / n);
  const bool law = std::abs(freq - 0.75) <= 3 * sigma;

  const std::size_t cap = 1000;
  PrioritizedReplay store(cap);
  double worst = 0.0;
  for (int op = 0; op < 10000; ++op) {
    if (store.empty() || rng() % 2 == 0) store.push({});
    else store.update_priority(rng() % store.size(), std::normal_distribution<double>(0, 3)(rng));
    double sum = 0.0;
    for (std::size_t i = 0; i < store.size(); ++i) sum += store.priority(i);
    worst = std::max(worst, std::abs(sum - store.total_priority()));
  }
  return {law && worst <= 1e-9,
          fmt("frequency %.5f vs 0.75 +/- %.5f; sum drift %.2e over 1e4 ops", freq, 3 * sigma, worst)};
}

Verdict p4_schedulers() {
  Rng rng(44);
  Rng sched(45);
  const int instances = 10000;
  long violations = 0, full_checks = 0, ev_checks = 0;
  std::string first;
  auto fail = [&](const std::string& what) {
    if (first.empty()) first = what;
    ++violations;
  };
  for (int t = 0; t < instances; ++t) {
    const auto in = oracle::random_instance(rng);
    const int n = in.num_resources;
    int demand = 0, ev_demand = 0;
    std::set<int> req;
    for (const auto& j : in.queue) {
      demand += j.remaining_size;
      req.insert(j.owner);
      if (in.users[j.owner].is_ev()) ev_demand += j.remaining_size;
    }
    for (auto kind : kAllSchedulers) {
      for (bool redistribute : {false, true}) {
        if (redistribute && kind != SchedulerKind::MMF) continue;
        SchedulerOptions opt;
        opt.mmf_redistribute = redistribute;
        const auto a = run_scheduler(kind, in.queue, in.users, n, sched, opt);
        const std::string tag = std::string(scheduler_name(kind)) + (redistribute ? "+redistribute" : "");
        try {
          check_allocation(in.queue, a, n);
        } catch (const AllocationError& e) {
          fail(tag + ": " + e.what());
        }
        std::vector<int> per_user(in.users.size(), 0);
        for (const auto& j : in.queue) per_user[j.owner] += a.granted(j.job_id);
        if (kind == SchedulerKind::MMF && !redistribute && !req.empty())
          for (int g : per_user)
            if (g > n / static_cast<int>(req.size())) fail(tag + ": cap exceeded");
        if (kind == SchedulerKind::EV_PRIORITY && ev_demand <= n) {
          ++ev_checks;
          for (const auto& j : in.queue)
            if (in.users[j.owner].is_ev() && a.granted(j.job_id) != j.remaining_size)
              fail(tag + ": EV starved");
        }
        // Strict max-min fairness caps users even when blocks are left over.
        const bool full_service_applies = !(kind == SchedulerKind::MMF && !redistribute);
        if (demand <= n && full_service_applies) {
          ++full_checks;
          if (a.total() != demand) fail(tag + ": demand not fully served");
        }
      }
    }
  }
  return {violations == 0,
          fmt("%d instances, %ld violations; full service checked %ld times (MT, DS, EVP, MMF with "
              "redistribution), EV service %ld times%s%s",
              instances, violations, full_checks, ev_checks, first.empty() ? "" : "; first: ",
              first.c_str())};
}

Verdict p5_epsilon() {
  AgentConfig c;
  c.episodes = 10000;
  bool ok = epsilon_at(0, c) == 0.99 && epsilon_at(8000, c) == 0.0;
  double worst = 0.0;
  for (int i = 0; i < 10; ++i) {
    const int e = i * 800;
    worst = std::max(worst, std::abs(epsilon_at(e, c) - 0.99 * (1.0 - e / 8000.0)));
  }
  ok = ok && worst <= 1e-12;
  return {ok, fmt("eps(0) = %g, eps(8000) = %g, max deviation from the line %.1e at 10 points",
                  epsilon_at(0, c), epsilon_at(8000, c), worst)};
}

// ---------------------------------------------------------------------------
// Campaign criteria

ExperimentConfig campaign_config(std::uint64_t seed, const fs::path& dir, int train_episodes,
                                 int eval_episodes) {
  ExperimentConfig c;
  c.sim.seed = seed;
  c.agent.episodes = train_episodes;
  c.eval_episodes = eval_episodes;
  c.checkpoint_every = 0;
  c.out_dir = dir.string();
  return c;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

Verdict p6_determinism(const fs::path& root) {
  auto once = [&](const std::string& name) {
    const auto c = campaign_config(606, root / "p6" / name, 100, 100);
    const auto net = run_training(c);
    run_evaluation(c, &net);
    return slurp(fs::path(c.out_dir) / "eval.csv");
  };
  const auto a = once("run_a"), b = once("run_b");
  const bool ok = !a.empty() && a == b;
  return {ok, fmt("two 100-episode training + 100-episode evaluation runs with seed 606: eval.csv %zu vs %zu "
                  "bytes, %s",
                  a.size(), b.size(), ok ? "identical" : "DIFFERENT")};
}

struct SeedResult {
  std::uint64_t seed = 0;
  std::map<std::string, PolicyStats> stats;
  double seconds = 0.0;
};

std::vector<SeedResult> run_headline(const fs::path& root) {
  std::vector<SeedResult> results;
  for (std::uint64_t seed : {1, 2, 3}) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto c = campaign_config(seed, root / "headline" / ("seed" + std::to_string(seed)), 3000, 500);
    const auto net = run_training(c);
    const auto rows = run_evaluation(c, &net);
    SeedResult r;
    r.seed = seed;
    r.stats = policy_stats(rows);
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("  seed %llu (%.0f s):", static_cast<unsigned long long>(seed), r.seconds);
    for (const auto& [name, s] : r.stats)
      std::printf("  %s r=%.2f rL_ev=%.2f", name.c_str(), s.mean.total, s.mean.ev_timeouts);
    std::printf("\n");
    std::fflush(stdout);
    results.push_back(std::move(r));
  }
  return results;
}

Verdict p7_headline(const std::vector<SeedResult>& runs) {
  int wins = 0;
  std::string detail;
  for (const auto& r : runs) {
    std::string best_name;
    double best = -1e300;
    for (const auto& [name, s] : r.stats)
      if (name != kDqnPolicy && s.mean.total > best) {
        best = s.mean.total;
        best_name = name;
      }
    const double dqn = r.stats.at(kDqnPolicy).mean.total;
    wins += dqn > best;
    detail += fmt("%sseed %llu: DQN %.3f vs %s %.3f", detail.empty() ? "" : "; ",
                  static_cast<unsigned long long>(r.seed), dqn, best_name.c_str(), best);
  }
  return {wins >= 2, fmt("%d of %zu seeds beat the best baseline (", wins, runs.size()) + detail + ")"};
}

Verdict p8_ev_timeouts(const std::vector<SeedResult>& runs) {
  int wins = 0;
  std::string detail;
  for (const auto& r : runs) {
    const double dqn = r.stats.at(kDqnPolicy).mean.ev_timeouts;
    const double ds = r.stats.at("DS").mean.ev_timeouts;
    wins += dqn <= ds;
    detail += fmt("%sseed %llu: DQN %.3f vs DS %.3f", detail.empty() ? "" : "; ",
                  static_cast<unsigned long long>(r.seed), dqn, ds);
  }
  return {wins >= 2, fmt("%d of %zu seeds with DQN EV timeouts <= DS (", wins, runs.size()) + detail + ")"};
}

Verdict p9_selection(const std::vector<SeedResult>& runs, const fs::path& root) {
  bool ok = !runs.empty();
  std::string detail;
  for (const auto& r : runs) {
    // Read back what was written, not the in-memory numbers.
    const auto path = root / "headline" / ("seed" + std::to_string(r.seed)) / "eval_summary.json";
    const auto j = nlohmann::json::parse(slurp(path));
    const auto& rates = j["policies"][kDqnPolicy]["selection_rate"];
    double sum = 0.0;
    std::string parts;
    for (auto k : kAllSchedulers) {
      const std::string name(scheduler_name(k));
      if (!rates.contains(name)) ok = false;
      const double v = rates.value(name, -1.0);
      sum += v;
      parts += fmt(" %s %.3f", name.c_str(), v);
    }
    ok = ok && std::abs(sum - 1.0) <= 1e-9;
    detail += fmt("%sseed %llu:", detail.empty() ? "" : "; ", static_cast<unsigned long long>(r.seed)) + parts;
  }
  return {ok, detail};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  std::vector<std::string> only;
  std::string out_dir = "acceptance_out";
  app.add_option("--only", only, "Criteria to run, e.g. P1,P7")->delimiter(',');
  app.add_option("--out-dir", out_dir, "Directory for campaign artifacts");
  CLI11_PARSE(app, argc, argv);
  const std::set<std::string> selected(only.begin(), only.end());
  auto wanted = [&](const std::string& id) { return selected.empty() || selected.count(id) > 0; };

  const fs::path root(out_dir);
  int failed = 0;
  auto report = [&](const std::string& id, const std::string& title, const std::function<Verdict()>& fn) {
    if (!wanted(id)) return;
    const auto t0 = std::chrono::steady_clock::now();
    Verdict v;
    try {
      v = fn();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    failed += !v.pass;
    std::printf("%s %s %s [%.1fs]: %s\n", v.pass ? "PASS" : "FAIL", id.c_str(), title.c_str(), s,
                v.detail.c_str());
    std::fflush(stdout);
  };

  report("P1", "closed forms", p1_closed_forms);
  report("P2", "gradient vs finite differences", p2_gradients);
  report("P3", "replay sampling law", p3_replay);
  report("P4", "scheduler properties", p4_schedulers);
  report("P5", "epsilon schedule", p5_epsilon);
  report("P6", "determinism", [&] { return p6_determinism(root); });

  if (wanted("P7") || wanted("P8") || wanted("P9")) {
    std::vector<SeedResult> runs;
    std::string error;
    try {
      runs = run_headline(root);
    } catch (const std::exception& e) {
      error = e.what();
    }
    auto guarded = [&](auto fn) {
      return [&, fn] { return error.empty() ? fn() : Verdict{false, "campaign failed: " + error}; };
    };
    report("P7", "DQN beats best fixed scheduler", guarded([&] { return p7_headline(runs); }));
    report("P8", "EV timeouts not above DS", guarded([&] { return p8_ev_timeouts(runs); }));
    report("P9", "selection rates logged", guarded([&] { return p9_selection(runs, root); }));
  }
  std::printf("%s: %d criteria failed\n", failed ? "FAIL" : "PASS", failed);
  return failed ? 1 : 0;
}
