#pragma once

#include <chrono>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "rbsched/agent.hpp"
#include "rbsched/config.hpp"
#include "rbsched/qnet.hpp"
#include "rbsched/replay.hpp"
#include "rbsched/schedulers.hpp"
#include "rbsched/sim.hpp"

namespace rbsched {

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
  double seconds = 0.0;
};

struct SelftestOptions {
  // Test hook: corrupts the analytic gradient so the gradient check must fail.
  bool inject_gradient_bug = false;
  std::uint64_t seed = 12345;
};

namespace selftest {

// Random instance for scheduler properties: small user counts, mixed profiles,
// queues with partially served jobs and assorted deadlines.
struct Instance {
  std::vector<UserState> users;
  JobQueue queue;
  int num_resources = 16;
};

inline Instance random_instance(Rng& rng) {
  Instance in;
  const int users = std::uniform_int_distribution<int>(1, 8)(rng);
  in.num_resources = std::uniform_int_distribution<int>(1, 24)(rng);
  const auto mix = profiles::default_mix();
  std::uint64_t id = 0;
  for (int u = 0; u < users; ++u) {
    UserState s;
    s.user_id = u;
    s.profile = mix[std::uniform_int_distribution<std::size_t>(0, mix.size() - 1)(rng)];
    s.gain = uniform01(rng) < 0.1 ? 0.0 : draw_fading_power(rng);
    s.lifetime_requested = std::uniform_int_distribution<int>(0, 200)(rng);
    s.lifetime_scheduled =
        std::uniform_int_distribution<std::int64_t>(0, s.lifetime_requested)(rng);
    s.lifetime_timeouts = s.lifetime_requested - s.lifetime_scheduled > 0
                              ? std::uniform_int_distribution<std::int64_t>(
                                    0, s.lifetime_requested - s.lifetime_scheduled)(rng)
                              : 0;
    const int jobs = std::uniform_int_distribution<int>(0, 3)(rng);
    for (int j = 0; j < jobs; ++j) {
      const int size = std::uniform_int_distribution<int>(1, s.profile.max_job_size)(rng);
      const int remaining = std::uniform_int_distribution<int>(1, size)(rng);
      const int t = std::uniform_int_distribution<int>(1, s.profile.initial_timeout)(rng);
      in.queue.push_back({id++, u, remaining, size, t});
    }
    in.users.push_back(s);
  }
  std::shuffle(in.queue.begin(), in.queue.end(), rng);
  return in;
}

inline int demand(const JobQueue& q) {
  int d = 0;
  for (const auto& j : q) d += j.remaining_size;
  return d;
}

inline int granted_to_user(const Instance& in, const Allocation& a, int user) {
  int g = 0;
  for (const auto& j : in.queue)
    if (j.owner == user) g += a.granted(j.job_id);
  return g;
}

template <typename Fn>
CheckResult timed(const std::string& name, Fn&& fn) {
  const auto t0 = std::chrono::steady_clock::now();
  CheckResult r{name, false, {}, 0.0};
  try {
    fn(r);
  } catch (const std::exception& e) {
    r.passed = false;
    r.detail = std::string("exception: ") + e.what();
  }
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

// Central differences on the batch loss; coordinates whose perturbation flips a
// ReLU are skipped since the loss is not differentiable across the kink there.
inline double gradient_check(int trials, std::uint64_t seed, bool inject_bug, int* skipped = nullptr) {
  using Net = DuelingQNet<double>;
  auto rng = make_rng(seed, Stream::Init, 99);
  double worst = 0.0;
  int skip = 0;
  for (int trial = 0; trial < trials; ++trial) {
    QNetShape shape{std::uniform_int_distribution<int>(2, 10)(rng), {}, 0, 4};
    const int depth = std::uniform_int_distribution<int>(1, 3)(rng);
    for (int i = 0; i < depth; ++i) shape.shared.push_back(std::uniform_int_distribution<int>(2, 6)(rng));
    shape.branch = std::uniform_int_distribution<int>(2, 5)(rng);
    Net net(shape, rng());
    for (auto& b : net.parameters()) b += 0.1 * (uniform01(rng) - 0.5);
    const int batch = 3;
    Net::Matrix states(shape.input, batch);
    for (Eigen::Index i = 0; i < states.size(); ++i) states.data()[i] = 2.0 * uniform01(rng) - 1.0;
    std::vector<int> actions(batch);
    std::vector<double> targets(batch);
    for (int b = 0; b < batch; ++b) {
      actions[b] = std::uniform_int_distribution<int>(0, 3)(rng);
      targets[b] = 2.0 * uniform01(rng) - 1.0;
    }
    std::vector<double> grad(net.num_parameters());
    net.gradient(states, actions, targets, grad);
    if (inject_bug) grad.back() *= 1.5;

    auto loss_and_mask = [&](std::vector<bool>& mask) {
      Net::Trace t;
      net.forward(states, t);
      mask.clear();
      for (const auto& m : t.shared)
        for (Eigen::Index i = 0; i < m.size(); ++i) mask.push_back(m.data()[i] > 0);
      for (const auto* m : {&t.value_hidden, &t.advantage_hidden})
        for (Eigen::Index i = 0; i < m->size(); ++i) mask.push_back(m->data()[i] > 0);
      double l = 0.0;
      for (int b = 0; b < batch; ++b) {
        const double d = targets[b] - t.q(actions[b], b);
        l += d * d;
      }
      return l / batch;
    };
    const double h = 1e-4;
    std::vector<bool> mp, mm;
    auto params = net.parameters();
    for (std::size_t i = 0; i < params.size(); ++i) {
      const double saved = params[i];
      params[i] = saved + h;
      const double lp = loss_and_mask(mp);
      params[i] = saved - h;
      const double lm = loss_and_mask(mm);
      params[i] = saved;
      if (mp != mm) {
        ++skip;
        continue;
      }
      const double numeric = (lp - lm) / (2 * h);
      const double denom = std::max({std::abs(numeric), std::abs(grad[i]), 1e-6});
      worst = std::max(worst, std::abs(numeric - grad[i]) / denom);
    }
  }
  if (skipped) *skipped = skip;
  return worst;
}

}  // namespace selftest

// Fast invariant suite behind the `selftest` command.
inline std::vector<CheckResult> run_selftest(const SelftestOptions& opt = {}) {
  using namespace selftest;
  std::vector<CheckResult> out;

  out.push_back(timed("gradient_vs_finite_differences", [&](CheckResult& r) {
    int skipped = 0;
    const double worst = gradient_check(100, opt.seed, opt.inject_gradient_bug, &skipped);
    r.passed = worst < 1e-4;
    r.detail = "max relative error " + format_double(worst) + " (" + std::to_string(skipped) +
               " kink coordinates skipped)";
  }));

  out.push_back(timed("dueling_aggregation", [&](CheckResult& r) {
    DuelingQNet<double> net({7, {6, 5}, 4, 4}, opt.seed);
    DuelingQNet<double>::Trace t;
    auto rng = make_rng(opt.seed, Stream::Init, 3);
    DuelingQNet<double>::Matrix s(7, 32);
    for (Eigen::Index i = 0; i < s.size(); ++i) s.data()[i] = 4.0 * uniform01(rng) - 2.0;
    net.forward(s, t);
    double worst = 0.0;
    for (Eigen::Index b = 0; b < s.cols(); ++b)
      worst = std::max(worst, std::abs(t.q.col(b).mean() - t.value(0, b)));
    r.passed = worst < 1e-12;
    r.detail = "max |mean_k q - V| = " + format_double(worst);
  }));

  out.push_back(timed("replay_sampling_law", [&](CheckResult& r) {
    PrioritizedReplay store(4);
    store.push({});
    store.push({});
    store.update_priority(0, 1.0 - PrioritizedReplay::kPriorityFloor);
    store.update_priority(1, 3.0 - PrioritizedReplay::kPriorityFloor);
    auto rng = make_rng(opt.seed, Stream::Replay);
    const int n = 100000;
    int second = 0;
    for (const auto& s : store.sample(n, rng)) second += s.index == 1;
    const double f = double(second) / n;
    const double sigma = std::sqrt(0.75 * 0.25 / n);
    r.passed = std::abs(f - 0.75) <= 3 * sigma;
    r.detail = "frequency " + format_double(f) + ", 3 sigma = " + format_double(3 * sigma);
  }));

  out.push_back(timed("sum_tree_consistency", [&](CheckResult& r) {
    PrioritizedReplay store(257);
    auto rng = make_rng(opt.seed, Stream::Replay, 1);
    double worst = 0.0;
    for (int op = 0; op < 10000; ++op) {
      if (store.empty() || uniform01(rng) < 0.5) {
        store.push({});
      } else {
        const auto i = std::uniform_int_distribution<std::size_t>(0, store.size() - 1)(rng);
        store.update_priority(i, 10.0 * (uniform01(rng) - 0.5));
      }
      double sum = 0.0;
      for (std::size_t i = 0; i < store.size(); ++i) sum += store.priority(i);
      worst = std::max(worst, std::abs(sum - store.total_priority()));
    }
    r.passed = worst <= 1e-9;
    r.detail = "max |sum - tree total| = " + format_double(worst);
  }));

  out.push_back(timed("scheduler_properties", [&](CheckResult& r) {
    auto rng = make_rng(opt.seed, Stream::Scheduler, 7);
    int failures = 0;
    std::string first;
    auto fail = [&](const std::string& what) {
      if (failures++ == 0) first = what;
    };
    for (int trial = 0; trial < 2000; ++trial) {
      const auto in = random_instance(rng);
      const int total = demand(in.queue);
      int ev_demand = 0, requesting = 0;
      std::vector<int> per_user(in.users.size(), 0);
      for (const auto& j : in.queue) {
        per_user[j.owner] += j.remaining_size;
        if (in.users[j.owner].is_ev()) ev_demand += j.remaining_size;
      }
      for (int d : per_user) requesting += d > 0;
      for (auto kind : kAllSchedulers) {
        const auto a = run_scheduler(kind, in.queue, in.users, in.num_resources, rng);
        try {
          check_allocation(in.queue, a, in.num_resources);
        } catch (const AllocationError& e) {
          fail(std::string(scheduler_name(kind)) + ": " + e.what());
        }
        if (kind != SchedulerKind::MMF && total <= in.num_resources && a.total() != total)
          fail(std::string(scheduler_name(kind)) + ": demand fits but not fully served");
        if (kind == SchedulerKind::MMF && requesting > 0) {
          const int cap = in.num_resources / requesting;
          for (std::size_t u = 0; u < in.users.size(); ++u)
            if (granted_to_user(in, a, static_cast<int>(u)) > cap) fail("MMF: cap exceeded");
        }
        if (kind == SchedulerKind::EV_PRIORITY && ev_demand <= in.num_resources) {
          for (std::size_t u = 0; u < in.users.size(); ++u)
            if (in.users[u].is_ev() && granted_to_user(in, a, static_cast<int>(u)) != per_user[u])
              fail("EVP: emergency vehicle not fully served");
        }
      }
    }
    r.passed = failures == 0;
    r.detail = failures == 0 ? "2000 random instances" : std::to_string(failures) + " failures, first: " + first;
  }));

  out.push_back(timed("epsilon_schedule", [&](CheckResult& r) {
    AgentConfig c;
    bool ok = epsilon_at(0, c) == 0.99 && epsilon_at(8000, c) == 0.0 && epsilon_at(9999, c) == 0.0;
    for (int i = 0; i < 10; ++i) {
      const int e = i * 800;
      ok = ok && std::abs(epsilon_at(e, c) - 0.99 * (1.0 - e / 8000.0)) < 1e-12;
    }
    r.passed = ok;
    r.detail = "anchors 0.99 at 0, 0 at 8000 of 10000";
  }));

  out.push_back(timed("rayleigh_power_mean", [&](CheckResult& r) {
    auto rng = make_rng(opt.seed, Stream::Environment);
    const int n = 200000;
    double sum = 0.0;
    for (int i = 0; i < n; ++i) sum += draw_fading_power(rng);
    const double mean = sum / n;
    r.passed = std::abs(mean - 1.0) < 0.01;
    r.detail = "mean " + format_double(mean);
  }));

  return out;
}

}  // namespace rbsched
