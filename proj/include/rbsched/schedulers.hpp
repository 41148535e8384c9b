#pragma once

#include <algorithm>
#include <array>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "rbsched/random.hpp"
#include "rbsched/sim.hpp"

namespace rbsched {

// Index order is the action space of the selector network.
enum class SchedulerKind : int { MT = 0, MMF = 1, DS = 2, EV_PRIORITY = 3 };

inline constexpr int kNumSchedulers = 4;
inline constexpr std::array<SchedulerKind, kNumSchedulers> kAllSchedulers{
    SchedulerKind::MT, SchedulerKind::MMF, SchedulerKind::DS, SchedulerKind::EV_PRIORITY};

inline std::string_view scheduler_name(SchedulerKind k) {
  switch (k) {
    case SchedulerKind::MT: return "MT";
    case SchedulerKind::MMF: return "MMF";
    case SchedulerKind::DS: return "DS";
    case SchedulerKind::EV_PRIORITY: return "EVP";
  }
  return "?";
}

inline std::optional<SchedulerKind> scheduler_from_name(std::string_view name) {
  std::string lower(name);
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (lower == "mt") return SchedulerKind::MT;
  if (lower == "mmf") return SchedulerKind::MMF;
  if (lower == "ds") return SchedulerKind::DS;
  if (lower == "evp" || lower == "ev" || lower == "ev_priority") return SchedulerKind::EV_PRIORITY;
  return std::nullopt;
}

struct DsWeights {
  double channel = 1.0;  // w1
  double urgency = 1.0;  // w2

  friend bool operator==(const DsWeights&, const DsWeights&) = default;
};

struct SchedulerOptions {
  DsWeights ds;
  // Hand post-cap leftovers of the max-min-fair scheduler to users with unmet demand.
  bool mmf_redistribute = false;
};

namespace detail {

// Per-user view of the queue: jobs sorted by ascending time-to-timeout, then job id.
struct UserJobs {
  std::vector<const Job*> jobs;
  int demand = 0;
  int min_timeout = 0;
};

inline std::vector<UserJobs> group_by_user(const JobQueue& queue, int num_users) {
  std::vector<UserJobs> out(num_users);
  for (const auto& j : queue) out[j.owner].jobs.push_back(&j);
  for (auto& u : out) {
    std::sort(u.jobs.begin(), u.jobs.end(), [](const Job* a, const Job* b) {
      if (a->time_to_timeout != b->time_to_timeout) return a->time_to_timeout < b->time_to_timeout;
      return a->job_id < b->job_id;
    });
    for (const Job* j : u.jobs) u.demand += j->remaining_size;
    if (!u.jobs.empty()) u.min_timeout = u.jobs.front()->time_to_timeout;
  }
  return out;
}

inline int unmet(const Job& job, const Allocation& a) { return job.remaining_size - a.granted(job.job_id); }

// Grants up to `budget` blocks to one user's jobs in order. Returns blocks used.
inline int serve_user(const UserJobs& user, int budget, Allocation& a) {
  int used = 0;
  for (const Job* j : user.jobs) {
    if (used == budget) break;
    const int g = std::min(unmet(*j, a), budget - used);
    a.grant(j->job_id, g);
    used += g;
  }
  return used;
}

// Like serve_user, but a job on its last step whose unmet size exceeds the
// remaining budget is skipped and the budget passes to the next job.
inline int serve_user_skipping(const UserJobs& user, int budget, Allocation& a) {
  int used = 0;
  for (const Job* j : user.jobs) {
    const int left = budget - used;
    if (left == 0) break;
    const int need = unmet(*j, a);
    if (need == 0) continue;
    if (j->time_to_timeout == 1 && need > left) continue;
    const int g = std::min(need, left);
    a.grant(j->job_id, g);
    used += g;
  }
  return used;
}

inline std::vector<int> requesting_users(const std::vector<UserJobs>& grouped) {
  std::vector<int> r;
  for (int u = 0; u < static_cast<int>(grouped.size()); ++u)
    if (grouped[u].demand > 0) r.push_back(u);
  return r;
}

// Stable descending sort by key, lower user index wins ties.
template <typename Key>
void sort_by_descending(std::vector<int>& users, Key key) {
  std::stable_sort(users.begin(), users.end(), [&](int a, int b) {
    const double ka = key(a), kb = key(b);
    if (ka != kb) return ka > kb;
    return a < b;
  });
}

}  // namespace detail

// Maximum throughput: users by descending gain, each served as fully as possible.
inline Allocation schedule_mt(const JobQueue& queue, const std::vector<UserState>& users,
                              int num_resources) {
  Allocation a;
  auto grouped = detail::group_by_user(queue, static_cast<int>(users.size()));
  auto order = detail::requesting_users(grouped);
  detail::sort_by_descending(order, [&](int u) { return users[u].gain; });
  int left = num_resources;
  for (int u : order) {
    if (left == 0) break;
    left -= detail::serve_user(grouped[u], left, a);
  }
  return a;
}

// Max-min fair: at most floor(N / U_req) blocks per requesting user, visited by
// descending gain / queued blocks.
inline Allocation schedule_mmf(const JobQueue& queue, const std::vector<UserState>& users,
                               int num_resources, bool redistribute = false) {
  Allocation a;
  auto grouped = detail::group_by_user(queue, static_cast<int>(users.size()));
  auto order = detail::requesting_users(grouped);
  if (order.empty()) return a;
  const int cap = num_resources / static_cast<int>(order.size());
  detail::sort_by_descending(order, [&](int u) { return users[u].gain / grouped[u].demand; });
  int left = num_resources;
  for (int u : order) {
    if (left == 0) break;
    left -= detail::serve_user(grouped[u], std::min(cap, left), a);
  }
  if (redistribute) {
    for (int u : order) {
      if (left == 0) break;
      left -= detail::serve_user(grouped[u], left, a);
    }
  }
  return a;
}

// Combined delay-sensitive priority for every user (0 for users without queued jobs).
inline std::vector<double> ds_priorities(const JobQueue& queue, const std::vector<UserState>& users,
                                         const DsWeights& w) {
  const int n = static_cast<int>(users.size());
  auto grouped = detail::group_by_user(queue, n);
  auto req = detail::requesting_users(grouped);
  std::vector<double> p(n, 0.0);
  if (req.empty()) return p;
  const double uniform = 1.0 / static_cast<double>(req.size());

  double sum_rate = 0.0, sum_gain = 0.0;
  for (const auto& u : users) {
    sum_rate += packet_rate(u);
    sum_gain += u.gain;
  }
  // Channel priority: relative packet rate times relative gain, renormalized over
  // the requesting users so both priority vectors sum to one.
  std::vector<double> pc(n, 0.0);
  double sum_pc = 0.0;
  if (sum_rate > 0.0 && sum_gain > 0.0) {
    for (int u : req) {
      pc[u] = (packet_rate(users[u]) / sum_rate) * (users[u].gain / sum_gain);
      sum_pc += pc[u];
    }
  }
  for (int u : req) pc[u] = sum_pc > 0.0 ? pc[u] / sum_pc : uniform;

  std::vector<double> pl(n, 0.0);
  double sum_pl = 0.0;
  for (int u : req) {
    pl[u] = static_cast<double>(users[u].lifetime_timeouts) / grouped[u].min_timeout;
    sum_pl += pl[u];
  }
  for (int u : req) pl[u] = sum_pl > 0.0 ? pl[u] / sum_pl : uniform;

  const double wsum = w.channel + w.urgency;
  double total = 0.0;
  for (int u : req) {
    p[u] = (w.channel * pc[u] + w.urgency * pl[u]) / wsum;
    total += p[u];
  }
  for (int u : req) p[u] = total > 0.0 ? p[u] / total : uniform;
  return p;
}

// Integer block shares from a priority vector: floor, then leftovers one each by
// descending priority.
inline std::vector<int> ds_shares(const std::vector<double>& priorities,
                                  const std::vector<int>& order, int num_resources) {
  std::vector<int> share(priorities.size(), 0);
  if (order.empty()) return share;
  int assigned = 0;
  for (int u : order) {
    share[u] = static_cast<int>(std::floor(priorities[u] * num_resources));
    assigned += share[u];
  }
  for (std::size_t i = 0; assigned < num_resources; i = (i + 1) % order.size()) {
    ++share[order[i]];
    ++assigned;
  }
  return share;
}

// Delay sensitive: priority-weighted shares; a last-step job that does not fit the
// unspent allotment is skipped and its blocks pass to the next job or user.
// Blocks still unspent after the priority pass are offered once more in the same order.
inline Allocation schedule_ds(const JobQueue& queue, const std::vector<UserState>& users,
                              int num_resources, const DsWeights& weights = {}) {
  if (!(weights.channel >= 0.0 && weights.urgency >= 0.0 && weights.channel + weights.urgency > 0.0))
    throw std::invalid_argument("ds weights must be non-negative with a positive sum");
  Allocation a;
  const int n = static_cast<int>(users.size());
  auto grouped = detail::group_by_user(queue, n);
  auto order = detail::requesting_users(grouped);
  if (order.empty()) return a;
  const auto p = ds_priorities(queue, users, weights);
  detail::sort_by_descending(order, [&](int u) { return p[u]; });
  const auto share = ds_shares(p, order, num_resources);

  int carry = 0;
  for (int u : order) {
    const int budget = share[u] + carry;
    carry = budget - detail::serve_user_skipping(grouped[u], budget, a);
  }
  for (int u : order) {
    if (carry == 0) break;
    carry -= detail::serve_user_skipping(grouped[u], carry, a);
  }
  return a;
}

// Emergency vehicles first, fully; the rest one block at a time to a uniformly
// random user with unmet demand.
inline Allocation schedule_ev(const JobQueue& queue, const std::vector<UserState>& users,
                              int num_resources, Rng& rng) {
  Allocation a;
  auto grouped = detail::group_by_user(queue, static_cast<int>(users.size()));
  int left = num_resources;
  for (const auto& u : users) {
    if (left == 0) break;
    if (u.is_ev()) left -= detail::serve_user(grouped[u.user_id], left, a);
  }
  std::vector<int> remaining(users.size(), 0);
  std::vector<int> open;
  for (int u = 0; u < static_cast<int>(users.size()); ++u) {
    for (const Job* j : grouped[u].jobs) remaining[u] += detail::unmet(*j, a);
    if (remaining[u] > 0) open.push_back(u);
  }
  while (left > 0 && !open.empty()) {
    const auto pick = std::uniform_int_distribution<std::size_t>(0, open.size() - 1)(rng);
    const int u = open[pick];
    detail::serve_user(grouped[u], 1, a);
    --left;
    if (--remaining[u] == 0) open.erase(open.begin() + static_cast<std::ptrdiff_t>(pick));
  }
  return a;
}

inline Allocation run_scheduler(SchedulerKind kind, const JobQueue& queue,
                                const std::vector<UserState>& users, int num_resources, Rng& rng,
                                const SchedulerOptions& options = {}) {
  switch (kind) {
    case SchedulerKind::MT: return schedule_mt(queue, users, num_resources);
    case SchedulerKind::MMF:
      return schedule_mmf(queue, users, num_resources, options.mmf_redistribute);
    case SchedulerKind::DS: return schedule_ds(queue, users, num_resources, options.ds);
    case SchedulerKind::EV_PRIORITY: return schedule_ev(queue, users, num_resources, rng);
  }
  throw std::invalid_argument("unknown scheduler kind");
}

}  // namespace rbsched
