#pragma once

// Test-only reference implementations. None of these call into the code paths
// they are used to check.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "rbsched/qnet.hpp"
#include "rbsched/random.hpp"
#include "rbsched/sim.hpp"

namespace oracle {

using rbsched::DuelingQNet;
using rbsched::Job;
using rbsched::JobQueue;
using rbsched::Rng;
using rbsched::UserState;

// Dense layer evaluated with plain loops over the flat parameter array
// (weights column-major out x in, then bias).
inline std::vector<double> dense(const std::vector<double>& params, std::size_t w_off,
                                 std::size_t b_off, int in, int out, const std::vector<double>& x,
                                 bool relu, std::vector<bool>* mask = nullptr) {
  std::vector<double> y(out);
  for (int o = 0; o < out; ++o) {
    double acc = params[b_off + o];
    for (int i = 0; i < in; ++i) acc += params[w_off + static_cast<std::size_t>(i) * out + o] * x[i];
    if (relu) {
      if (mask) mask->push_back(acc > 0);
      acc = acc > 0 ? acc : 0.0;
    }
    y[o] = acc;
  }
  return y;
}

struct NaiveOutput {
  std::vector<double> q;
  double value = 0.0;
  std::vector<bool> mask;
};

// Independent forward pass of the dueling network from its flat parameters.
template <typename Scalar>
NaiveOutput naive_forward(const DuelingQNet<Scalar>& net, const std::vector<double>& params,
                          const std::vector<double>& state) {
  const auto& s = net.shape();
  std::size_t off = 0;
  NaiveOutput out;
  auto layer = [&](const std::vector<double>& x, int in, int width, bool relu) {
    const std::size_t w = off, b = off + static_cast<std::size_t>(in) * width;
    off = b + width;
    return dense(params, w, b, in, width, x, relu, &out.mask);
  };
  std::vector<double> h = state;
  int width = s.input;
  for (int w : s.shared) {
    h = layer(h, width, w, true);
    width = w;
  }
  const auto vh = layer(h, width, s.branch, true);
  const auto v = layer(vh, s.branch, 1, false);
  const auto ah = layer(h, width, s.branch, true);
  const auto a = layer(ah, s.branch, s.actions, false);
  double mean = 0.0;
  for (double x : a) mean += x;
  mean /= s.actions;
  out.value = v[0];
  for (double x : a) out.q.push_back(v[0] + x - mean);
  return out;
}

template <typename Scalar>
std::vector<double> params_of(const DuelingQNet<Scalar>& net) {
  auto p = net.parameters();
  return {p.begin(), p.end()};
}

struct FdResult {
  std::vector<double> gradient;
  std::vector<bool> valid;  // false where a ReLU flips between the two probes
};

// Central finite differences of mean_b (t_b - q(s_b, a_b))^2.
template <typename Scalar>
FdResult finite_difference(const DuelingQNet<Scalar>& net, const std::vector<std::vector<double>>& states,
                           const std::vector<int>& actions, const std::vector<double>& targets,
                           double h) {
  auto params = params_of(net);
  auto loss = [&](std::vector<bool>& mask) {
    mask.clear();
    double l = 0.0;
    for (std::size_t b = 0; b < states.size(); ++b) {
      const auto out = naive_forward(net, params, states[b]);
      mask.insert(mask.end(), out.mask.begin(), out.mask.end());
      const double d = targets[b] - out.q[actions[b]];
      l += d * d;
    }
    return l / states.size();
  };
  FdResult r;
  r.gradient.resize(params.size());
  r.valid.resize(params.size());
  std::vector<bool> mp, mm;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double saved = params[i];
    params[i] = saved + h;
    const double lp = loss(mp);
    params[i] = saved - h;
    const double lm = loss(mm);
    params[i] = saved;
    r.gradient[i] = (lp - lm) / (2 * h);
    r.valid[i] = mp == mm;
  }
  return r;
}

inline double relative_error(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-6});
}

// Random scheduling instance with its own generator logic.
struct Instance {
  std::vector<UserState> users;
  JobQueue queue;
  int num_resources = 16;
};

inline Instance random_instance(Rng& rng, int max_users = 10, int max_resources = 32) {
  std::uniform_int_distribution<int> nu(1, max_users), nr(1, max_resources);
  Instance in;
  in.num_resources = nr(rng);
  const int users = nu(rng);
  const std::vector<rbsched::UserProfile> kinds{
      rbsched::profiles::normal(), rbsched::profiles::high_datarate(),
      rbsched::profiles::low_latency(), rbsched::profiles::emergency_vehicle()};
  std::uint64_t id = 100;
  for (int u = 0; u < users; ++u) {
    UserState s;
    s.user_id = u;
    s.profile = kinds[std::uniform_int_distribution<int>(0, 3)(rng)];
    s.gain = std::exponential_distribution<double>(1.0)(rng) * (rng() % 5 == 0 ? 0.0 : 1.0);
    s.lifetime_requested = rng() % 300;
    s.lifetime_scheduled = s.lifetime_requested ? rng() % (s.lifetime_requested + 1) : 0;
    const auto unserved = s.lifetime_requested - s.lifetime_scheduled;
    s.lifetime_timeouts = unserved ? rng() % (unserved + 1) : 0;
    const int njobs = static_cast<int>(rng() % 4);
    for (int j = 0; j < njobs; ++j) {
      const int size = 1 + static_cast<int>(rng() % s.profile.max_job_size);
      const int remaining = 1 + static_cast<int>(rng() % size);
      const int t = 1 + static_cast<int>(rng() % s.profile.initial_timeout);
      in.queue.push_back(Job{id, u, remaining, size, t});
      id += 1 + rng() % 3;
    }
    in.users.push_back(s);
  }
  std::shuffle(in.queue.begin(), in.queue.end(), rng);
  return in;
}

// Enumerates every feasible allocation (per-job grants within remaining size,
// total within budget) and returns the best value of `score`.
inline double best_allocation_value(const JobQueue& queue, int budget,
                                    const std::function<double(const std::vector<int>&)>& score) {
  std::vector<int> grants(queue.size(), 0);
  double best = -1e300;
  std::function<void(std::size_t, int)> rec = [&](std::size_t i, int left) {
    if (i == queue.size()) {
      best = std::max(best, score(grants));
      return;
    }
    for (int g = 0; g <= std::min(left, queue[i].remaining_size); ++g) {
      grants[i] = g;
      rec(i + 1, left - g);
    }
    grants[i] = 0;
  };
  rec(0, budget);
  return best;
}

}  // namespace oracle
