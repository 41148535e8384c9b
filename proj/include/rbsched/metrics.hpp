#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "rbsched/sim.hpp"

namespace rbsched {

struct RewardWeights {
  double capacity = 0.25;
  double packet_rate = 0.25;
  double timeouts = 1.0;
  double ev_timeouts = 1.0;

  friend bool operator==(const RewardWeights&, const RewardWeights&) = default;
};

struct RewardBreakdown {
  double capacity = 0.0;     // nats
  double packet_rate = 0.0;  // sum of per-user ratios
  double timeouts = 0.0;     // discarded blocks
  double ev_timeouts = 0.0;  // discarded blocks owned by emergency vehicles
  double total = 0.0;

  RewardBreakdown& operator+=(const RewardBreakdown& o) {
    capacity += o.capacity;
    packet_rate += o.packet_rate;
    timeouts += o.timeouts;
    ev_timeouts += o.ev_timeouts;
    total += o.total;
    return *this;
  }
};

enum class CapacitySum { ScheduledUsers, AllUsers };

inline double capacity_term(double gain, double tx_snr_linear) {
  return std::log1p(gain * tx_snr_linear);
}

inline double capacity_metric(const StepOutcome& outcome, double tx_snr_linear,
                              CapacitySum mode = CapacitySum::ScheduledUsers) {
  double sum = 0.0;
  if (mode == CapacitySum::AllUsers) {
    for (double g : outcome.gains) sum += capacity_term(g, tx_snr_linear);
  } else {
    for (int u : outcome.scheduled_users) sum += capacity_term(outcome.gains[u], tx_snr_linear);
  }
  return sum;
}

inline double packet_rate_metric(std::span<const double> packet_rates) {
  double sum = 0.0;
  for (double r : packet_rates) sum += r;
  return sum;
}

inline double packet_rate_metric(const std::vector<UserState>& users) {
  double sum = 0.0;
  for (const auto& u : users) sum += packet_rate(u);
  return sum;
}

struct TimeoutMetrics {
  double all = 0.0;
  double ev = 0.0;
};

inline TimeoutMetrics timeout_metrics(const StepOutcome& outcome) {
  TimeoutMetrics m;
  for (const auto& f : outcome.failed_jobs) {
    m.all += f.discarded_blocks;
    if (f.owner_is_ev) m.ev += f.discarded_blocks;
  }
  return m;
}

inline double combine(const RewardBreakdown& b, const RewardWeights& w) {
  return w.capacity * b.capacity + w.packet_rate * b.packet_rate - w.timeouts * b.timeouts -
         w.ev_timeouts * b.ev_timeouts;
}

inline RewardBreakdown evaluate_step(const StepOutcome& outcome, double tx_snr_linear,
                                     const RewardWeights& weights,
                                     CapacitySum mode = CapacitySum::ScheduledUsers) {
  RewardBreakdown b;
  b.capacity = capacity_metric(outcome, tx_snr_linear, mode);
  b.packet_rate = packet_rate_metric(outcome.packet_rates);
  const auto t = timeout_metrics(outcome);
  b.timeouts = t.all;
  b.ev_timeouts = t.ev;
  b.total = combine(b, weights);
  return b;
}

}  // namespace rbsched
