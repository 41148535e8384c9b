#include <gtest/gtest.h>

#include <cmath>

#include "rbsched/metrics.hpp"

using namespace rbsched;

namespace {
constexpr double kSnr13dB = 19.952623149688797;  // 10^1.3
}

TEST(Capacity, EmptyScheduleIsZero) {
  StepOutcome out;
  out.gains = {1.0, 2.0};
  EXPECT_EQ(capacity_metric(out, kSnr13dB), 0.0);
}

TEST(Capacity, ZeroGainContributesNothing) {
  StepOutcome out;
  out.gains = {0.0};
  out.scheduled_users = {0};
  EXPECT_EQ(capacity_metric(out, kSnr13dB), 0.0);
}

TEST(Capacity, UnitGainAt13dB) {
  SimConfig cfg;
  StepOutcome out;
  out.gains = {1.0};
  out.scheduled_users = {0};
  EXPECT_NEAR(capacity_metric(out, cfg.tx_snr_linear()), 3.0422638485390396, 1e-9);
}

TEST(Capacity, AllUsersModeSumsEveryone) {
  StepOutcome out;
  out.gains = {1.0, 0.5};
  out.scheduled_users = {0};
  EXPECT_NEAR(capacity_metric(out, 1.0, CapacitySum::AllUsers), std::log(2.0) + std::log(1.5), 1e-15);
  EXPECT_NEAR(capacity_metric(out, 1.0), std::log(2.0), 1e-15);
}

TEST(Capacity, MonotoneInScheduledGain) {
  StepOutcome out;
  out.scheduled_users = {0, 1};
  double prev = -1.0;
  for (double g = 0.0; g < 5.0; g += 0.25) {
    out.gains = {g, 0.3};
    const double c = capacity_metric(out, kSnr13dB);
    EXPECT_GT(c, prev);
    prev = c;
  }
}

TEST(PacketRateMetric, Sums) {
  EXPECT_EQ(packet_rate_metric(std::vector<double>(10, 1.0)), 10.0);
  EXPECT_EQ(packet_rate_metric(std::vector<double>(10, 0.5)), 5.0);
  EXPECT_EQ(packet_rate_metric(std::vector<double>{1.0, 0.25}), 1.25);
}

TEST(Timeouts, SplitsEvBlocks) {
  StepOutcome none;
  EXPECT_EQ(timeout_metrics(none).all, 0.0);
  EXPECT_EQ(timeout_metrics(none).ev, 0.0);

  StepOutcome ev;
  ev.failed_jobs = {{3, 4, true}};
  EXPECT_EQ(timeout_metrics(ev).all, 4.0);
  EXPECT_EQ(timeout_metrics(ev).ev, 4.0);

  StepOutcome mixed;
  mixed.failed_jobs = {{0, 3, false}, {3, 4, true}};
  EXPECT_EQ(timeout_metrics(mixed).all, 7.0);
  EXPECT_EQ(timeout_metrics(mixed).ev, 4.0);
}

TEST(Combine, WeightedSum) {
  RewardWeights w;
  EXPECT_EQ(combine({}, w), 0.0);
  RewardBreakdown b{4, 8, 2, 0, 0};
  EXPECT_DOUBLE_EQ(combine(b, w), 1.0);
}

TEST(Combine, LinearInEachWeight) {
  RewardBreakdown b{3.5, 7.25, 11, 4, 0};
  RewardWeights zero{0, 0, 0, 0};
  EXPECT_EQ(combine(b, zero), 0.0);
  RewardWeights w{0.3, 0.7, 1.1, 2.0};
  RewardWeights doubled = w;
  doubled.ev_timeouts *= 2;
  EXPECT_DOUBLE_EQ(combine(b, doubled) - combine(b, w), -w.ev_timeouts * b.ev_timeouts);
  const double base = combine(b, w);
  RewardWeights c2 = w;
  c2.capacity += 1.0;
  EXPECT_DOUBLE_EQ(combine(b, c2) - base, b.capacity);
  RewardWeights p2 = w;
  p2.packet_rate += 1.0;
  EXPECT_DOUBLE_EQ(combine(b, p2) - base, b.packet_rate);
  RewardWeights l2 = w;
  l2.timeouts += 1.0;
  EXPECT_DOUBLE_EQ(combine(b, l2) - base, -b.timeouts);
}

TEST(EvaluateStep, BreakdownInvariants) {
  StepOutcome out;
  out.gains = {1.0, 0.0, 0.5};
  out.scheduled_users = {0, 2};
  out.packet_rates = {1.0, 0.5, 0.25};
  out.failed_jobs = {{1, 3, false}, {2, 2, true}};
  const auto b = evaluate_step(out, kSnr13dB, {});
  EXPECT_GE(b.timeouts, b.ev_timeouts);
  EXPECT_GE(b.ev_timeouts, 0.0);
  EXPECT_LE(b.packet_rate, 3.0);
  EXPECT_DOUBLE_EQ(b.total, 0.25 * b.capacity + 0.25 * 1.75 - 5.0 - 2.0);
}
