#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "rbsched/metrics.hpp"
#include "rbsched/qnet.hpp"
#include "rbsched/random.hpp"
#include "rbsched/replay.hpp"
#include "rbsched/schedulers.hpp"
#include "rbsched/sim.hpp"

namespace rbsched {

inline constexpr int kFeaturesPerUser = 5;

using StateVector = std::vector<float>;
using QNet = DuelingQNet<float>;

struct AgentConfig {
  double gamma = 0.9;
  double epsilon_start = 0.99;
  double epsilon_end = 0.0;
  double epsilon_decay_fraction = 0.8;
  int batch_size = 64;
  double learning_rate = 1e-4;
  int target_sync_period = 100;  // gradient steps
  int episodes = 10000;
  std::size_t replay_capacity = 100000;
  std::vector<int> shared_layers{300, 300, 300, 300};
  int branch_width = 200;
  bool importance_weights = false;
  double importance_beta = 0.4;
  // Divide queued blocks by N and remaining times by the profile timeout before the net sees them.
  bool scale_inputs = false;

  friend bool operator==(const AgentConfig&, const AgentConfig&) = default;

  void validate() const {
    auto prob = [](double v) { return v >= 0.0 && v <= 1.0; };
    if (!prob(gamma)) throw std::invalid_argument("agent.gamma: must lie in [0, 1]");
    if (!prob(epsilon_start)) throw std::invalid_argument("agent.epsilon_start: must lie in [0, 1]");
    if (!prob(epsilon_end)) throw std::invalid_argument("agent.epsilon_end: must lie in [0, 1]");
    if (!(epsilon_decay_fraction > 0.0 && epsilon_decay_fraction <= 1.0))
      throw std::invalid_argument("agent.epsilon_decay_fraction: must lie in (0, 1]");
    if (batch_size < 1) throw std::invalid_argument("agent.batch_size: must be >= 1");
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate))
      throw std::invalid_argument("agent.learning_rate: must be positive");
    if (target_sync_period < 1) throw std::invalid_argument("agent.target_sync_period: must be >= 1");
    if (episodes < 0) throw std::invalid_argument("agent.episodes: must be >= 0");
    if (replay_capacity < 1) throw std::invalid_argument("agent.replay_capacity: must be >= 1");
    if (branch_width < 1) throw std::invalid_argument("agent.branch_width: must be >= 1");
    for (int w : shared_layers)
      if (w < 1) throw std::invalid_argument("agent.shared_layers: widths must be >= 1");
    if (!(importance_beta >= 0.0)) throw std::invalid_argument("agent.importance_beta: must be >= 0");
  }
};

// Per user: queued blocks, gain, mean and min time-to-timeout, packet rate.
inline StateVector preprocess(const JobQueue& queue, const std::vector<UserState>& users) {
  const std::size_t n = users.size();
  std::vector<double> blocks(n, 0.0), sum_t(n, 0.0), count(n, 0.0);
  std::vector<double> min_t(n, std::numeric_limits<double>::infinity());
  for (const auto& j : queue) {
    blocks[j.owner] += j.remaining_size;
    sum_t[j.owner] += j.time_to_timeout;
    count[j.owner] += 1.0;
    min_t[j.owner] = std::min(min_t[j.owner], double(j.time_to_timeout));
  }
  StateVector s;
  s.reserve(kFeaturesPerUser * n);
  for (std::size_t u = 0; u < n; ++u) {
    const bool idle = count[u] == 0.0;
    s.push_back(static_cast<float>(blocks[u]));
    s.push_back(static_cast<float>(users[u].gain));
    s.push_back(static_cast<float>(idle ? 0.0 : sum_t[u] / count[u]));
    s.push_back(static_cast<float>(idle ? 0.0 : min_t[u]));
    s.push_back(static_cast<float>(packet_rate(users[u])));
  }
  return s;
}

// Lowest index wins ties.
template <typename Values>
int greedy_action(const Values& q) {
  int best = 0;
  for (int k = 1; k < static_cast<int>(std::size(q)); ++k)
    if (q[k] > q[best]) best = k;
  return best;
}

template <typename Values>
int select_action(const Values& q, double epsilon, Rng& rng) {
  if (epsilon > 0.0 && uniform01(rng) < epsilon)
    return std::uniform_int_distribution<int>(0, static_cast<int>(std::size(q)) - 1)(rng);
  return greedy_action(q);
}

// Linear from epsilon_start at episode 0 to epsilon_end at decay_fraction * episodes.
inline double epsilon_at(int episode, const AgentConfig& c) {
  const double horizon = c.epsilon_decay_fraction * c.episodes;
  if (horizon <= 0.0 || episode >= horizon) return c.epsilon_end;
  const double f = std::max(0, episode) / horizon;
  return c.epsilon_start + (c.epsilon_end - c.epsilon_start) * f;
}

// r + gamma * max_k target(s', k), or r alone for the last step of an episode.
template <typename Scalar>
double build_target(const Experience& e, const DuelingQNet<Scalar>& target, double gamma) {
  if (e.terminal || gamma == 0.0) return e.reward;
  std::vector<Scalar> next(e.next_state.begin(), e.next_state.end());
  const auto q = target.q_values(next);
  return e.reward + gamma * static_cast<double>(q.maxCoeff());
}

struct TrainStepResult {
  bool trained = false;
  double loss = 0.0;
};

class DqnAgent {
 public:
  DqnAgent(const AgentConfig& config, int num_inputs, std::uint64_t seed)
      : config_(config),
        online_(QNetShape{num_inputs, config.shared_layers, config.branch_width, kNumSchedulers},
                derive_seed(seed, static_cast<std::uint64_t>(Stream::Init))),
        target_(online_),
        replay_(config.replay_capacity),
        explore_rng_(make_rng(seed, Stream::Exploration)),
        replay_rng_(make_rng(seed, Stream::Replay)),
        grad_(online_.num_parameters()) {
    config_.validate();
  }

  // Resumes from trained parameters (optimizer moments included).
  DqnAgent(const AgentConfig& config, QNet online, std::uint64_t seed)
      : config_(config),
        online_(std::move(online)),
        target_(online_),
        replay_(config.replay_capacity),
        explore_rng_(make_rng(seed, Stream::Exploration)),
        replay_rng_(make_rng(seed, Stream::Replay)),
        grad_(online_.num_parameters()) {
    config_.validate();
  }

  const AgentConfig& config() const { return config_; }
  const QNet& online() const { return online_; }
  const QNet& target() const { return target_; }
  QNet& online() { return online_; }
  const PrioritizedReplay& replay() const { return replay_; }
  std::int64_t gradient_steps() const { return gradient_steps_; }

  std::vector<float> q_values(const StateVector& s) const {
    const auto q = online_.q_values(s);
    return {q.data(), q.data() + q.size()};
  }

  int act(const StateVector& s, double epsilon) {
    // Skip the forward pass when the action is random anyway.
    if (epsilon > 0.0 && uniform01(explore_rng_) < epsilon)
      return std::uniform_int_distribution<int>(0, kNumSchedulers - 1)(explore_rng_);
    return greedy_action(q_values(s));
  }

  int greedy(const StateVector& s) const { return greedy_action(q_values(s)); }

  // Stores the experience and performs one training step.
  TrainStepResult observe(Experience e) {
    replay_.push(std::move(e));
    return train_step();
  }

  void sync_target() { target_ = online_; }

  TrainStepResult train_step() {
    const int batch = config_.batch_size;
    if (replay_.size() < static_cast<std::size_t>(batch)) return {};
    const auto samples = replay_.sample(static_cast<std::size_t>(batch), replay_rng_);
    const int inputs = online_.shape().input;

    states_.resize(inputs, batch);
    next_states_.resize(inputs, batch);
    actions_.resize(batch);
    for (int b = 0; b < batch; ++b) {
      const Experience& e = *samples[b].experience;
      states_.col(b) = Eigen::Map<const Eigen::VectorXf>(e.state.data(), inputs);
      next_states_.col(b) = Eigen::Map<const Eigen::VectorXf>(e.next_state.data(), inputs);
      actions_[b] = e.action;
    }
    const QNet::Matrix next_q = target_.forward(next_states_);
    targets_.resize(batch);
    for (int b = 0; b < batch; ++b) {
      const Experience& e = *samples[b].experience;
      const double bootstrap = e.terminal ? 0.0 : config_.gamma * next_q.col(b).maxCoeff();
      targets_[b] = static_cast<float>(e.reward + bootstrap);
    }
    weights_.clear();
    if (config_.importance_weights) {
      for (double w : importance_weights(samples, replay_.size(), config_.importance_beta))
        weights_.push_back(static_cast<float>(w));
    }
    const auto td = online_.gradient(states_, actions_, targets_, grad_, weights_);
    adam_step<float>(online_, grad_, config_.learning_rate);
    ++gradient_steps_;

    double loss = 0.0;
    for (int b = 0; b < batch; ++b) {
      loss += double(td[b]) * td[b];
      replay_.update_priority(samples[b].index, td[b]);
    }
    if (gradient_steps_ % config_.target_sync_period == 0) sync_target();
    return {true, loss / batch};
  }

 private:
  AgentConfig config_;
  QNet online_;
  QNet target_;
  PrioritizedReplay replay_;
  Rng explore_rng_;
  Rng replay_rng_;
  AlignedVector<float> grad_;
  std::int64_t gradient_steps_ = 0;

  QNet::Matrix states_, next_states_;
  std::vector<int> actions_;
  std::vector<float> targets_, weights_;
};

// ---------------------------------------------------------------------------
// Episodes
// ---------------------------------------------------------------------------

enum class EpisodeMode { Train, EvalGreedy, EvalFixed };

struct Policy {
  EpisodeMode mode = EpisodeMode::EvalFixed;
  SchedulerKind fixed = SchedulerKind::MT;

  static Policy train() { return {EpisodeMode::Train, SchedulerKind::MT}; }
  static Policy greedy() { return {EpisodeMode::EvalGreedy, SchedulerKind::MT}; }
  static Policy fixed_scheduler(SchedulerKind k) { return {EpisodeMode::EvalFixed, k}; }
};

struct EpisodeSettings {
  RewardWeights weights;
  CapacitySum capacity_mode = CapacitySum::ScheduledUsers;
  SchedulerOptions scheduler;
  double epsilon = 0.0;  // train mode only
  StateVector input_scale;  // empty: raw features
};

// Per-feature multipliers matching preprocess()'s layout.
inline StateVector input_scale(const SimConfig& c) {
  StateVector s;
  s.reserve(kFeaturesPerUser * c.num_users);
  for (const auto& p : c.profiles) {
    const float t = 1.0f / static_cast<float>(p.initial_timeout);
    s.insert(s.end(), {1.0f / static_cast<float>(c.num_resources), 1.0f, t, t, 1.0f});
  }
  return s;
}

struct StepRecord {
  SchedulerKind action = SchedulerKind::MT;
  RewardBreakdown reward;
};

struct EpisodeLog {
  std::vector<StepRecord> steps;
  RewardBreakdown sum;
  std::array<int, kNumSchedulers> action_counts{};
  double mean_loss = 0.0;
};

// Runs one full episode from `sim`'s current (freshly reset) state. `agent` may be
// null for fixed-scheduler evaluation.
inline EpisodeLog run_episode(Simulator& sim, DqnAgent* agent, const Policy& policy,
                              const EpisodeSettings& settings, Rng& scheduler_rng) {
  if (policy.mode != EpisodeMode::EvalFixed && agent == nullptr)
    throw std::invalid_argument("run_episode: policy requires an agent");
  const auto& cfg = sim.config();
  const double snr = cfg.tx_snr_linear();
  EpisodeLog log;
  log.steps.reserve(cfg.steps_per_episode);
  std::optional<Experience> pending;
  int trained = 0;
  double loss = 0.0;
  auto learn = [&](Experience e) {
    const auto r = agent->observe(std::move(e));
    if (r.trained) {
      ++trained;
      loss += r.loss;
    }
  };

  auto observe_state = [&] {
    auto s = preprocess(sim.queue(), sim.users());
    if (!settings.input_scale.empty())
      for (std::size_t i = 0; i < s.size(); ++i) s[i] *= settings.input_scale[i];
    return s;
  };

  while (!sim.episode_done()) {
    sim.begin_step();
    StateVector state;
    if (policy.mode != EpisodeMode::EvalFixed) state = observe_state();
    if (pending) {
      pending->next_state = state;
      learn(std::move(*pending));
      pending.reset();
    }
    int action = static_cast<int>(policy.fixed);
    if (policy.mode == EpisodeMode::Train) action = agent->act(state, settings.epsilon);
    if (policy.mode == EpisodeMode::EvalGreedy) action = agent->greedy(state);
    const auto kind = static_cast<SchedulerKind>(action);

    const auto allocation = run_scheduler(kind, sim.queue(), sim.users(),
                                          cfg.num_resources, scheduler_rng, settings.scheduler);
    const auto outcome = sim.finish_step(allocation);
    const auto reward = evaluate_step(outcome, snr, settings.weights, settings.capacity_mode);

    log.steps.push_back({kind, reward});
    log.sum += reward;
    ++log.action_counts[action];
    if (policy.mode == EpisodeMode::Train)
      pending = Experience{std::move(state), action, reward.total, {}, sim.episode_done()};
  }
  if (pending) {
    pending->next_state = observe_state();
    learn(std::move(*pending));
  }
  log.mean_loss = trained > 0 ? loss / trained : 0.0;
  return log;
}

}  // namespace rbsched
