#pragma once

#include <algorithm>
#include <array>
#include <deque>
#include <filesystem>
#include <fstream>
#include <functional>
#include <future>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "rbsched/agent.hpp"
#include "rbsched/config.hpp"

namespace rbsched {

inline constexpr const char* kTrainCsvHeader =
    "episode,epsilon,sum_r,sum_rC,sum_rP,sum_rL,sum_rL_ev,n_MT,n_MMF,n_DS,n_EVP";
inline constexpr const char* kEvalCsvHeader =
    "policy,episode,seed,sum_r,sum_rC,sum_rP,sum_rL,sum_rL_ev,n_MT,n_MMF,n_DS,n_EVP";
inline constexpr const char* kDqnPolicy = "DQN";

class ExperimentError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct EpisodeSummary {
  std::string policy;
  int episode = 0;
  std::uint64_t seed = 0;
  double epsilon = 0.0;
  RewardBreakdown sum;
  std::array<int, kNumSchedulers> action_counts{};
};

inline EpisodeSettings episode_settings(const ExperimentConfig& c) {
  EpisodeSettings s;
  s.weights = c.reward;
  s.capacity_mode = c.capacity_mode;
  s.scheduler = c.schedulers;
  if (c.agent.scale_inputs) s.input_scale = input_scale(c.sim);
  return s;
}

inline int network_inputs(const ExperimentConfig& c) { return kFeaturesPerUser * c.sim.num_users; }

inline std::uint64_t train_episode_seed(const ExperimentConfig& c, int episode) {
  return derive_seed(c.sim.seed, static_cast<std::uint64_t>(Stream::Environment), episode);
}

// Evaluation episodes draw environments from their own stream, identical across policies.
inline std::uint64_t eval_episode_seed(const ExperimentConfig& c, int episode) {
  return derive_seed(c.sim.seed, static_cast<std::uint64_t>(Stream::Eval), episode);
}

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

inline std::string counts_csv(const std::array<int, kNumSchedulers>& n) {
  std::string s;
  for (int k = 0; k < kNumSchedulers; ++k) s += "," + std::to_string(n[k]);
  return s;
}

inline std::string sums_csv(const RewardBreakdown& b) {
  return format_double(b.total) + "," + format_double(b.capacity) + "," +
         format_double(b.packet_rate) + "," + format_double(b.timeouts) + "," +
         format_double(b.ev_timeouts);
}

inline std::string train_csv_row(const EpisodeSummary& e) {
  return std::to_string(e.episode) + "," + format_double(e.epsilon) + "," + sums_csv(e.sum) +
         counts_csv(e.action_counts);
}

inline std::string eval_csv_row(const EpisodeSummary& e) {
  return e.policy + "," + std::to_string(e.episode) + "," + std::to_string(e.seed) + "," +
         sums_csv(e.sum) + counts_csv(e.action_counts);
}

inline void write_eval_csv(std::ostream& out, const std::vector<EpisodeSummary>& rows) {
  out << kEvalCsvHeader << '\n';
  for (const auto& r : rows) out << eval_csv_row(r) << '\n';
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct TrainCallbacks {
  std::function<void(const EpisodeSummary&)> on_episode;
  std::function<void(int episodes_done, const DqnAgent&)> on_checkpoint;
};

inline DqnAgent train_agent(const ExperimentConfig& c, const TrainCallbacks& cb = {}) {
  c.validate();
  DqnAgent agent(c.agent, network_inputs(c), c.sim.seed);
  Simulator sim(c.sim);
  auto scheduler_rng = make_rng(c.sim.seed, Stream::Scheduler);
  auto settings = episode_settings(c);
  for (int e = 0; e < c.agent.episodes; ++e) {
    settings.epsilon = epsilon_at(e, c.agent);
    sim.reset(train_episode_seed(c, e));
    const auto log = run_episode(sim, &agent, Policy::train(), settings, scheduler_rng);
    if (cb.on_episode)
      cb.on_episode({"train", e, train_episode_seed(c, e), settings.epsilon, log.sum,
                     log.action_counts});
    if (cb.on_checkpoint && c.checkpoint_every > 0 && (e + 1) % c.checkpoint_every == 0)
      cb.on_checkpoint(e + 1, agent);
  }
  return agent;
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

inline const std::vector<std::string>& all_policy_names() {
  static const std::vector<std::string> names{kDqnPolicy, "MT", "MMF", "DS", "EVP"};
  return names;
}

// Canonical upper-case policy name, or throws.
inline std::string canonical_policy(const std::string& name) {
  std::string upper(name);
  std::transform(upper.begin(), upper.end(), upper.begin(),
                 [](unsigned char ch) { return static_cast<char>(std::toupper(ch)); });
  if (upper == kDqnPolicy) return upper;
  if (auto k = scheduler_from_name(name)) return std::string(scheduler_name(*k));
  throw ExperimentError("unknown policy '" + name + "' (expected DQN, MT, MMF, DS or EVP)");
}

inline std::vector<EpisodeSummary> evaluate_policy(const ExperimentConfig& c,
                                                   const std::string& policy_name,
                                                   const QNet* net, int episodes) {
  const auto name = canonical_policy(policy_name);
  Policy policy = Policy::greedy();
  std::optional<DqnAgent> agent;
  if (name == kDqnPolicy) {
    if (net == nullptr) throw ExperimentError("policy DQN requires a checkpoint");
    if (net->shape().input != network_inputs(c) || net->shape().actions != kNumSchedulers)
      throw ExperimentError("checkpoint expects " + std::to_string(net->shape().input) +
                            " inputs, configuration provides " +
                            std::to_string(network_inputs(c)));
    AgentConfig ac = c.agent;
    ac.replay_capacity = 1;
    agent.emplace(ac, *net, c.sim.seed);
  } else {
    policy = Policy::fixed_scheduler(*scheduler_from_name(name));
  }
  Simulator sim(c.sim);
  const auto settings = episode_settings(c);
  std::vector<EpisodeSummary> rows;
  rows.reserve(episodes);
  for (int e = 0; e < episodes; ++e) {
    const auto seed = eval_episode_seed(c, e);
    sim.reset(seed);
    auto scheduler_rng = make_rng(seed, Stream::Scheduler);
    const auto log = run_episode(sim, agent ? &*agent : nullptr, policy, settings, scheduler_rng);
    rows.push_back({name, e, seed, 0.0, log.sum, log.action_counts});
  }
  return rows;
}

// Rows ordered by (policy order as given, episode), independent of thread count.
inline std::vector<EpisodeSummary> evaluate(const ExperimentConfig& c,
                                            const std::vector<std::string>& policies,
                                            const QNet* net) {
  std::vector<std::vector<EpisodeSummary>> parts(policies.size());
  if (c.threads > 1) {
    std::deque<std::future<std::vector<EpisodeSummary>>> jobs;
    std::size_t next = 0, done = 0;
    auto launch = [&] {
      jobs.push_back(std::async(std::launch::async, [&c, &policies, net, i = next] {
        return evaluate_policy(c, policies[i], net, c.eval_episodes);
      }));
      ++next;
    };
    while (next < policies.size() && jobs.size() < static_cast<std::size_t>(c.threads)) launch();
    while (!jobs.empty()) {
      parts[done++] = jobs.front().get();
      jobs.pop_front();
      if (next < policies.size()) launch();
    }
  } else {
    for (std::size_t i = 0; i < policies.size(); ++i)
      parts[i] = evaluate_policy(c, policies[i], net, c.eval_episodes);
  }
  std::vector<EpisodeSummary> rows;
  for (auto& p : parts) rows.insert(rows.end(), p.begin(), p.end());
  return rows;
}

struct PolicyStats {
  int episodes = 0;
  RewardBreakdown mean;
  std::array<long, kNumSchedulers> action_counts{};
  std::array<double, kNumSchedulers> selection_rate{};
};

inline std::map<std::string, PolicyStats> policy_stats(const std::vector<EpisodeSummary>& rows) {
  std::map<std::string, PolicyStats> stats;
  for (const auto& r : rows) {
    auto& s = stats[r.policy];
    ++s.episodes;
    s.mean += r.sum;
    for (int k = 0; k < kNumSchedulers; ++k) s.action_counts[k] += r.action_counts[k];
  }
  for (auto& [name, s] : stats) {
    const double n = s.episodes;
    s.mean.total /= n;
    s.mean.capacity /= n;
    s.mean.packet_rate /= n;
    s.mean.timeouts /= n;
    s.mean.ev_timeouts /= n;
    long total = 0;
    for (long v : s.action_counts) total += v;
    for (int k = 0; k < kNumSchedulers; ++k)
      s.selection_rate[k] = total > 0 ? static_cast<double>(s.action_counts[k]) / total : 0.0;
  }
  return stats;
}

// Per-policy means, selection rates, and the normalization constant for reward plots
// (largest per-episode reward sum over all rows).
inline nlohmann::ordered_json eval_summary(const std::vector<EpisodeSummary>& rows) {
  nlohmann::ordered_json j;
  double best = rows.empty() ? 0.0 : rows.front().sum.total;
  for (const auto& r : rows) best = std::max(best, r.sum.total);
  j["normalization_max_sum_r"] = best;
  auto& policies = j["policies"];
  policies = nlohmann::ordered_json::object();
  for (const auto& [name, s] : policy_stats(rows)) {
    nlohmann::ordered_json p;
    p["episodes"] = s.episodes;
    p["mean_sum_r"] = s.mean.total;
    p["mean_sum_rC"] = s.mean.capacity;
    p["mean_sum_rP"] = s.mean.packet_rate;
    p["mean_sum_rL"] = s.mean.timeouts;
    p["mean_sum_rL_ev"] = s.mean.ev_timeouts;
    for (int k = 0; k < kNumSchedulers; ++k)
      p["selection_rate"][std::string(scheduler_name(kAllSchedulers[k]))] = s.selection_rate[k];
    policies[name] = p;
  }
  return j;
}

// ---------------------------------------------------------------------------
// Campaigns with file output
// ---------------------------------------------------------------------------

inline void ensure_directory(const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec || !std::filesystem::is_directory(dir))
    throw ExperimentError("cannot create output directory '" + dir + "'");
}

inline std::ofstream open_output(const std::string& path, std::ios::openmode mode = std::ios::out) {
  std::ofstream out(path, mode);
  if (!out) throw ExperimentError("cannot write '" + path + "'");
  return out;
}

inline void save_checkpoint(const QNet& net, const std::string& path) {
  const auto parent = std::filesystem::path(path).parent_path();
  if (!parent.empty()) ensure_directory(parent.string());
  auto out = open_output(path, std::ios::out | std::ios::binary);
  write_checkpoint(out, net);
}

inline QNet load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ExperimentError("cannot open checkpoint '" + path + "'");
  return read_checkpoint<float>(in);
}

struct CampaignHooks {
  // Called after each training episode with the moving-average reward over the last 100.
  std::function<void(const EpisodeSummary&, double moving_average)> on_train_episode;
};

// Writes <out_dir>/train.csv and the checkpoint; returns the trained network.
inline QNet run_training(const ExperimentConfig& c, const CampaignHooks& hooks = {}) {
  c.validate();
  ensure_directory(c.out_dir);
  auto csv = open_output(c.out_dir + "/train.csv");
  csv << kTrainCsvHeader << '\n';
  std::deque<double> window;
  double window_sum = 0.0;
  TrainCallbacks cb;
  cb.on_episode = [&](const EpisodeSummary& e) {
    csv << train_csv_row(e) << '\n';
    window.push_back(e.sum.total);
    window_sum += e.sum.total;
    if (window.size() > 100) {
      window_sum -= window.front();
      window.pop_front();
    }
    if (hooks.on_train_episode) hooks.on_train_episode(e, window_sum / window.size());
  };
  cb.on_checkpoint = [&](int, const DqnAgent& agent) {
    save_checkpoint(agent.online(), c.checkpoint_path());
  };
  const auto agent = train_agent(c, cb);
  save_checkpoint(agent.online(), c.checkpoint_path());
  csv.flush();
  if (!csv) throw ExperimentError("failed writing training CSV");
  return agent.online();
}

// Policies to evaluate: the configured list, or every baseline plus DQN when a
// network is available.
inline std::vector<std::string> resolve_policies(const ExperimentConfig& c, bool have_network) {
  std::vector<std::string> out;
  if (c.policies.empty()) {
    for (const auto& p : all_policy_names())
      if (p != kDqnPolicy || have_network) out.push_back(p);
    return out;
  }
  for (const auto& p : c.policies) {
    const auto name = canonical_policy(p);
    if (std::find(out.begin(), out.end(), name) == out.end()) out.push_back(name);
  }
  return out;
}

// Writes <out_dir>/eval.csv and <out_dir>/eval_summary.json.
inline std::vector<EpisodeSummary> run_evaluation(const ExperimentConfig& c, const QNet* net) {
  c.validate();
  const auto policies = resolve_policies(c, net != nullptr);
  const auto rows = evaluate(c, policies, net);
  ensure_directory(c.out_dir);
  {
    auto csv = open_output(c.out_dir + "/eval.csv");
    write_eval_csv(csv, rows);
    if (!csv) throw ExperimentError("failed writing evaluation CSV");
  }
  auto js = open_output(c.out_dir + "/eval_summary.json");
  js << eval_summary(rows).dump(2) << '\n';
  return rows;
}

}  // namespace rbsched
