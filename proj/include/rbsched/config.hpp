#pragma once

#include <charconv>
#include <cstdint>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "rbsched/agent.hpp"
#include "rbsched/metrics.hpp"
#include "rbsched/schedulers.hpp"
#include "rbsched/sim.hpp"

namespace rbsched {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ExperimentConfig {
  SimConfig sim;
  AgentConfig agent;
  RewardWeights reward;
  SchedulerOptions schedulers;
  CapacitySum capacity_mode = CapacitySum::ScheduledUsers;

  std::string out_dir = "out";
  std::string checkpoint;            // empty: <out_dir>/checkpoint.qnet
  int eval_episodes = 10000;
  std::vector<std::string> policies;  // empty: all applicable
  int checkpoint_every = 1000;        // episodes; 0 disables periodic checkpoints
  int threads = 1;

  friend bool operator==(const ExperimentConfig& a, const ExperimentConfig& b) {
    return a.sim.num_users == b.sim.num_users && a.sim.num_resources == b.sim.num_resources &&
           a.sim.job_probability == b.sim.job_probability && a.sim.profiles == b.sim.profiles &&
           a.sim.lattice_half_extent == b.sim.lattice_half_extent &&
           a.sim.steps_per_episode == b.sim.steps_per_episode &&
           a.sim.tx_snr_db == b.sim.tx_snr_db && a.sim.seed == b.sim.seed &&
           a.agent == b.agent && a.reward == b.reward && a.schedulers.ds == b.schedulers.ds &&
           a.schedulers.mmf_redistribute == b.schedulers.mmf_redistribute &&
           a.capacity_mode == b.capacity_mode && a.out_dir == b.out_dir &&
           a.checkpoint == b.checkpoint && a.eval_episodes == b.eval_episodes &&
           a.policies == b.policies && a.checkpoint_every == b.checkpoint_every &&
           a.threads == b.threads;
  }

  std::string checkpoint_path() const {
    return checkpoint.empty() ? out_dir + "/checkpoint.qnet" : checkpoint;
  }

  void validate() const {
    sim.validate();
    agent.validate();
    for (double w : {reward.capacity, reward.packet_rate, reward.timeouts, reward.ev_timeouts})
      if (!std::isfinite(w) || w < 0.0)
        throw ConfigError("reward: weights must be finite and non-negative");
    const auto& ds = schedulers.ds;
    if (!(ds.channel >= 0.0 && ds.urgency >= 0.0 && ds.channel + ds.urgency > 0.0))
      throw ConfigError("schedulers.ds_w1/ds_w2: must be non-negative with a positive sum");
    if (eval_episodes < 0) throw ConfigError("run.eval_episodes: must be >= 0");
    if (checkpoint_every < 0) throw ConfigError("run.checkpoint_every: must be >= 0");
    if (threads < 1) throw ConfigError("run.threads: must be >= 1");
  }
};

// Shortest representation that parses back to the same double.
inline std::string format_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

namespace detail {

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream is(s);
  while (std::getline(is, item, ',')) {
    const auto b = item.find_first_not_of(" \t");
    const auto e = item.find_last_not_of(" \t");
    if (b != std::string::npos) out.push_back(item.substr(b, e - b + 1));
  }
  return out;
}

template <typename T>
T parse_value(const std::string& text, const std::string& key) {
  T v{};
  const char* first = text.data();
  const char* last = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc{} || ptr != last)
    throw ConfigError(key + ": cannot parse '" + text + "'");
  return v;
}

template <>
inline bool parse_value<bool>(const std::string& text, const std::string& key) {
  if (text == "true" || text == "1" || text == "yes" || text == "on") return true;
  if (text == "false" || text == "0" || text == "no" || text == "off") return false;
  throw ConfigError(key + ": expected a boolean, got '" + text + "'");
}

// Built-in names, or name:initial_timeout:max_job_size[:ev] for custom profiles.
inline UserProfile parse_profile(const std::string& text) {
  auto parts = std::vector<std::string>{};
  std::istringstream is(text);
  std::string p;
  while (std::getline(is, p, ':')) parts.push_back(p);
  if (parts.size() == 1) {
    try {
      return profiles::by_name(parts[0]);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("sim.profiles: ") + e.what());
    }
  }
  if (parts.size() != 3 && parts.size() != 4)
    throw ConfigError("sim.profiles: malformed profile '" + text + "'");
  UserProfile prof;
  prof.name = parts[0];
  prof.initial_timeout = parse_value<int>(parts[1], "sim.profiles");
  prof.max_job_size = parse_value<int>(parts[2], "sim.profiles");
  prof.emergency = parts.size() == 4 && parts[3] == "ev";
  if (parts.size() == 4 && parts[3] != "ev")
    throw ConfigError("sim.profiles: unknown profile flag '" + parts[3] + "'");
  return prof;
}

inline std::string emit_profile(const UserProfile& p) {
  try {
    if (profiles::by_name(p.name) == p) return p.name;
  } catch (const std::invalid_argument&) {
  }
  return p.name + ":" + std::to_string(p.initial_timeout) + ":" +
         std::to_string(p.max_job_size) + (p.emergency ? ":ev" : "");
}

template <typename T>
std::string join(const std::vector<T>& items) {
  std::string s;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i) s += ",";
    if constexpr (std::is_same_v<T, std::string>) s += items[i];
    else s += std::to_string(items[i]);
  }
  return s;
}

}  // namespace detail

inline boost::property_tree::ptree to_ptree(const ExperimentConfig& c) {
  boost::property_tree::ptree t;
  auto num = [](double v) { return format_double(v); };
  t.put("sim.num_users", c.sim.num_users);
  t.put("sim.num_resources", c.sim.num_resources);
  t.put("sim.job_probability", num(c.sim.job_probability));
  std::vector<std::string> profs;
  for (const auto& p : c.sim.profiles) profs.push_back(detail::emit_profile(p));
  t.put("sim.profiles", detail::join(profs));
  t.put("sim.lattice_half_extent", c.sim.lattice_half_extent);
  t.put("sim.steps_per_episode", c.sim.steps_per_episode);
  t.put("sim.tx_snr_db", num(c.sim.tx_snr_db));
  t.put("sim.capacity_sum", c.capacity_mode == CapacitySum::AllUsers ? "all" : "scheduled");

  t.put("agent.gamma", num(c.agent.gamma));
  t.put("agent.epsilon_start", num(c.agent.epsilon_start));
  t.put("agent.epsilon_end", num(c.agent.epsilon_end));
  t.put("agent.epsilon_decay_fraction", num(c.agent.epsilon_decay_fraction));
  t.put("agent.batch_size", c.agent.batch_size);
  t.put("agent.learning_rate", num(c.agent.learning_rate));
  t.put("agent.target_sync_period", c.agent.target_sync_period);
  t.put("agent.episodes", c.agent.episodes);
  t.put("agent.replay_capacity", c.agent.replay_capacity);
  t.put("agent.shared_layers", detail::join(c.agent.shared_layers));
  t.put("agent.branch_width", c.agent.branch_width);
  t.put("agent.importance_weights", c.agent.importance_weights ? "true" : "false");
  t.put("agent.importance_beta", num(c.agent.importance_beta));
  t.put("agent.scale_inputs", c.agent.scale_inputs ? "true" : "false");

  t.put("reward.w_capacity", num(c.reward.capacity));
  t.put("reward.w_packet_rate", num(c.reward.packet_rate));
  t.put("reward.w_timeouts", num(c.reward.timeouts));
  t.put("reward.w_ev_timeouts", num(c.reward.ev_timeouts));

  t.put("schedulers.ds_w1", num(c.schedulers.ds.channel));
  t.put("schedulers.ds_w2", num(c.schedulers.ds.urgency));
  t.put("schedulers.mmf_redistribute", c.schedulers.mmf_redistribute ? "true" : "false");

  t.put("run.seed", c.sim.seed);
  t.put("run.out_dir", c.out_dir);
  t.put("run.checkpoint", c.checkpoint);
  t.put("run.eval_episodes", c.eval_episodes);
  t.put("run.policies", detail::join(c.policies));
  t.put("run.checkpoint_every", c.checkpoint_every);
  t.put("run.threads", c.threads);
  return t;
}

inline std::string emit_config(const ExperimentConfig& c) {
  std::ostringstream out;
  boost::property_tree::write_ini(out, to_ptree(c));
  return out.str();
}

// Missing keys keep their defaults, so an empty document yields the default setup.
inline ExperimentConfig parse_config(std::istream& in) {
  boost::property_tree::ptree t;
  try {
    boost::property_tree::read_ini(in, t);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError(std::string("config syntax: ") + e.what());
  }
  const auto known = to_ptree(ExperimentConfig{});
  for (const auto& [section, body] : t) {
    if (!known.get_child_optional(section)) throw ConfigError(section + ": unknown section");
    if (!body.data().empty()) throw ConfigError(section + ": key outside a section");
    for (const auto& [key, value] : body)
      if (!known.get_child(section).get_child_optional(key))
        throw ConfigError(section + "." + key + ": unknown key");
  }

  ExperimentConfig c;
  auto str = [&](const std::string& key) -> std::optional<std::string> {
    auto v = t.get_optional<std::string>(key);
    if (!v) return std::nullopt;
    return *v;
  };
  auto get = [&]<typename T>(const std::string& key, T& field) {
    if (auto v = str(key)) field = detail::parse_value<T>(*v, key);
  };

  get("sim.num_users", c.sim.num_users);
  get("sim.num_resources", c.sim.num_resources);
  get("sim.job_probability", c.sim.job_probability);
  if (auto v = str("sim.profiles")) {
    c.sim.profiles.clear();
    for (const auto& p : detail::split_list(*v)) c.sim.profiles.push_back(detail::parse_profile(p));
  }
  get("sim.lattice_half_extent", c.sim.lattice_half_extent);
  get("sim.steps_per_episode", c.sim.steps_per_episode);
  get("sim.tx_snr_db", c.sim.tx_snr_db);
  if (auto v = str("sim.capacity_sum")) {
    if (*v == "scheduled") c.capacity_mode = CapacitySum::ScheduledUsers;
    else if (*v == "all") c.capacity_mode = CapacitySum::AllUsers;
    else throw ConfigError("sim.capacity_sum: expected 'scheduled' or 'all'");
  }

  get("agent.gamma", c.agent.gamma);
  get("agent.epsilon_start", c.agent.epsilon_start);
  get("agent.epsilon_end", c.agent.epsilon_end);
  get("agent.epsilon_decay_fraction", c.agent.epsilon_decay_fraction);
  get("agent.batch_size", c.agent.batch_size);
  get("agent.learning_rate", c.agent.learning_rate);
  get("agent.target_sync_period", c.agent.target_sync_period);
  get("agent.episodes", c.agent.episodes);
  get("agent.replay_capacity", c.agent.replay_capacity);
  if (auto v = str("agent.shared_layers")) {
    c.agent.shared_layers.clear();
    for (const auto& w : detail::split_list(*v))
      c.agent.shared_layers.push_back(detail::parse_value<int>(w, "agent.shared_layers"));
  }
  get("agent.branch_width", c.agent.branch_width);
  get("agent.importance_weights", c.agent.importance_weights);
  get("agent.importance_beta", c.agent.importance_beta);
  get("agent.scale_inputs", c.agent.scale_inputs);

  get("reward.w_capacity", c.reward.capacity);
  get("reward.w_packet_rate", c.reward.packet_rate);
  get("reward.w_timeouts", c.reward.timeouts);
  get("reward.w_ev_timeouts", c.reward.ev_timeouts);

  get("schedulers.ds_w1", c.schedulers.ds.channel);
  get("schedulers.ds_w2", c.schedulers.ds.urgency);
  get("schedulers.mmf_redistribute", c.schedulers.mmf_redistribute);

  get("run.seed", c.sim.seed);
  if (auto v = str("run.out_dir")) c.out_dir = *v;
  if (auto v = str("run.checkpoint")) c.checkpoint = *v;
  get("run.eval_episodes", c.eval_episodes);
  if (auto v = str("run.policies")) c.policies = detail::split_list(*v);
  get("run.checkpoint_every", c.checkpoint_every);
  get("run.threads", c.threads);

  try {
    c.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return c;
}

inline ExperimentConfig parse_config(const std::string& text) {
  std::istringstream in(text);
  return parse_config(in);
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  return parse_config(in);
}

}  // namespace rbsched
