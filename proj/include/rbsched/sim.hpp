#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "rbsched/random.hpp"

namespace rbsched {

// ---------------------------------------------------------------------------
// Domain types
// ---------------------------------------------------------------------------

struct UserProfile {
  std::string name;
  int initial_timeout = 1;  // steps
  int max_job_size = 1;     // resource blocks
  bool emergency = false;

  friend bool operator==(const UserProfile&, const UserProfile&) = default;
};

namespace profiles {
inline UserProfile normal() { return {"normal", 20, 30, false}; }
inline UserProfile high_datarate() { return {"high_datarate", 20, 40, false}; }
inline UserProfile low_latency() { return {"low_latency", 2, 8, false}; }
inline UserProfile emergency_vehicle() { return {"emergency_vehicle", 1, 16, true}; }

// Throws std::invalid_argument for unknown names.
inline UserProfile by_name(const std::string& name) {
  if (name == "normal") return normal();
  if (name == "high_datarate") return high_datarate();
  if (name == "low_latency") return low_latency();
  if (name == "emergency_vehicle" || name == "ev") return emergency_vehicle();
  throw std::invalid_argument("unknown user profile '" + name + "'");
}

// Five normal, two high datarate, two low latency, one emergency vehicle.
inline std::vector<UserProfile> default_mix() {
  std::vector<UserProfile> mix(5, normal());
  mix.push_back(high_datarate());
  mix.push_back(high_datarate());
  mix.push_back(low_latency());
  mix.push_back(low_latency());
  mix.push_back(emergency_vehicle());
  return mix;
}
}  // namespace profiles

enum class Direction : std::uint8_t { North = 0, East = 1, South = 2, West = 3, Stop = 4 };

inline Direction turn_left(Direction d) {
  return d == Direction::Stop ? d : static_cast<Direction>((static_cast<int>(d) + 3) % 4);
}
inline Direction turn_right(Direction d) {
  return d == Direction::Stop ? d : static_cast<Direction>((static_cast<int>(d) + 1) % 4);
}
inline Direction opposite(Direction d) {
  return d == Direction::Stop ? d : static_cast<Direction>((static_cast<int>(d) + 2) % 4);
}

struct Position {
  int x = 0;
  int y = 0;
  friend bool operator==(const Position&, const Position&) = default;
};

inline Position moved(Position p, Direction d) {
  switch (d) {
    case Direction::North: return {p.x, p.y + 1};
    case Direction::East: return {p.x + 1, p.y};
    case Direction::South: return {p.x, p.y - 1};
    case Direction::West: return {p.x - 1, p.y};
    case Direction::Stop: break;
  }
  return p;
}

inline bool on_lattice(Position p, int half_extent) {
  return std::abs(p.x) <= half_extent && std::abs(p.y) <= half_extent;
}

inline double distance_to_origin(Position p) { return std::hypot(double(p.x), double(p.y)); }

struct UserState {
  int user_id = 0;
  UserProfile profile;
  Position position;
  Direction direction = Direction::North;
  // Last moving direction; left/right turns out of a stop are taken relative to it.
  Direction heading = Direction::North;
  double gain = 0.0;
  std::int64_t lifetime_scheduled = 0;
  std::int64_t lifetime_requested = 0;
  std::int64_t lifetime_timeouts = 0;

  bool is_ev() const { return profile.emergency; }
};

struct Job {
  std::uint64_t job_id = 0;
  int owner = 0;
  int remaining_size = 0;
  int original_size = 0;
  int time_to_timeout = 0;
};

using JobQueue = std::vector<Job>;

// Blocks granted per job for one step. Ordered by job id so iteration is deterministic.
struct Allocation {
  std::map<std::uint64_t, int> assignments;

  void grant(std::uint64_t job_id, int blocks) {
    if (blocks > 0) assignments[job_id] += blocks;
  }
  int granted(std::uint64_t job_id) const {
    auto it = assignments.find(job_id);
    return it == assignments.end() ? 0 : it->second;
  }
  int total() const {
    int sum = 0;
    for (const auto& [id, n] : assignments) sum += n;
    return sum;
  }
  bool empty() const { return assignments.empty(); }
};

struct FailedJob {
  int owner = 0;
  int discarded_blocks = 0;
  bool owner_is_ev = false;
};

struct StepOutcome {
  std::vector<int> scheduled_users;  // ascending user index
  std::vector<FailedJob> failed_jobs;
  std::vector<double> gains;
  std::vector<double> packet_rates;
};

struct SimConfig {
  int num_users = 10;
  int num_resources = 16;
  double job_probability = 0.2;
  std::vector<UserProfile> profiles = profiles::default_mix();
  int lattice_half_extent = 4;  // 9x9 nodes
  int steps_per_episode = 50;
  double tx_snr_db = 13.0;
  std::uint64_t seed = 0;

  double tx_snr_linear() const { return std::pow(10.0, tx_snr_db / 10.0); }

  // Throws std::invalid_argument naming the offending field.
  void validate() const {
    if (num_users < 1) throw std::invalid_argument("sim.num_users: must be >= 1");
    if (static_cast<int>(profiles.size()) != num_users)
      throw std::invalid_argument("sim.profiles: expected " + std::to_string(num_users) +
                                  " entries, got " + std::to_string(profiles.size()));
    if (num_resources < 1) throw std::invalid_argument("sim.num_resources: must be >= 1");
    if (!(job_probability >= 0.0 && job_probability <= 1.0))
      throw std::invalid_argument("sim.job_probability: must lie in [0, 1]");
    if (lattice_half_extent < 0)
      throw std::invalid_argument("sim.lattice_half_extent: must be >= 0");
    if (steps_per_episode < 1)
      throw std::invalid_argument("sim.steps_per_episode: must be >= 1");
    if (!std::isfinite(tx_snr_db)) throw std::invalid_argument("sim.tx_snr_db: must be finite");
    for (const auto& p : profiles) {
      if (p.initial_timeout < 1)
        throw std::invalid_argument("sim.profiles: '" + p.name + "' initial timeout must be >= 1");
      if (p.max_job_size < 1)
        throw std::invalid_argument("sim.profiles: '" + p.name + "' max job size must be >= 1");
    }
  }
};

class AllocationError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// ---------------------------------------------------------------------------
// Mobility
// ---------------------------------------------------------------------------

inline constexpr double kKeepDirectionProbability = 0.98;

// Draws the next direction before boundary handling. A moving vehicle keeps its
// direction w.p. 0.98, never reverses, and splits the rest evenly between left,
// right and stop. A stopped vehicle stays stopped w.p. 0.98 and otherwise resumes
// its heading or turns left/right of it.
inline Direction sample_direction(Direction current, Direction heading, double draw) {
  if (draw < kKeepDirectionProbability) return current;
  const double residual = (draw - kKeepDirectionProbability) / (1.0 - kKeepDirectionProbability);
  const int branch = std::min(2, static_cast<int>(residual * 3.0));
  if (current == Direction::Stop) {
    if (branch == 0) return heading;
    return branch == 1 ? turn_left(heading) : turn_right(heading);
  }
  if (branch == 0) return turn_left(current);
  return branch == 1 ? turn_right(current) : Direction::Stop;
}

inline void advance_user(UserState& user, int half_extent, Rng& rng) {
  Direction next = sample_direction(user.direction, user.heading, uniform01(rng));
  if (!on_lattice(moved(user.position, next), half_extent)) {
    std::array<Direction, 4> feasible{};
    int count = 0;
    for (Direction d : {Direction::North, Direction::East, Direction::South, Direction::West})
      if (on_lattice(moved(user.position, d), half_extent)) feasible[count++] = d;
    if (count == 0) {
      next = Direction::Stop;
    } else {
      next = feasible[std::uniform_int_distribution<int>(0, count - 1)(rng)];
    }
  }
  user.direction = next;
  if (next != Direction::Stop) user.heading = next;
  user.position = moved(user.position, next);
}

inline void advance_mobility(std::vector<UserState>& users, int half_extent, Rng& rng) {
  for (auto& u : users) advance_user(u, half_extent, rng);
}

// ---------------------------------------------------------------------------
// Channel
// ---------------------------------------------------------------------------

inline constexpr double kRayleighScale = 0.70710678118654752440;  // 1/sqrt(2)

inline double path_loss(double distance) {
  return distance <= 1.0 ? 1.0 : 1.0 / distance;
}

// |h|^2 with |h| ~ Rayleigh(scale); E|h|^2 = 2 scale^2.
inline double draw_fading_power(Rng& rng, double rayleigh_scale = kRayleighScale) {
  const double u = 1.0 - uniform01(rng);  // (0, 1]
  const double amplitude = rayleigh_scale * std::sqrt(-2.0 * std::log(u));
  return amplitude * amplitude;
}

inline double channel_gain(double fading_power, Position position) {
  return fading_power * path_loss(distance_to_origin(position));
}

inline double realize_channel(const UserState& user, Rng& rng,
                              double rayleigh_scale = kRayleighScale) {
  return channel_gain(draw_fading_power(rng, rayleigh_scale), user.position);
}

// ---------------------------------------------------------------------------
// Jobs and bookkeeping
// ---------------------------------------------------------------------------

inline std::vector<Job> generate_jobs(std::vector<UserState>& users, double job_probability,
                                      std::uint64_t& next_job_id, Rng& rng) {
  std::vector<Job> created;
  for (auto& u : users) {
    if (uniform01(rng) >= job_probability) continue;
    const int size = std::uniform_int_distribution<int>(1, u.profile.max_job_size)(rng);
    created.push_back(Job{next_job_id++, u.user_id, size, size, u.profile.initial_timeout});
    u.lifetime_requested += size;
  }
  return created;
}

inline void check_allocation(const JobQueue& queue, const Allocation& allocation,
                             int num_resources) {
  long total = 0;
  for (const auto& [id, blocks] : allocation.assignments) {
    auto it = std::find_if(queue.begin(), queue.end(),
                           [id = id](const Job& j) { return j.job_id == id; });
    if (it == queue.end())
      throw AllocationError("allocation references unknown job " + std::to_string(id));
    if (blocks < 0) throw AllocationError("negative grant for job " + std::to_string(id));
    if (blocks > it->remaining_size)
      throw AllocationError("grant exceeds remaining size of job " + std::to_string(id));
    total += blocks;
  }
  if (total > num_resources)
    throw AllocationError("allocation uses " + std::to_string(total) + " of " +
                          std::to_string(num_resources) + " blocks");
}

// Returns the indices of users that received at least one block.
inline std::vector<int> apply_allocation(JobQueue& queue, const Allocation& allocation,
                                         std::vector<UserState>& users, int num_resources) {
  check_allocation(queue, allocation, num_resources);
  std::vector<bool> served(users.size(), false);
  for (auto& job : queue) {
    const int blocks = allocation.granted(job.job_id);
    if (blocks == 0) continue;
    job.remaining_size -= blocks;
    users[job.owner].lifetime_scheduled += blocks;
    served[job.owner] = true;
  }
  std::erase_if(queue, [](const Job& j) { return j.remaining_size == 0; });
  std::vector<int> scheduled;
  for (std::size_t u = 0; u < users.size(); ++u)
    if (served[u]) scheduled.push_back(static_cast<int>(u));
  return scheduled;
}

inline std::vector<FailedJob> expire_jobs(JobQueue& queue, std::vector<UserState>& users) {
  std::vector<FailedJob> failed;
  for (auto& job : queue) {
    job.time_to_timeout -= 1;
    if (job.time_to_timeout <= 0 && job.remaining_size > 0) {
      users[job.owner].lifetime_timeouts += job.remaining_size;
      failed.push_back({job.owner, job.remaining_size, users[job.owner].is_ev()});
    }
  }
  std::erase_if(queue, [](const Job& j) { return j.time_to_timeout <= 0; });
  return failed;
}

// Lifetime ratio of scheduled to requested blocks; 1 while nothing was requested.
inline double packet_rate(const UserState& user) {
  if (user.lifetime_requested == 0) return 1.0;
  return static_cast<double>(user.lifetime_scheduled) /
         static_cast<double>(user.lifetime_requested);
}

// ---------------------------------------------------------------------------
// Simulator
// ---------------------------------------------------------------------------

// One time step is split in two halves so a scheduler can act in between:
//   begin_step():  mobility, channel realization, job generation
//   finish_step(): apply allocation, expire jobs, snapshot outcome
class Simulator {
 public:
  explicit Simulator(SimConfig config) : config_(std::move(config)) {
    config_.validate();
    reset(config_.seed);
  }

  // Fresh episode: empty queue, zeroed lifetime counters, random positions.
  void reset(std::uint64_t episode_seed) {
    rng_ = make_rng(episode_seed, Stream::Environment);
    queue_.clear();
    next_job_id_ = 0;
    step_ = 0;
    const int h = config_.lattice_half_extent;
    std::uniform_int_distribution<int> coord(-h, h);
    std::uniform_int_distribution<int> heading(0, 3);
    users_.assign(config_.num_users, UserState{});
    for (int u = 0; u < config_.num_users; ++u) {
      auto& s = users_[u];
      s.user_id = u;
      s.profile = config_.profiles[u];
      s.position = {coord(rng_), coord(rng_)};
      s.direction = static_cast<Direction>(heading(rng_));
      s.heading = s.direction;
    }
  }

  void begin_step() {
    advance_mobility(users_, config_.lattice_half_extent, rng_);
    for (auto& u : users_) u.gain = realize_channel(u, rng_);
    auto created = generate_jobs(users_, config_.job_probability, next_job_id_, rng_);
    queue_.insert(queue_.end(), created.begin(), created.end());
  }

  StepOutcome finish_step(const Allocation& allocation) {
    StepOutcome out;
    out.scheduled_users = apply_allocation(queue_, allocation, users_, config_.num_resources);
    out.failed_jobs = expire_jobs(queue_, users_);
    out.gains.reserve(users_.size());
    out.packet_rates.reserve(users_.size());
    for (const auto& u : users_) {
      out.gains.push_back(u.gain);
      out.packet_rates.push_back(packet_rate(u));
    }
    ++step_;
    return out;
  }

  bool episode_done() const { return step_ >= config_.steps_per_episode; }
  int step_index() const { return step_; }

  const SimConfig& config() const { return config_; }
  const JobQueue& queue() const { return queue_; }
  const std::vector<UserState>& users() const { return users_; }

 private:
  SimConfig config_;
  Rng rng_;
  JobQueue queue_;
  std::vector<UserState> users_;
  std::uint64_t next_job_id_ = 0;
  int step_ = 0;
};

}  // namespace rbsched
