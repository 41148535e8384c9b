#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "rbsched/random.hpp"

namespace rbsched {

struct Experience {
  std::vector<float> state;
  int action = 0;
  double reward = 0.0;
  std::vector<float> next_state;
  bool terminal = false;
};

// Binary tree over leaf priorities holding subtree sums and maxima. Every update
// recomputes the path to the root from the children, so internal nodes are always
// exactly the sum/max of their leaves.
class SumTree {
 public:
  explicit SumTree(std::size_t capacity) {
    if (capacity == 0) throw std::invalid_argument("SumTree capacity must be positive");
    leaves_ = std::bit_ceil(capacity);
    sum_.assign(2 * leaves_, 0.0);
    max_.assign(2 * leaves_, 0.0);
  }

  std::size_t leaf_count() const { return leaves_; }
  double total() const { return sum_[1]; }
  double max() const { return max_[1]; }
  double get(std::size_t i) const { return sum_[leaves_ + i]; }

  void set(std::size_t i, double priority) {
    std::size_t node = leaves_ + i;
    sum_[node] = priority;
    max_[node] = priority;
    for (node /= 2; node >= 1; node /= 2) {
      sum_[node] = sum_[2 * node] + sum_[2 * node + 1];
      max_[node] = std::max(max_[2 * node], max_[2 * node + 1]);
    }
  }

  // Leaf whose prefix interval contains `mass`, for mass in [0, total()).
  std::size_t find(double mass) const {
    std::size_t node = 1;
    while (node < leaves_) {
      const double left = sum_[2 * node];
      if (mass < left || sum_[2 * node + 1] <= 0.0) {
        node = 2 * node;
      } else {
        mass -= left;
        node = 2 * node + 1;
      }
    }
    return node - leaves_;
  }

 private:
  std::size_t leaves_ = 0;
  std::vector<double> sum_;
  std::vector<double> max_;
};

struct ReplaySample {
  std::size_t index = 0;
  const Experience* experience = nullptr;
  double probability = 0.0;
};

// Bounded experience store with priority-proportional sampling (exponent 1).
class PrioritizedReplay {
 public:
  static constexpr double kPriorityFloor = 1e-3;

  explicit PrioritizedReplay(std::size_t capacity) : capacity_(capacity), tree_(capacity) {
    items_.reserve(std::min<std::size_t>(capacity, 1 << 16));
  }

  std::size_t size() const { return items_.size(); }
  std::size_t capacity() const { return capacity_; }
  bool empty() const { return items_.empty(); }
  double total_priority() const { return tree_.total(); }
  double priority(std::size_t i) const { return tree_.get(i); }
  const Experience& at(std::size_t i) const { return items_.at(i); }
  const SumTree& tree() const { return tree_; }

  // Inserted at the current maximum priority (1 when empty); evicts the oldest when full.
  std::size_t push(Experience e) {
    const double p = items_.empty() ? 1.0 : tree_.max();
    std::size_t slot;
    if (items_.size() < capacity_) {
      slot = items_.size();
      items_.push_back(std::move(e));
    } else {
      slot = next_;
      items_[slot] = std::move(e);
    }
    next_ = (slot + 1) % capacity_;
    tree_.set(slot, p);
    return slot;
  }

  // Independent draws with replacement, P(i) = p_i / sum p.
  std::vector<ReplaySample> sample(std::size_t batch, Rng& rng) const {
    if (items_.empty()) throw std::logic_error("cannot sample from an empty replay store");
    std::vector<ReplaySample> out;
    out.reserve(batch);
    const double total = tree_.total();
    std::uniform_real_distribution<double> dist(0.0, total);
    for (std::size_t b = 0; b < batch; ++b) {
      std::size_t i = tree_.find(dist(rng));
      if (i >= items_.size()) i = items_.size() - 1;
      out.push_back({i, &items_[i], tree_.get(i) / total});
    }
    return out;
  }

  void update_priority(std::size_t index, double td_error) {
    if (index >= items_.size())
      throw std::out_of_range("replay index " + std::to_string(index) + " out of range");
    tree_.set(index, std::abs(td_error) + kPriorityFloor);
  }

  template <typename Indices, typename Errors>
  void update_priorities(const Indices& indices, const Errors& td_errors) {
    if (std::size(indices) != std::size(td_errors))
      throw std::invalid_argument("update_priorities: size mismatch");
    auto e = std::begin(td_errors);
    for (auto i : indices) update_priority(static_cast<std::size_t>(i), static_cast<double>(*e++));
  }

 private:
  std::size_t capacity_;
  std::vector<Experience> items_;
  std::size_t next_ = 0;
  SumTree tree_;
};

// Importance-sampling weights (N P(i))^-beta, normalized by their maximum.
inline std::vector<double> importance_weights(const std::vector<ReplaySample>& samples,
                                              std::size_t store_size, double beta) {
  std::vector<double> w(samples.size(), 1.0);
  double wmax = 0.0;
  for (std::size_t b = 0; b < samples.size(); ++b) {
    w[b] = std::pow(static_cast<double>(store_size) * samples[b].probability, -beta);
    wmax = std::max(wmax, w[b]);
  }
  if (wmax > 0.0)
    for (auto& x : w) x /= wmax;
  return w;
}

}  // namespace rbsched
