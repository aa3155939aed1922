#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "racerl/car_sim.hpp"

namespace racerl::replay {

using sim::Action;
using sim::Termination;

struct Transition {
  std::vector<double> state;
  Action action;
  double reward = 0.0;
  std::vector<double> next_state;
  Termination termination = Termination::none;
  std::uint64_t episode = 0;
  std::uint32_t step = 0;
};

/// Complete binary tree over a power-of-two number of leaves; every internal
/// node holds the sum of its children.
class SumTree {
 public:
  explicit SumTree(std::size_t capacity);

  std::size_t capacity() const { return leaves_; }
  void set(std::size_t leaf, double value);
  double get(std::size_t leaf) const { return nodes_[leaves_ + leaf]; }
  double total() const { return nodes_[1]; }
  /// Leaf whose cumulative range contains `mass` in [0, total()).
  std::size_t find(double mass) const;
  /// Largest |node - (left + right)| over all internal nodes.
  double max_consistency_error() const;

 private:
  std::size_t leaves_;
  std::vector<double> nodes_;  // 1-based heap layout, nodes_[0] unused
};

struct PERConfig {
  double alpha = 0.7;
  double lambda3 = 0.1;
  double epsilon = 1e-3;
  bool importance_sampling = false;
  double beta = 0.4;

  void validate() const;
};

/// p = delta^2 + lambda3 * |grad_a Q|^2 + epsilon
double priority(double td_error, double actor_grad_sq, const PERConfig& config);

struct SampleHandle {
  std::size_t slot = 0;
  std::uint64_t serial = 0;  // push counter at insertion; detects eviction
};

struct Batch {
  std::vector<SampleHandle> handles;
  std::vector<double> probabilities;  // P(i), prioritized buffers only
  std::vector<double> weights;        // importance weights (all 1 unless enabled)
};

struct NStep {
  double discounted_reward = 0.0;
  std::size_t last_slot = 0;  // transition whose next_state is the bootstrap state
  int horizon = 0;            // m
  Termination termination = Termination::none;  // of the last included transition
};

struct Window {
  std::vector<const std::vector<double>*> states;  // oldest first, size w
  std::vector<Action> actions;                     // matching actions
};

struct ReplayStats {
  std::uint64_t pushes = 0;
  std::uint64_t stale_updates = 0;
};

/// Ring buffer of transitions with optional proportional prioritisation.
class ReplayBuffer {
 public:
  /// Uniform buffer.
  explicit ReplayBuffer(std::size_t capacity);
  /// Prioritized buffer.
  ReplayBuffer(std::size_t capacity, PERConfig per);

  bool prioritized() const { return prioritized_; }
  std::size_t size() const { return size_; }
  std::size_t capacity() const { return capacity_; }
  const ReplayStats& stats() const { return stats_; }
  const PERConfig& per_config() const { return per_; }

  void push(Transition t);
  const Transition& at(std::size_t slot) const { return data_[slot]; }
  bool valid(const SampleHandle& h) const;

  Batch sample_uniform(std::size_t n, std::mt19937_64& rng) const;
  /// Stratified proportional sampling: the priority mass is split into n
  /// equal segments with one draw per segment.
  Batch sample_prioritized(std::size_t n, std::mt19937_64& rng) const;
  Batch sample(std::size_t n, std::mt19937_64& rng) const {
    return prioritized_ ? sample_prioritized(n, rng) : sample_uniform(n, rng);
  }

  void update_priority(const SampleHandle& h, double td_error, double actor_grad_sq);
  /// Raw (pre-exponent) priority currently assigned to a slot.
  double raw_priority(std::size_t slot) const { return raw_priority_[slot]; }
  double probability(std::size_t slot) const;
  const SumTree& tree() const { return tree_; }

  /// The w states (and actions) ending at `slot`, padded by repeating the
  /// episode's earliest stored transition. Never crosses an episode boundary.
  Window assemble_window(std::size_t slot, int w) const;
  /// Window ending at the next state of `slot`; `last_action` fills the final
  /// action entry.
  Window assemble_next_window(std::size_t slot, int w, const Action& last_action) const;

  /// n-step return from `slot`, truncated at the episode end or at the
  /// newest stored transition.
  NStep assemble_nstep(std::size_t slot, int n, double gamma) const;

 private:
  std::size_t newer(std::size_t slot) const { return (slot + 1) % capacity_; }
  std::size_t older(std::size_t slot) const { return (slot + capacity_ - 1) % capacity_; }
  std::size_t oldest_slot() const;
  std::size_t newest_slot() const { return older(head_); }
  /// True when `b` is the transition immediately following `a` in one episode.
  bool follows(std::size_t a, std::size_t b) const;

  std::size_t capacity_;
  bool prioritized_;
  PERConfig per_;
  std::vector<Transition> data_;
  std::vector<std::uint64_t> serials_;
  std::vector<double> raw_priority_;
  std::size_t head_ = 0;  // next slot to write
  std::size_t size_ = 0;
  double max_priority_ = 1.0;
  SumTree tree_;
  ReplayStats stats_;
};

}  // namespace racerl::replay
