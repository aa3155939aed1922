#include "racerl/replay.hpp"

#include <algorithm>
#include <cmath>

#include "racerl/errors.hpp"

namespace racerl::replay {

namespace {

std::size_t next_power_of_two(std::size_t n) {
  std::size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

}  // namespace

SumTree::SumTree(std::size_t capacity)
    : leaves_(next_power_of_two(std::max<std::size_t>(capacity, 1))), nodes_(2 * leaves_, 0.0) {}

void SumTree::set(std::size_t leaf, double value) {
  if (leaf >= leaves_) throw std::out_of_range("SumTree::set: leaf out of range");
  std::size_t i = leaves_ + leaf;
  nodes_[i] = value;
  for (i >>= 1; i >= 1; i >>= 1) nodes_[i] = nodes_[2 * i] + nodes_[2 * i + 1];
}

std::size_t SumTree::find(double mass) const {
  std::size_t i = 1;
  while (i < leaves_) {
    const double left = nodes_[2 * i];
    if (mass < left || nodes_[2 * i + 1] <= 0.0) {
      i = 2 * i;
    } else {
      mass -= left;
      i = 2 * i + 1;
    }
  }
  return i - leaves_;
}

double SumTree::max_consistency_error() const {
  double worst = 0.0;
  for (std::size_t i = 1; i < leaves_; ++i)
    worst = std::max(worst, std::abs(nodes_[i] - (nodes_[2 * i] + nodes_[2 * i + 1])));
  return worst;
}

void PERConfig::validate() const {
  if (alpha < 0.0) throw ConfigError("PER alpha must be >= 0");
  if (!(epsilon > 0.0)) throw ConfigError("PER epsilon must be > 0");
  if (lambda3 < 0.0) throw ConfigError("PER lambda3 must be >= 0");
}

double priority(double td_error, double actor_grad_sq, const PERConfig& config) {
  return td_error * td_error + config.lambda3 * actor_grad_sq + config.epsilon;
}

// ---------------------------------------------------------------------------

ReplayBuffer::ReplayBuffer(std::size_t capacity)
    : capacity_(capacity), prioritized_(false), tree_(1) {
  if (capacity_ == 0) throw ConfigError("replay capacity must be positive");
}

ReplayBuffer::ReplayBuffer(std::size_t capacity, PERConfig per)
    : capacity_(capacity), prioritized_(true), per_(per), tree_(capacity) {
  if (capacity_ == 0) throw ConfigError("replay capacity must be positive");
  per_.validate();
}

void ReplayBuffer::push(Transition t) {
  if (size_ < capacity_) {
    data_.push_back(std::move(t));
    serials_.push_back(stats_.pushes);
    raw_priority_.push_back(0.0);
    ++size_;
  } else {
    data_[head_] = std::move(t);
    serials_[head_] = stats_.pushes;
  }
  if (prioritized_) {
    raw_priority_[head_] = max_priority_;
    tree_.set(head_, std::pow(max_priority_, per_.alpha));
  }
  ++stats_.pushes;
  head_ = newer(head_);
}

bool ReplayBuffer::valid(const SampleHandle& h) const {
  return h.slot < size_ && serials_[h.slot] == h.serial;
}

std::size_t ReplayBuffer::oldest_slot() const { return size_ < capacity_ ? 0 : head_; }

bool ReplayBuffer::follows(std::size_t a, std::size_t b) const {
  if (a >= size_ || b >= size_ || a == newest_slot()) return false;
  if (b != newer(a)) return false;
  return data_[a].episode == data_[b].episode && data_[b].step == data_[a].step + 1;
}

Batch ReplayBuffer::sample_uniform(std::size_t n, std::mt19937_64& rng) const {
  if (size_ == 0) throw NotReadyError("sample_uniform: buffer is empty");
  std::uniform_int_distribution<std::size_t> pick(0, size_ - 1);
  Batch b;
  b.handles.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t slot = pick(rng);
    b.handles.push_back({slot, serials_[slot]});
  }
  b.weights.assign(n, 1.0);
  return b;
}

Batch ReplayBuffer::sample_prioritized(std::size_t n, std::mt19937_64& rng) const {
  if (!prioritized_) throw ConfigError("sample_prioritized on a uniform buffer");
  if (size_ == 0) throw NotReadyError("sample_prioritized: buffer is empty");
  const double total = tree_.total();
  if (!(total > 0.0)) throw NumericError("sample_prioritized: zero total priority");
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double segment = total / static_cast<double>(n);
  Batch b;
  b.handles.reserve(n);
  b.probabilities.reserve(n);
  for (std::size_t j = 0; j < n; ++j) {
    const double mass = (static_cast<double>(j) + unit(rng)) * segment;
    std::size_t slot = tree_.find(std::min(mass, std::nextafter(total, 0.0)));
    if (slot >= size_) slot = size_ - 1;
    b.handles.push_back({slot, serials_[slot]});
    b.probabilities.push_back(tree_.get(slot) / total);
  }
  if (per_.importance_sampling) {
    double max_w = 0.0;
    for (double p : b.probabilities) {
      b.weights.push_back(std::pow(static_cast<double>(size_) * p, -per_.beta));
      max_w = std::max(max_w, b.weights.back());
    }
    for (double& w : b.weights) w /= max_w;
  } else {
    b.weights.assign(n, 1.0);
  }
  return b;
}

void ReplayBuffer::update_priority(const SampleHandle& h, double td_error, double actor_grad_sq) {
  if (!prioritized_) return;
  if (!valid(h)) {
    ++stats_.stale_updates;
    return;
  }
  const double p = priority(td_error, actor_grad_sq, per_);
  if (!std::isfinite(p)) throw NumericError("update_priority: non-finite priority");
  raw_priority_[h.slot] = p;
  max_priority_ = std::max(max_priority_, p);
  tree_.set(h.slot, std::pow(p, per_.alpha));
}

double ReplayBuffer::probability(std::size_t slot) const {
  if (!prioritized_) return 1.0 / static_cast<double>(size_);
  return tree_.get(slot) / tree_.total();
}

Window ReplayBuffer::assemble_window(std::size_t slot, int w) const {
  if (slot >= size_) throw std::out_of_range("assemble_window: slot not in buffer");
  if (w < 1) throw ShapeError("assemble_window: w must be >= 1");
  std::vector<std::size_t> chain{slot};
  std::size_t j = slot;
  while (static_cast<int>(chain.size()) < w && j != oldest_slot()) {
    const std::size_t prev = older(j);
    if (!follows(prev, j)) break;
    chain.push_back(prev);
    j = prev;
  }
  Window win;
  win.states.reserve(static_cast<std::size_t>(w));
  const std::size_t first = chain.back();
  for (int k = static_cast<int>(chain.size()); k < w; ++k) {
    win.states.push_back(&data_[first].state);
    win.actions.push_back(data_[first].action);
  }
  for (auto it = chain.rbegin(); it != chain.rend(); ++it) {
    win.states.push_back(&data_[*it].state);
    win.actions.push_back(data_[*it].action);
  }
  return win;
}

Window ReplayBuffer::assemble_next_window(std::size_t slot, int w, const Action& last_action) const {
  Window win = assemble_window(slot, w);
  win.states.erase(win.states.begin());
  win.actions.erase(win.actions.begin());
  win.states.push_back(&data_[slot].next_state);
  win.actions.push_back(last_action);
  return win;
}

NStep ReplayBuffer::assemble_nstep(std::size_t slot, int n, double gamma) const {
  if (slot >= size_) throw std::out_of_range("assemble_nstep: slot not in buffer");
  if (n < 1) throw ShapeError("assemble_nstep: n must be >= 1");
  NStep out;
  double discount = 1.0;
  std::size_t j = slot;
  for (int k = 0; k < n; ++k) {
    const Transition& t = data_[j];
    out.discounted_reward += discount * t.reward;
    discount *= gamma;
    out.horizon = k + 1;
    out.last_slot = j;
    out.termination = t.termination;
    if (t.termination != Termination::none || k + 1 == n) break;
    const std::size_t next = newer(j);
    if (!follows(j, next)) break;
    j = next;
  }
  return out;
}

}  // namespace racerl::replay
