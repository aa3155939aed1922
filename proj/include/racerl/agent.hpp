#pragma once

#include <array>
#include <cstdint>
#include <deque>
#include <iosfwd>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "racerl/car_sim.hpp"
#include "racerl/nn.hpp"
#include "racerl/replay.hpp"

namespace racerl::agent {

using nn::Matrix;
using nn::NetworkParams;
using sim::Action;
using sim::Termination;

enum class Variant { win1, win4, win8, ms2, ms3, ms4, per40k, per1m, lstm4, lstm8 };

const char* to_string(Variant v);
Variant variant_from_string(const std::string& s);
std::vector<Variant> all_variants();
/// "WIN", "MS", "PER" or "LSTM".
std::string family(Variant v);

struct AgentConfig {
  Variant variant = Variant::win1;
  int observation_size = 29;
  int window = 1;
  int nstep = 1;
  bool prioritized = false;
  bool lstm_critic = false;
  std::size_t buffer_capacity = 1'000'000;
  replay::PERConfig per;

  double gamma = 0.99;
  double tau = 1e-3;
  int batch_size = 32;
  int hidden = 64;
  double actor_lr = 1e-4;
  double critic_lr = 1e-3;
  /// Bootstrap the target of step-cap terminations like ordinary steps.
  bool adopted_target = true;
  /// Weight of the squared excess of actor pre-activations beyond a margin,
  /// added to the actor loss. Keeps the squashing heads out of their flat
  /// tails. Steering is pulled toward zero; pedals may approach their bounds.
  double preactivation_penalty = 0.1;
  double steer_preactivation_margin = 0.0;
  double pedal_preactivation_margin = 3.0;
  /// L2 weight decay on critic weight matrices.
  double critic_weight_decay = 0.0;

  // exploration
  double ou_theta = 0.15;
  double ou_dt = 1.0;
  double sigma_steer = 0.3;
  double sigma_throttle = 0.2;
  double sigma_brake = 0.2;
  double sigma_brake_burst = 0.6;
  double brake_burst_mean = 0.5;
  double noise_probability = 0.1;
  double burst_probability = 0.1;
  std::int64_t exploration_horizon = 100'000;

  /// Fixes window, n-step and buffer settings for a tournament variant.
  static AgentConfig for_variant(Variant v, bool lac_enabled = false);
  /// Window length seen by the actor (the LSTM variants feed it the latest state only).
  int actor_window() const { return lstm_critic ? 1 : window; }
  void validate() const;
};

nlohmann::json to_json(const AgentConfig& c);
AgentConfig agent_config_from_json(const nlohmann::json& j);

// ---------------------------------------------------------------------------
// Exploration

struct OUState {
  double x = 0.0;
  double theta = 0.15;
  double sigma = 0.2;
  double mean = 0.0;
};

/// x <- x + theta (mean - x) dt + sigma sqrt(dt) N(0, 1). Returns (x, new state).
std::pair<double, OUState> ou_step(const OUState& state, double dt, std::mt19937_64& rng);

struct ExplorationState {
  double epsilon_prime = 1.0;
  std::int64_t steps = 0;
  std::int64_t horizon = 100'000;
  double noise_probability = 0.1;
  double burst_probability = 0.1;
  double dt = 1.0;
  std::array<OUState, 3> ou;  // steer, throttle, brake
  OUState burst;
  std::mt19937_64 rng;
  bool last_was_burst = false;

  static ExplorationState from_config(const AgentConfig& c, std::uint64_t seed);
  /// Linear annealing: epsilon' = max(0, 1 - steps / horizon).
  void advance();
};

/// Adds exploration to a deterministic action: each dimension receives
/// epsilon'-scaled OU noise with probability `noise_probability`; with
/// probability `burst_probability` the brake gets the stronger burst process
/// and throttle is multiplied by (1 - epsilon'). Result is clamped.
Action explore(const Action& deterministic, ExplorationState& expl);

// ---------------------------------------------------------------------------
// Targets

struct TargetInputs {
  double discounted_reward = 0.0;  // sum_k gamma^k r_{i+k}
  int horizon = 1;                 // m
  Termination termination = Termination::none;
  double bootstrap_value = 0.0;    // Q'(s_{i+m}, mu'(s_{i+m}))
};

/// Premature terminal -> R. Step-cap terminal -> R + gamma^m Q' under the
/// adopted-target rule, R otherwise. Non-terminal -> R + gamma^m Q'.
double compute_target(const TargetInputs& in, double gamma, bool adopted_target = true);

// ---------------------------------------------------------------------------
// Networks

/// Actor: dense body with a linear 3-unit head squashed to
/// steer = tanh, throttle = sigmoid, brake = sigmoid.
struct Actor {
  NetworkParams body;

  struct Cache {
    nn::ForwardCache body;
    Matrix squashed;
  };
  Matrix forward(const Matrix& input, Cache* cache = nullptr) const;
  /// Parameter gradients and input gradient for dL/d(action).
  nn::Gradients backward(const Cache& cache, const Matrix& action_gradient,
                         bool want_param_gradients = true) const;
};

Actor make_actor(int inputs, int hidden, std::mt19937_64& rng);

/// Critic inputs. Feed-forward critic: one stacked-window state matrix and
/// one action matrix. LSTM critic: w state matrices and w action matrices.
struct CriticInput {
  std::vector<Matrix> states;
  std::vector<Matrix> actions;
};

struct Critic {
  NetworkParams stream;  // state -> hidden
  NetworkParams head;    // [hidden; action] -> Q   (LSTM cell first when recurrent)
  bool recurrent = false;

  struct Cache {
    nn::ForwardCache stream;
    nn::ForwardCache head;
    nn::SequenceCache sequence;
    std::size_t steps = 1;
    Eigen::Index batch = 0;
  };
  struct Grads {
    NetworkParams stream;
    NetworkParams head;
    Matrix action;  // dQ/da for the last action, 3 x N
  };

  Matrix forward(const CriticInput& input, Cache* cache = nullptr) const;
  Grads backward(const Cache& cache, const Matrix& q_gradient, bool want_param_gradients = true) const;
};

Critic make_critic(int state_inputs, int hidden, bool recurrent, std::mt19937_64& rng);

// ---------------------------------------------------------------------------

/// Rolling window of the current episode's observations, padded at the
/// front by repeating the first one.
class ObservationWindow {
 public:
  explicit ObservationWindow(int w = 1) : w_(w) {}
  void reset(std::vector<double> first);
  void push(std::vector<double> obs);
  std::vector<std::vector<double>> view() const;
  /// Flattened window (oldest first), ready for the actor.
  std::vector<double> stacked() const;

 private:
  int w_;
  std::deque<std::vector<double>> items_;
};

struct TrainStats {
  double critic_loss = 0.0;
  double actor_objective = 0.0;
  std::vector<double> td_errors;
  std::vector<double> actor_grad_sq;
};

class Agent {
 public:
  Agent(AgentConfig config, std::uint64_t seed);

  const AgentConfig& config() const { return config_; }

  /// Deterministic action for a stacked actor window (actor_window() * obs size values).
  Action act(std::span<const double> stacked_window) const;
  Action act_explore(std::span<const double> stacked_window, ExplorationState& expl) const;

  /// Q for a window of (state, action) pairs, oldest first. Feed-forward
  /// critics use the stacked states and the last action.
  double critic_value(std::span<const std::vector<double>> states,
                      std::span<const Action> actions) const;

  TrainStats train_step(replay::ReplayBuffer& buffer);

  replay::ReplayBuffer make_buffer() const;

  Actor& actor() { return actor_; }
  Critic& critic() { return critic_; }
  Actor& target_actor() { return target_actor_; }
  Critic& target_critic() { return target_critic_; }
  const Actor& actor() const { return actor_; }
  const Critic& critic() const { return critic_; }
  const Actor& target_actor() const { return target_actor_; }
  const Critic& target_critic() const { return target_critic_; }
  std::mt19937_64& rng() { return rng_; }

  void save(std::ostream& out) const;
  static Agent load(std::istream& in);
  void save(const std::string& path) const;
  static Agent load(const std::string& path);

 private:
  AgentConfig config_;
  std::mt19937_64 rng_;
  Actor actor_;
  Critic critic_;
  Actor target_actor_;
  Critic target_critic_;
  nn::AdamState actor_opt_;
  nn::AdamState critic_stream_opt_;
  nn::AdamState critic_head_opt_;
};

Action action_from_column(const Matrix& m, Eigen::Index col);

}  // namespace racerl::agent
