#include "racerl/agent.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "racerl/errors.hpp"

namespace racerl::agent {

namespace {

constexpr char kMagic[8] = {'R', 'R', 'L', 'A', 'G', 'N', 'T', '1'};
constexpr std::uint32_t kVersion = 1;
constexpr int kActionSize = 3;

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

Matrix stack_rows(std::span<const Matrix> parts) {
  Eigen::Index rows = 0;
  for (const auto& p : parts) rows += p.rows();
  Matrix out(rows, parts.empty() ? 0 : parts.front().cols());
  Eigen::Index r = 0;
  for (const auto& p : parts) {
    out.middleRows(r, p.rows()) = p;
    r += p.rows();
  }
  return out;
}

Matrix action_matrix(std::span<const Action> actions) {
  Matrix m(kActionSize, static_cast<Eigen::Index>(actions.size()));
  for (std::size_t i = 0; i < actions.size(); ++i) {
    const auto c = static_cast<Eigen::Index>(i);
    m(0, c) = actions[i].steer;
    m(1, c) = actions[i].throttle;
    m(2, c) = actions[i].brake;
  }
  return m;
}

}  // namespace

const char* to_string(Variant v) {
  switch (v) {
    case Variant::win1: return "WIN1";
    case Variant::win4: return "WIN4";
    case Variant::win8: return "WIN8";
    case Variant::ms2: return "MS2";
    case Variant::ms3: return "MS3";
    case Variant::ms4: return "MS4";
    case Variant::per40k: return "PER40k";
    case Variant::per1m: return "PER1M";
    case Variant::lstm4: return "LSTM4";
    case Variant::lstm8: return "LSTM8";
  }
  return "WIN1";
}

std::vector<Variant> all_variants() {
  return {Variant::win1, Variant::win4,   Variant::win8,  Variant::ms2,   Variant::ms3,
          Variant::ms4,  Variant::per40k, Variant::per1m, Variant::lstm4, Variant::lstm8};
}

Variant variant_from_string(const std::string& s) {
  std::string upper = s;
  std::transform(upper.begin(), upper.end(), upper.begin(), [](unsigned char c) { return std::toupper(c); });
  for (Variant v : all_variants()) {
    std::string name = to_string(v);
    std::transform(name.begin(), name.end(), name.begin(), [](unsigned char c) { return std::toupper(c); });
    if (name == upper) return v;
  }
  throw ConfigError("unknown variant '" + s + "'");
}

std::string family(Variant v) {
  switch (v) {
    case Variant::win1:
    case Variant::win4:
    case Variant::win8: return "WIN";
    case Variant::ms2:
    case Variant::ms3:
    case Variant::ms4: return "MS";
    case Variant::per40k:
    case Variant::per1m: return "PER";
    case Variant::lstm4:
    case Variant::lstm8: return "LSTM";
  }
  return "WIN";
}

AgentConfig AgentConfig::for_variant(Variant v, bool lac_enabled) {
  AgentConfig c;
  c.variant = v;
  c.observation_size = static_cast<int>(sim::Observation::size(lac_enabled));
  switch (v) {
    case Variant::win1: c.window = 1; break;
    case Variant::win4: c.window = 4; break;
    case Variant::win8: c.window = 8; break;
    case Variant::ms2: c.nstep = 2; break;
    case Variant::ms3: c.nstep = 3; break;
    case Variant::ms4: c.nstep = 4; break;
    case Variant::per40k:
      c.prioritized = true;
      c.buffer_capacity = 40'000;
      break;
    case Variant::per1m:
      c.prioritized = true;
      c.buffer_capacity = 1'000'000;
      break;
    case Variant::lstm4:
      c.window = 4;
      c.lstm_critic = true;
      break;
    case Variant::lstm8:
      c.window = 8;
      c.lstm_critic = true;
      break;
  }
  return c;
}

void AgentConfig::validate() const {
  if (observation_size < 1) throw ConfigError("observation_size must be positive");
  if (window < 1 || nstep < 1) throw ConfigError("window and nstep must be >= 1");
  if (batch_size < 1 || hidden < 1) throw ConfigError("batch_size and hidden must be >= 1");
  if (buffer_capacity < 1) throw ConfigError("buffer_capacity must be positive");
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw ConfigError("gamma must lie in [0, 1]");
  if (!(tau >= 0.0 && tau <= 1.0)) throw ConfigError("tau must lie in [0, 1]");
  if (!(actor_lr > 0.0) || !(critic_lr > 0.0)) throw ConfigError("learning rates must be positive");
  for (double p : {noise_probability, burst_probability})
    if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("exploration probabilities must lie in [0, 1]");
  if (exploration_horizon < 1) throw ConfigError("exploration_horizon must be positive");
  if (!(ou_dt > 0.0) || ou_theta < 0.0) throw ConfigError("invalid OU parameters");
  if (preactivation_penalty < 0.0 || steer_preactivation_margin < 0.0 || pedal_preactivation_margin < 0.0 || critic_weight_decay < 0.0)
    throw ConfigError("regularisation weights must be >= 0");
  if (prioritized) per.validate();
}

nlohmann::json to_json(const AgentConfig& c) {
  return {
      {"variant", to_string(c.variant)},
      {"observation_size", c.observation_size},
      {"window", c.window},
      {"nstep", c.nstep},
      {"prioritized", c.prioritized},
      {"lstm_critic", c.lstm_critic},
      {"buffer_capacity", c.buffer_capacity},
      {"per_alpha", c.per.alpha},
      {"per_lambda3", c.per.lambda3},
      {"per_epsilon", c.per.epsilon},
      {"per_importance_sampling", c.per.importance_sampling},
      {"per_beta", c.per.beta},
      {"gamma", c.gamma},
      {"tau", c.tau},
      {"batch_size", c.batch_size},
      {"hidden", c.hidden},
      {"actor_lr", c.actor_lr},
      {"critic_lr", c.critic_lr},
      {"adopted_target", c.adopted_target},
      {"preactivation_penalty", c.preactivation_penalty},
      {"steer_preactivation_margin", c.steer_preactivation_margin},
      {"pedal_preactivation_margin", c.pedal_preactivation_margin},
      {"critic_weight_decay", c.critic_weight_decay},
      {"ou_theta", c.ou_theta},
      {"ou_dt", c.ou_dt},
      {"sigma_steer", c.sigma_steer},
      {"sigma_throttle", c.sigma_throttle},
      {"sigma_brake", c.sigma_brake},
      {"sigma_brake_burst", c.sigma_brake_burst},
      {"brake_burst_mean", c.brake_burst_mean},
      {"noise_probability", c.noise_probability},
      {"burst_probability", c.burst_probability},
      {"exploration_horizon", c.exploration_horizon},
  };
}

AgentConfig agent_config_from_json(const nlohmann::json& j) {
  AgentConfig c;
  if (j.contains("variant")) c = AgentConfig::for_variant(variant_from_string(j.at("variant")));
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  get("observation_size", c.observation_size);
  get("window", c.window);
  get("nstep", c.nstep);
  get("prioritized", c.prioritized);
  get("lstm_critic", c.lstm_critic);
  get("buffer_capacity", c.buffer_capacity);
  get("per_alpha", c.per.alpha);
  get("per_lambda3", c.per.lambda3);
  get("per_epsilon", c.per.epsilon);
  get("per_importance_sampling", c.per.importance_sampling);
  get("per_beta", c.per.beta);
  get("gamma", c.gamma);
  get("tau", c.tau);
  get("batch_size", c.batch_size);
  get("hidden", c.hidden);
  get("actor_lr", c.actor_lr);
  get("critic_lr", c.critic_lr);
  get("adopted_target", c.adopted_target);
  get("preactivation_penalty", c.preactivation_penalty);
  get("steer_preactivation_margin", c.steer_preactivation_margin);
  get("pedal_preactivation_margin", c.pedal_preactivation_margin);
  get("critic_weight_decay", c.critic_weight_decay);
  get("ou_theta", c.ou_theta);
  get("ou_dt", c.ou_dt);
  get("sigma_steer", c.sigma_steer);
  get("sigma_throttle", c.sigma_throttle);
  get("sigma_brake", c.sigma_brake);
  get("sigma_brake_burst", c.sigma_brake_burst);
  get("brake_burst_mean", c.brake_burst_mean);
  get("noise_probability", c.noise_probability);
  get("burst_probability", c.burst_probability);
  get("exploration_horizon", c.exploration_horizon);
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------

std::pair<double, OUState> ou_step(const OUState& state, double dt, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  OUState next = state;
  next.x = state.x + state.theta * (state.mean - state.x) * dt + state.sigma * std::sqrt(dt) * normal(rng);
  return {next.x, next};
}

ExplorationState ExplorationState::from_config(const AgentConfig& c, std::uint64_t seed) {
  ExplorationState e;
  e.horizon = c.exploration_horizon;
  e.noise_probability = c.noise_probability;
  e.burst_probability = c.burst_probability;
  e.dt = c.ou_dt;
  e.ou[0] = {0.0, c.ou_theta, c.sigma_steer, 0.0};
  e.ou[1] = {0.0, c.ou_theta, c.sigma_throttle, 0.0};
  e.ou[2] = {0.0, c.ou_theta, c.sigma_brake, 0.0};
  e.burst = {c.brake_burst_mean, c.ou_theta, c.sigma_brake_burst, c.brake_burst_mean};
  e.rng.seed(seed);
  return e;
}

void ExplorationState::advance() {
  ++steps;
  epsilon_prime = std::max(0.0, 1.0 - static_cast<double>(steps) / static_cast<double>(horizon));
}

Action explore(const Action& deterministic, ExplorationState& e) {
  // The processes always advance so the random stream does not depend on
  // which dimensions happened to be perturbed.
  std::array<double, 3> noise{};
  for (int k = 0; k < 3; ++k) std::tie(noise[k], e.ou[k]) = ou_step(e.ou[k], e.dt, e.rng);
  double burst_noise = 0.0;
  std::tie(burst_noise, e.burst) = ou_step(e.burst, e.dt, e.rng);

  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::array<bool, 3> perturb{};
  for (auto& p : perturb) p = unit(e.rng) < e.noise_probability;
  e.last_was_burst = unit(e.rng) < e.burst_probability;

  if (e.epsilon_prime == 0.0) return deterministic;

  const double eps = e.epsilon_prime;
  Action a = deterministic;
  if (perturb[0]) a.steer += eps * noise[0];
  if (perturb[1]) a.throttle += eps * noise[1];
  if (e.last_was_burst) {
    a.brake += eps * burst_noise;
    a.throttle *= 1.0 - eps;
  } else if (perturb[2]) {
    a.brake += eps * noise[2];
  }
  return a.clamped();
}

// ---------------------------------------------------------------------------

double compute_target(const TargetInputs& in, double gamma, bool adopted_target) {
  if (sim::is_premature(in.termination)) return in.discounted_reward;
  if (in.termination == Termination::max_steps && !adopted_target) return in.discounted_reward;
  return in.discounted_reward + std::pow(gamma, in.horizon) * in.bootstrap_value;
}

// ---------------------------------------------------------------------------

Matrix Actor::forward(const Matrix& input, Cache* cache) const {
  Matrix raw = nn::forward(body, input, cache ? &cache->body : nullptr);
  if (raw.rows() != kActionSize) throw ShapeError("actor head must have 3 outputs");
  Matrix out(kActionSize, raw.cols());
  for (Eigen::Index c = 0; c < raw.cols(); ++c) {
    out(0, c) = std::tanh(raw(0, c));
    out(1, c) = sigmoid(raw(1, c));
    out(2, c) = sigmoid(raw(2, c));
  }
  if (cache) cache->squashed = out;
  return out;
}

nn::Gradients Actor::backward(const Cache& cache, const Matrix& action_gradient,
                              bool want_param_gradients) const {
  const Matrix& y = cache.squashed;
  if (action_gradient.rows() != y.rows() || action_gradient.cols() != y.cols())
    throw ShapeError("actor backward: gradient shape mismatch");
  Matrix raw_gradient(y.rows(), y.cols());
  raw_gradient.row(0) = action_gradient.row(0).array() * (1.0 - y.row(0).array().square());
  for (int r = 1; r < 3; ++r)
    raw_gradient.row(r) = action_gradient.row(r).array() * y.row(r).array() * (1.0 - y.row(r).array());
  return nn::backward(body, cache.body, raw_gradient, want_param_gradients);
}

Actor make_actor(int inputs, int hidden, std::mt19937_64& rng) {
  const nn::LayerSpec specs[] = {{hidden, nn::Activation::relu},
                                 {hidden, nn::Activation::relu},
                                 {kActionSize, nn::Activation::linear}};
  return {nn::make_mlp(inputs, specs, rng)};
}

Matrix Critic::forward(const CriticInput& in, Cache* cache) const {
  if (in.states.empty() || in.states.size() != in.actions.size())
    throw ShapeError("critic input: states and actions must be non-empty and paired");
  const Eigen::Index n = in.states.front().cols();
  for (std::size_t t = 0; t < in.states.size(); ++t)
    if (in.states[t].cols() != n || in.actions[t].cols() != n || in.actions[t].rows() != kActionSize)
      throw ShapeError("critic input: inconsistent batch");

  if (!recurrent) {
    if (in.states.size() != 1) throw ShapeError("feed-forward critic takes one stacked state");
    const Matrix h = nn::forward(stream, in.states.front(), cache ? &cache->stream : nullptr);
    Matrix x(h.rows() + kActionSize, n);
    x << h, in.actions.front();
    if (cache) {
      cache->steps = 1;
      cache->batch = n;
    }
    return nn::forward(head, x, cache ? &cache->head : nullptr);
  }

  const std::size_t w = in.states.size();
  Matrix all_states(in.states.front().rows(), static_cast<Eigen::Index>(w) * n);
  for (std::size_t t = 0; t < w; ++t) {
    if (in.states[t].rows() != all_states.rows()) throw ShapeError("critic input: state size varies");
    all_states.middleCols(static_cast<Eigen::Index>(t) * n, n) = in.states[t];
  }
  const Matrix h = nn::forward(stream, all_states, cache ? &cache->stream : nullptr);
  std::vector<Matrix> steps(w);
  for (std::size_t t = 0; t < w; ++t) {
    steps[t].resize(h.rows() + kActionSize, n);
    steps[t] << h.middleCols(static_cast<Eigen::Index>(t) * n, n), in.actions[t];
  }
  if (cache) {
    cache->steps = w;
    cache->batch = n;
  }
  return nn::forward_sequence(head, steps, cache ? &cache->sequence : nullptr);
}

Critic::Grads Critic::backward(const Cache& cache, const Matrix& q_gradient,
                               bool want_param_gradients) const {
  Grads g;
  const Eigen::Index n = cache.batch;
  const Eigen::Index hs = stream.output_size();
  if (!recurrent) {
    nn::Gradients hg = nn::backward(head, cache.head, q_gradient, want_param_gradients);
    g.action = hg.input.bottomRows(kActionSize);
    nn::Gradients sg = nn::backward(stream, cache.stream, hg.input.topRows(hs), want_param_gradients);
    g.head = std::move(hg.params);
    g.stream = std::move(sg.params);
    return g;
  }
  nn::SequenceGradients hg = nn::backward_sequence(head, cache.sequence, q_gradient);
  Matrix dh(hs, static_cast<Eigen::Index>(cache.steps) * n);
  for (std::size_t t = 0; t < cache.steps; ++t)
    dh.middleCols(static_cast<Eigen::Index>(t) * n, n) = hg.inputs[t].topRows(hs);
  g.action = hg.inputs.back().bottomRows(kActionSize);
  nn::Gradients sg = nn::backward(stream, cache.stream, dh, want_param_gradients);
  if (want_param_gradients) g.head = std::move(hg.params);
  g.stream = std::move(sg.params);
  return g;
}

Critic make_critic(int state_inputs, int hidden, bool recurrent, std::mt19937_64& rng) {
  Critic c;
  c.recurrent = recurrent;
  const nn::LayerSpec stream_spec[] = {{hidden, nn::Activation::relu}};
  // The stream is an inner layer, so it keeps fan-in scaling.
  c.stream = nn::make_mlp(state_inputs, stream_spec, rng, 1.0 / std::sqrt(static_cast<double>(state_inputs)));
  if (recurrent) {
    const nn::LayerSpec head_spec[] = {{1, nn::Activation::linear}};
    c.head.lstm = nn::make_lstm(hidden + kActionSize, hidden, rng);
    c.head.layers = nn::make_mlp(hidden, head_spec, rng).layers;
  } else {
    const nn::LayerSpec head_spec[] = {{hidden, nn::Activation::relu}, {1, nn::Activation::linear}};
    c.head = nn::make_mlp(hidden + kActionSize, head_spec, rng);
  }
  return c;
}

// ---------------------------------------------------------------------------

void ObservationWindow::reset(std::vector<double> first) {
  items_.assign(static_cast<std::size_t>(w_), first);
}

void ObservationWindow::push(std::vector<double> obs) {
  if (items_.empty()) {
    reset(std::move(obs));
    return;
  }
  items_.pop_front();
  items_.push_back(std::move(obs));
}

std::vector<std::vector<double>> ObservationWindow::view() const { return {items_.begin(), items_.end()}; }

std::vector<double> ObservationWindow::stacked() const {
  std::vector<double> out;
  for (const auto& v : items_) out.insert(out.end(), v.begin(), v.end());
  return out;
}

// ---------------------------------------------------------------------------

Action action_from_column(const Matrix& m, Eigen::Index col) { return {m(0, col), m(1, col), m(2, col)}; }

Agent::Agent(AgentConfig config, std::uint64_t seed) : config_(std::move(config)), rng_(seed) {
  config_.validate();
  const int d = config_.observation_size;
  actor_ = make_actor(config_.actor_window() * d, config_.hidden, rng_);
  critic_ = make_critic(config_.lstm_critic ? d : config_.window * d, config_.hidden, config_.lstm_critic, rng_);
  target_actor_ = actor_;
  target_critic_ = critic_;
  actor_opt_ = nn::make_adam_state(actor_.body, {config_.actor_lr});
  critic_stream_opt_ = nn::make_adam_state(critic_.stream, {config_.critic_lr});
  critic_head_opt_ = nn::make_adam_state(critic_.head, {config_.critic_lr});
}

Action Agent::act(std::span<const double> window) const {
  const auto expected = static_cast<std::size_t>(config_.actor_window() * config_.observation_size);
  if (window.size() != expected)
    throw ShapeError("act: window has " + std::to_string(window.size()) + " values, expected " +
                     std::to_string(expected));
  Matrix x = Eigen::Map<const Eigen::VectorXd>(window.data(), static_cast<Eigen::Index>(window.size()));
  return action_from_column(actor_.forward(x), 0);
}

Action Agent::act_explore(std::span<const double> window, ExplorationState& expl) const {
  return explore(act(window), expl);
}

double Agent::critic_value(std::span<const std::vector<double>> states,
                           std::span<const Action> actions) const {
  if (states.size() != static_cast<std::size_t>(config_.window) || actions.size() != states.size())
    throw ShapeError("critic_value: window length must equal " + std::to_string(config_.window));
  const auto d = static_cast<Eigen::Index>(config_.observation_size);
  CriticInput in;
  for (std::size_t t = 0; t < states.size(); ++t) {
    if (static_cast<Eigen::Index>(states[t].size()) != d) throw ShapeError("critic_value: bad state size");
    in.states.push_back(Eigen::Map<const Eigen::VectorXd>(states[t].data(), d));
    in.actions.push_back(action_matrix(actions.subspan(t, 1)));
  }
  if (!critic_.recurrent) {
    in.states = {stack_rows(in.states)};
    in.actions = {in.actions.back()};
  }
  return critic_.forward(in)(0, 0);
}

replay::ReplayBuffer Agent::make_buffer() const {
  if (config_.prioritized) return replay::ReplayBuffer(config_.buffer_capacity, config_.per);
  return replay::ReplayBuffer(config_.buffer_capacity);
}

namespace {

// Per-time-step views of a sampled minibatch.
struct Sequence {
  std::vector<Matrix> states;   // w entries, d x N
  std::vector<Matrix> actions;  // w entries, 3 x N
};

CriticInput critic_input(const Sequence& seq, const Matrix& last_action, bool recurrent) {
  CriticInput in;
  if (recurrent) {
    in.states = seq.states;
    in.actions = seq.actions;
    in.actions.back() = last_action;
  } else {
    in.states = {stack_rows(seq.states)};
    in.actions = {last_action};
  }
  return in;
}

Matrix actor_input(const Sequence& seq, int actor_window) {
  const auto first = seq.states.size() - static_cast<std::size_t>(actor_window);
  return stack_rows(std::span<const Matrix>(seq.states).subspan(first));
}

void fill_column(Sequence& seq, const replay::Window& win, Eigen::Index col) {
  for (std::size_t t = 0; t < win.states.size(); ++t) {
    const auto& s = *win.states[t];
    seq.states[t].col(col) = Eigen::Map<const Eigen::VectorXd>(s.data(), static_cast<Eigen::Index>(s.size()));
    seq.actions[t](0, col) = win.actions[t].steer;
    seq.actions[t](1, col) = win.actions[t].throttle;
    seq.actions[t](2, col) = win.actions[t].brake;
  }
}

}  // namespace

TrainStats Agent::train_step(replay::ReplayBuffer& buffer) {
  const int n = config_.batch_size;
  const int w = config_.window;
  const auto d = static_cast<Eigen::Index>(config_.observation_size);
  const replay::Batch batch = buffer.sample(static_cast<std::size_t>(n), rng_);

  Sequence now, next;
  for (Sequence* s : {&now, &next}) {
    s->states.assign(static_cast<std::size_t>(w), Matrix(d, n));
    s->actions.assign(static_cast<std::size_t>(w), Matrix(kActionSize, n));
  }
  std::vector<replay::NStep> returns(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const std::size_t slot = batch.handles[static_cast<std::size_t>(i)].slot;
    if (static_cast<Eigen::Index>(buffer.at(slot).state.size()) != d)
      throw ShapeError("train_step: stored state size does not match the agent");
    fill_column(now, buffer.assemble_window(slot, w), i);
    returns[static_cast<std::size_t>(i)] = buffer.assemble_nstep(slot, config_.nstep, config_.gamma);
    fill_column(next, buffer.assemble_next_window(returns[static_cast<std::size_t>(i)].last_slot, w, Action{}), i);
  }

  // Targets from the target networks.
  const Matrix next_action = target_actor_.forward(actor_input(next, config_.actor_window()));
  const Matrix next_q = target_critic_.forward(critic_input(next, next_action, critic_.recurrent));
  Eigen::RowVectorXd y(n);
  for (int i = 0; i < n; ++i) {
    const auto& r = returns[static_cast<std::size_t>(i)];
    y(i) = compute_target({r.discounted_reward, r.horizon, r.termination, next_q(0, i)}, config_.gamma,
                          config_.adopted_target);
  }

  // Critic: minimise the mean squared TD error.
  Critic::Cache cache;
  const Matrix q = critic_.forward(critic_input(now, now.actions.back(), critic_.recurrent), &cache);
  TrainStats stats;
  stats.td_errors.resize(static_cast<std::size_t>(n));
  Matrix dq(1, n);
  double loss = 0.0;
  for (int i = 0; i < n; ++i) {
    const double delta = y(i) - q(0, i);
    const double weight = batch.weights[static_cast<std::size_t>(i)];
    stats.td_errors[static_cast<std::size_t>(i)] = delta;
    loss += weight * delta * delta;
    dq(0, i) = -2.0 * weight * delta / n;
  }
  stats.critic_loss = loss / n;
  if (!std::isfinite(stats.critic_loss)) {
    std::ostringstream msg;
    msg << "train_step: non-finite critic loss; minibatch dump:";
    for (int i = 0; i < n; ++i) {
      const auto& r = returns[static_cast<std::size_t>(i)];
      msg << "\n  slot=" << batch.handles[static_cast<std::size_t>(i)].slot << " R=" << r.discounted_reward
          << " m=" << r.horizon << " term=" << sim::to_string(r.termination) << " q=" << q(0, i)
          << " q'=" << next_q(0, i) << " y=" << y(i);
    }
    throw NumericError(msg.str());
  }

  Critic::Grads cg = critic_.backward(cache, dq);
  if (buffer.prioritized()) {
    const Matrix ga = critic_.backward(cache, Matrix::Ones(1, n), false).action;
    stats.actor_grad_sq.resize(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) stats.actor_grad_sq[static_cast<std::size_t>(i)] = ga.col(i).squaredNorm();
  }
  if (config_.critic_weight_decay > 0.0) {
    for (auto [params, grads] : {std::pair{&critic_.stream, &cg.stream}, std::pair{&critic_.head, &cg.head}})
      for (std::size_t l = 0; l < params->layers.size(); ++l)
        grads->layers[l].weight += config_.critic_weight_decay * params->layers[l].weight;
  }
  nn::adam_update(critic_.stream, cg.stream, critic_stream_opt_);
  nn::adam_update(critic_.head, cg.head, critic_head_opt_);

  // Actor: ascend mean Q(s, mu(s)) through the updated critic.
  Actor::Cache acache;
  const Matrix a = actor_.forward(actor_input(now, config_.actor_window()), &acache);
  Critic::Cache qcache;
  const Matrix qa = critic_.forward(critic_input(now, a, critic_.recurrent), &qcache);
  stats.actor_objective = qa.mean();
  const Matrix dj_da = critic_.backward(qcache, Matrix::Constant(1, n, 1.0 / n), false).action;
  nn::Gradients ag = actor_.backward(acache, -dj_da);
  if (config_.preactivation_penalty > 0.0) {
    // Hinge on |z| beyond the margin, applied below the squashing heads.
    const Matrix& z = acache.body.outputs.back();
    Matrix excess(z.rows(), z.cols());
    for (Eigen::Index r = 0; r < z.rows(); ++r) {
      const double m = r == 0 ? config_.steer_preactivation_margin : config_.pedal_preactivation_margin;
      excess.row(r) = z.row(r).unaryExpr([m](double v) { return v > m ? v - m : (v < -m ? v + m : 0.0); });
    }
    nn::Gradients pg =
        nn::backward(actor_.body, acache.body, (2.0 * config_.preactivation_penalty / n) * excess);
    for (std::size_t l = 0; l < ag.params.layers.size(); ++l) {
      ag.params.layers[l].weight += pg.params.layers[l].weight;
      ag.params.layers[l].bias += pg.params.layers[l].bias;
    }
  }
  nn::adam_update(actor_.body, ag.params, actor_opt_);

  nn::soft_update(actor_.body, target_actor_.body, config_.tau);
  nn::soft_update(critic_.stream, target_critic_.stream, config_.tau);
  nn::soft_update(critic_.head, target_critic_.head, config_.tau);

  if (buffer.prioritized())
    for (int i = 0; i < n; ++i) {
      const auto k = static_cast<std::size_t>(i);
      buffer.update_priority(batch.handles[k], stats.td_errors[k], stats.actor_grad_sq[k]);
    }
  return stats;
}

// ---------------------------------------------------------------------------

void Agent::save(std::ostream& out) const {
  out.write(kMagic, sizeof kMagic);
  out.write(reinterpret_cast<const char*>(&kVersion), sizeof kVersion);
  const std::string cfg = to_json(config_).dump();
  const auto len = static_cast<std::uint64_t>(cfg.size());
  out.write(reinterpret_cast<const char*>(&len), sizeof len);
  out.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));
  for (const NetworkParams* p : {&actor_.body, &critic_.stream, &critic_.head, &target_actor_.body,
                                 &target_critic_.stream, &target_critic_.head})
    nn::write_params(out, *p);
  if (!out) throw std::runtime_error("agent checkpoint: write failed");
}

Agent Agent::load(std::istream& in) {
  char magic[8];
  std::uint32_t version = 0;
  in.read(magic, sizeof magic);
  in.read(reinterpret_cast<char*>(&version), sizeof version);
  if (!in || std::memcmp(magic, kMagic, sizeof magic) != 0) throw std::runtime_error("not an agent checkpoint");
  if (version != kVersion) throw std::runtime_error("unsupported agent checkpoint version " + std::to_string(version));
  std::uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof len);
  if (!in || len > (1u << 20)) throw std::runtime_error("agent checkpoint: corrupt header");
  std::string cfg(len, '\0');
  in.read(cfg.data(), static_cast<std::streamsize>(len));
  Agent agent(agent_config_from_json(nlohmann::json::parse(cfg)), 0);
  auto read_into = [&](NetworkParams& dst) {
    NetworkParams p = nn::read_params(in);
    if (!nn::same_shape(p, dst)) throw ShapeError("agent checkpoint: network shape does not match config");
    dst = std::move(p);
  };
  read_into(agent.actor_.body);
  read_into(agent.critic_.stream);
  read_into(agent.critic_.head);
  read_into(agent.target_actor_.body);
  read_into(agent.target_critic_.stream);
  read_into(agent.target_critic_.head);
  return agent;
}

void Agent::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  save(out);
}

Agent Agent::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path);
  return load(in);
}

}  // namespace racerl::agent
