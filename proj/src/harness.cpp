#include "racerl/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <mutex>
#include <numeric>
#include <regex>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "racerl/errors.hpp"

#ifndef RACERL_VERSION
#define RACERL_VERSION "0.0.0"
#endif
#ifndef RACERL_GIT_DESCRIBE
#define RACERL_GIT_DESCRIBE RACERL_VERSION
#endif

namespace racerl::harness {

namespace fs = std::filesystem;
using nlohmann::json;
using track::ReferencePath;
using track::Vec2;

const char* version() { return RACERL_GIT_DESCRIBE; }

const char* to_string(ReferenceMode m) {
  switch (m) {
    case ReferenceMode::mot: return "mot";
    case ReferenceMode::rc: return "rc";
    case ReferenceMode::rc_lac: return "rc-lac";
  }
  return "mot";
}

ReferenceMode reference_mode_from_string(const std::string& s) {
  if (s == "mot") return ReferenceMode::mot;
  if (s == "rc") return ReferenceMode::rc;
  if (s == "rc-lac" || s == "rc_lac") return ReferenceMode::rc_lac;
  throw ConfigError("unknown reference mode '" + s + "' (expected mot, rc or rc-lac)");
}

std::string format_number(double v) {
  if (!std::isfinite(v)) return std::isnan(v) ? "nan" : (v > 0 ? "inf" : "-inf");
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

std::vector<double> moving_average(const std::vector<double>& values, int window) {
  if (window < 1) throw DomainError("moving_average: window must be >= 1");
  std::vector<double> out(values.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    sum += values[i];
    if (i >= static_cast<std::size_t>(window)) sum -= values[i - static_cast<std::size_t>(window)];
    const auto count = std::min<std::size_t>(i + 1, static_cast<std::size_t>(window));
    out[i] = sum / static_cast<double>(count);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Baseline bot

namespace {

/// Self-consistent cornering limit: v^2 = mu rho (g + c v^2 / m).
double cornering_limit(double kappa, const sim::CarParams& car) {
  if (kappa <= 0.0) return track::kUnboundedSpeed;
  const double rho = 1.0 / kappa;
  const double den = 1.0 - car.grip * rho * car.downforce_coeff / car.mass;
  if (den <= 0.0) return track::kUnboundedSpeed;
  return std::sqrt(car.grip * rho * car.gravity / den);
}

}  // namespace

double bot_target_speed(const ReferencePath& path, const sim::CarParams& car, double delta,
                        const BotConfig& config) {
  double target = car.top_speed * config.speed_scale;
  const double scale = config.safety * config.speed_scale;
  for (double s = 0.0; s <= config.preview; s += 2.0) {
    const double limit = cornering_limit(std::abs(path.curvature_at(delta + s)), car) * scale;
    if (!std::isfinite(limit)) continue;
    target = std::min(target, std::sqrt(limit * limit + 2.0 * config.brake_decel * s));
  }
  return target;
}

Action baseline_bot(const sim::CarState& state, const track::TrackFrame& frame,
                    const ReferencePath& path, const sim::CarParams& car, const BotConfig& config) {
  const double v = std::max(0.0, state.vx);
  const double lookahead = config.lookahead_min + config.lookahead_time * v;
  const Vec2 aim = path.point_at(frame.delta + lookahead) - state.position;
  const double alpha = track::wrap_angle(std::atan2(aim.y, aim.x) - state.heading);
  const double dist = std::max(aim.norm(), 1e-6);
  const double steer_angle = std::atan(car.wheelbase * 2.0 * std::sin(alpha) / dist);

  Action a;
  a.steer = std::clamp(steer_angle / car.max_steer, -1.0, 1.0);
  const double target = bot_target_speed(path, car, frame.delta, config);
  const double hold = car.drag_coeff() * v * v / car.engine_force;
  const double u = hold + config.speed_gain * (target - v);
  if (u >= 0.0) {
    a.throttle = std::min(u, 1.0);
  } else {
    a.brake = std::min(-u * car.engine_force / car.brake_force, 1.0);
  }
  return a;
}

track::RacingLine record_reference_line(const track::Track& track, BotConfig config, double spacing,
                                        const sim::CarParams& car) {
  if (!(spacing > 0.0)) throw DomainError("record_reference_line: spacing must be positive");
  auto shared = std::make_shared<const track::Track>(track);
  sim::EnvConfig env_cfg;
  env_cfg.dt = 0.05;
  env_cfg.substeps = 2;
  env_cfg.max_steps = 100000;
  env_cfg.slow_after = env_cfg.max_steps;
  sim::Environment env(shared, nullptr, env_cfg, car);
  env.reset();

  const double lap = track.length();
  std::vector<double> progress{0.0};
  std::vector<double> alpha{0.5};
  while (env.laps() < 2) {
    const Action a = baseline_bot(env.state(), env.axis_frame(), track.axis(), car, config);
    const auto r = env.step(a);
    if (r.termination != Termination::none)
      throw GeometryError("record_reference_line: bot failed to complete a lap on '" + track.name() +
                          "' (" + sim::to_string(r.termination) + ")");
    if (env.progress() > progress.back()) {
      progress.push_back(env.progress());
      alpha.push_back(std::clamp((env.axis_frame().lateral + track.half_width()) / track.width(), 0.0, 1.0));
    }
  }

  std::vector<track::LinePoint> points;
  std::size_t j = 0;
  for (double d = 0.0; d < lap - 0.5 * spacing; d += spacing) {
    const double p = lap + d;
    while (j + 1 < progress.size() && progress[j + 1] < p) ++j;
    const double f = (p - progress[j]) / (progress[j + 1] - progress[j]);
    points.push_back({d, alpha[j] + f * (alpha[j + 1] - alpha[j])});
  }
  return track::RacingLine(track, std::move(points));
}

// ---------------------------------------------------------------------------
// Rollouts

std::optional<double> EpisodeResult::best_lap() const {
  if (lap_times.empty()) return std::nullopt;
  return *std::min_element(lap_times.begin(), lap_times.end());
}

Action BotController::act(const sim::Environment& env, const sim::Observation&) {
  return baseline_bot(env.state(), env.reference_frame(), env.reference(), env.params(), config_);
}

AgentController::AgentController(const agent::Agent& agent, agent::ExplorationState* exploration)
    : agent_(agent), exploration_(exploration), window_(agent.config().actor_window()) {}

void AgentController::reset(const sim::Observation&) { started_ = false; }

Action AgentController::act(const sim::Environment&, const sim::Observation& obs) {
  if (!started_) {
    window_.reset(obs.to_vector());
    started_ = true;
  } else {
    window_.push(obs.to_vector());
  }
  const std::vector<double> x = window_.stacked();
  if (!exploration_) return agent_.act(x);
  const Action a = agent_.act_explore(x, *exploration_);
  exploration_->advance();
  return a;
}

TelemetryLog::TelemetryLog(std::ostream& out) : out_(out) {
  out_ << "step,t,x,y,heading,Vx,Vy,steer,throttle,brake,reward,trackPos,theta,damage\n";
}

void TelemetryLog::record(int step, const sim::Environment& env, const Action& a, double reward) {
  const auto& s = env.state();
  const auto& f = env.reference_frame();
  out_ << step << ',' << format_number(env.time()) << ',' << format_number(s.position.x) << ','
       << format_number(s.position.y) << ',' << format_number(s.heading) << ',' << format_number(s.vx)
       << ',' << format_number(s.vy) << ',' << format_number(a.steer) << ','
       << format_number(a.throttle) << ',' << format_number(a.brake) << ',' << format_number(reward)
       << ',' << format_number(f.track_pos) << ',' << format_number(f.angle) << ','
       << format_number(s.damage) << '\n';
}

EpisodeResult run_episode(sim::Environment& env, Controller& controller, int laps, TelemetryLog* log) {
  EpisodeResult res;
  sim::Observation obs = env.reset();
  controller.reset(obs);
  while (true) {
    const Action a = controller.act(env, obs);
    const sim::StepResult r = env.step(a);
    ++res.steps;
    res.total_return += r.reward;
    if (log) log->record(env.steps(), env, a.clamped(), r.reward);
    if (r.info.lap_completed) res.lap_times.push_back(r.info.lap_time);
    obs = r.observation;
    if (r.termination != Termination::none) {
      res.termination = r.termination;
      break;
    }
    if (laps > 0 && static_cast<int>(res.lap_times.size()) >= laps) break;
  }
  res.damage = env.state().damage;
  return res;
}

// ---------------------------------------------------------------------------
// Configuration

namespace {

const char* const kVariantFixedKeys[] = {"variant",     "observation_size", "window",         "nstep",
                                         "prioritized", "lstm_critic",      "buffer_capacity"};

json env_to_json(const sim::EnvConfig& e) {
  return {{"dt", e.dt},
          {"substeps", e.substeps},
          {"max_steps", e.max_steps},
          {"damage_weight", e.damage_weight},
          {"damage_coeff", e.damage_coeff},
          {"literal_sin", e.literal_sin},
          {"slow_speed", e.slow_speed},
          {"slow_window", e.slow_window},
          {"slow_after", e.slow_after},
          {"backwards_steps", e.backwards_steps},
          {"start_delta", e.start_delta}};
}

sim::EnvConfig env_from_json(const json& j) {
  sim::EnvConfig e;
  j.at("dt").get_to(e.dt);
  j.at("substeps").get_to(e.substeps);
  j.at("max_steps").get_to(e.max_steps);
  j.at("damage_weight").get_to(e.damage_weight);
  j.at("damage_coeff").get_to(e.damage_coeff);
  j.at("literal_sin").get_to(e.literal_sin);
  j.at("slow_speed").get_to(e.slow_speed);
  j.at("slow_window").get_to(e.slow_window);
  j.at("slow_after").get_to(e.slow_after);
  j.at("backwards_steps").get_to(e.backwards_steps);
  j.at("start_delta").get_to(e.start_delta);
  return e;
}

json car_to_json(const sim::CarParams& c) {
  return {{"mass", c.mass},
          {"grip", c.grip},
          {"downforce_coeff", c.downforce_coeff},
          {"engine_force", c.engine_force},
          {"brake_force", c.brake_force},
          {"max_steer", c.max_steer},
          {"wheelbase", c.wheelbase},
          {"top_speed", c.top_speed},
          {"wheel_radius", c.wheel_radius},
          {"idle_rpm", c.idle_rpm},
          {"max_rpm", c.max_rpm},
          {"gravity", c.gravity},
          {"slip_gain", c.slip_gain},
          {"slide_scrub", c.slide_scrub}};
}

sim::CarParams car_from_json(const json& j) {
  sim::CarParams c;
  j.at("mass").get_to(c.mass);
  j.at("grip").get_to(c.grip);
  j.at("downforce_coeff").get_to(c.downforce_coeff);
  j.at("engine_force").get_to(c.engine_force);
  j.at("brake_force").get_to(c.brake_force);
  j.at("max_steer").get_to(c.max_steer);
  j.at("wheelbase").get_to(c.wheelbase);
  j.at("top_speed").get_to(c.top_speed);
  j.at("wheel_radius").get_to(c.wheel_radius);
  j.at("idle_rpm").get_to(c.idle_rpm);
  j.at("max_rpm").get_to(c.max_rpm);
  j.at("gravity").get_to(c.gravity);
  j.at("slip_gain").get_to(c.slip_gain);
  j.at("slide_scrub").get_to(c.slide_scrub);
  c.validate();
  return c;
}

json bot_to_json(const BotConfig& b) {
  return {{"safety", b.safety},
          {"speed_scale", b.speed_scale},
          {"lookahead_min", b.lookahead_min},
          {"lookahead_time", b.lookahead_time},
          {"preview", b.preview},
          {"brake_decel", b.brake_decel},
          {"speed_gain", b.speed_gain}};
}

BotConfig bot_from_json(const json& j) {
  BotConfig b;
  j.at("safety").get_to(b.safety);
  j.at("speed_scale").get_to(b.speed_scale);
  j.at("lookahead_min").get_to(b.lookahead_min);
  j.at("lookahead_time").get_to(b.lookahead_time);
  j.at("preview").get_to(b.preview);
  j.at("brake_decel").get_to(b.brake_decel);
  j.at("speed_gain").get_to(b.speed_gain);
  return b;
}

void reject_unknown_keys(const json& given, const json& known, const std::string& where) {
  if (!given.is_object()) throw ConfigError(where + ": expected an object");
  for (const auto& [key, value] : given.items()) {
    if (!known.contains(key)) throw ConfigError("unknown config key '" + where + key + "'");
    if (known.at(key).is_object()) reject_unknown_keys(value, known.at(key), where + key + ".");
  }
}

}  // namespace

void ExperimentConfig::validate() const {
  if (episodes < 1) throw ConfigError("episodes must be >= 1");
  if (seeds.empty()) throw ConfigError("seeds must not be empty");
  if (eval_every < 1 || checkpoint_every < 1) throw ConfigError("eval_every and checkpoint_every must be >= 1");
  if (eval_laps < 1 || eval_max_steps < 1) throw ConfigError("eval_laps and eval_max_steps must be >= 1");
  if (warmup < 0 || updates_per_step < 0) throw ConfigError("warmup and updates_per_step must be >= 0");
  if (jobs < 1) throw ConfigError("jobs must be >= 1");
  car.validate();
  agent_config().validate();
}

agent::AgentConfig ExperimentConfig::agent_config() const {
  agent::AgentConfig c = agent::AgentConfig::for_variant(variant, reference == ReferenceMode::rc_lac);
  const agent::AgentConfig fixed = c;
  c = agent;
  c.variant = fixed.variant;
  c.observation_size = fixed.observation_size;
  c.window = fixed.window;
  c.nstep = fixed.nstep;
  c.prioritized = fixed.prioritized;
  c.lstm_critic = fixed.lstm_critic;
  c.buffer_capacity = fixed.buffer_capacity;
  return c;
}

json to_json(const ExperimentConfig& c) {
  json agent = agent::to_json(c.agent);
  for (const char* k : kVariantFixedKeys) agent.erase(k);
  json variants = json::array();
  for (auto v : c.variants) variants.push_back(agent::to_string(v));
  return {{"track", c.track},
          {"variant", agent::to_string(c.variant)},
          {"reference", to_string(c.reference)},
          {"line_file", c.line_file},
          {"episodes", c.episodes},
          {"seeds", c.seeds},
          {"eval_every", c.eval_every},
          {"eval_laps", c.eval_laps},
          {"eval_max_steps", c.eval_max_steps},
          {"checkpoint_every", c.checkpoint_every},
          {"warmup", c.warmup},
          {"updates_per_step", c.updates_per_step},
          {"output_dir", c.output_dir},
          {"variants", variants},
          {"promote_track", c.promote_track},
          {"promote_episodes", c.promote_episodes},
          {"jobs", c.jobs},
          {"agent", agent},
          {"env", env_to_json(c.env)},
          {"car", car_to_json(c.car)},
          {"bot", bot_to_json(c.bot)}};
}

ExperimentConfig experiment_config_from_json(const json& j) {
  json merged = to_json(ExperimentConfig{});
  reject_unknown_keys(j, merged, "");
  merged.update(j, true);

  ExperimentConfig c;
  merged.at("track").get_to(c.track);
  c.variant = agent::variant_from_string(merged.at("variant").get<std::string>());
  c.reference = reference_mode_from_string(merged.at("reference").get<std::string>());
  merged.at("line_file").get_to(c.line_file);
  merged.at("episodes").get_to(c.episodes);
  merged.at("seeds").get_to(c.seeds);
  merged.at("eval_every").get_to(c.eval_every);
  merged.at("eval_laps").get_to(c.eval_laps);
  merged.at("eval_max_steps").get_to(c.eval_max_steps);
  merged.at("checkpoint_every").get_to(c.checkpoint_every);
  merged.at("warmup").get_to(c.warmup);
  merged.at("updates_per_step").get_to(c.updates_per_step);
  merged.at("output_dir").get_to(c.output_dir);
  c.variants.clear();
  for (const auto& v : merged.at("variants")) c.variants.push_back(agent::variant_from_string(v.get<std::string>()));
  merged.at("promote_track").get_to(c.promote_track);
  merged.at("promote_episodes").get_to(c.promote_episodes);
  merged.at("jobs").get_to(c.jobs);
  c.agent = agent::agent_config_from_json(merged.at("agent"));
  c.env = env_from_json(merged.at("env"));
  c.car = car_from_json(merged.at("car"));
  c.bot = bot_from_json(merged.at("bot"));
  c.validate();
  return c;
}

ExperimentConfig load_experiment_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config '" + path + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config '" + path + "': " + e.what());
  }
  return experiment_config_from_json(j);
}

World make_world(const std::string& track_name, ReferenceMode mode, const std::string& line_file,
                 sim::EnvConfig env, const sim::CarParams& car, const BotConfig& bot) {
  World w;
  auto track = std::make_shared<const track::Track>(track::load_track(track_name));
  w.track = track;
  env.lac_enabled = mode == ReferenceMode::rc_lac;
  w.env = env;
  w.car = car;
  if (mode == ReferenceMode::mot) {
    w.reference = std::shared_ptr<const ReferencePath>(track, &track->axis());
    return w;
  }
  if (!line_file.empty()) {
    w.line = track::load_racing_line(line_file, *track);
  } else {
    BotConfig slow = bot;
    slow.speed_scale = 0.6;
    w.line = record_reference_line(*track, slow, 2.0, car);
  }
  w.reference = std::make_shared<const ReferencePath>(w.line->path());
  return w;
}

// ---------------------------------------------------------------------------
// Evaluation

std::vector<EpisodeResult> evaluate(const agent::Agent& agent, const World& world, int laps, int runs,
                                    int max_steps) {
  sim::EnvConfig cfg = world.env;
  cfg.max_steps = max_steps;
  std::vector<EpisodeResult> out;
  for (int r = 0; r < runs; ++r) {
    sim::Environment env(world.track, world.reference, cfg, world.car);
    AgentController controller(agent);
    out.push_back(run_episode(env, controller, laps));
  }
  return out;
}

std::vector<EpisodeResult> evaluate_checkpoint(const std::string& checkpoint, const World& world, int laps,
                                               int runs, int max_steps) {
  const agent::Agent agent = agent::Agent::load(checkpoint);
  if (agent.config().observation_size != static_cast<int>(sim::Observation::size(world.env.lac_enabled)))
    throw ConfigError("checkpoint observation size does not match the reference mode");
  return evaluate(agent, world, laps, runs, max_steps);
}

EpisodeResult evaluate_bot(const World& world, int laps, const BotConfig& bot, int max_steps,
                           TelemetryLog* log) {
  sim::EnvConfig cfg = world.env;
  cfg.max_steps = max_steps;
  sim::Environment env(world.track, world.reference, cfg, world.car);
  BotController controller(bot);
  return run_episode(env, controller, laps, log);
}

// ---------------------------------------------------------------------------
// Training

namespace {

class CsvFile {
 public:
  CsvFile(const fs::path& path, const std::string& header) : out_(path) {
    if (!out_) throw std::runtime_error("cannot write " + path.string());
    out_ << header << '\n';
  }
  template <typename... Ts>
  void row(const Ts&... cells) {
    std::size_t i = 0;
    ((out_ << (i++ ? "," : "") << cell(cells)), ...);
    out_ << '\n';
    out_.flush();
  }

 private:
  static std::string cell(double v) { return format_number(v); }
  static std::string cell(int v) { return std::to_string(v); }
  static std::string cell(std::uint64_t v) { return std::to_string(v); }
  static std::string cell(const std::string& s) { return s; }
  static std::string cell(const char* s) { return s; }
  std::ofstream out_;
};

std::string lap_cell(const std::optional<double>& lap) { return lap ? format_number(*lap) : "DNF"; }

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

std::string checkpoint_name(int episode) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "ep%05d.bin", episode);
  return buf;
}

}  // namespace

TrainResult train(const ExperimentConfig& config, std::uint64_t seed, const fs::path& run_dir,
                  const ProgressFn& progress) {
  config.validate();
  TrainResult result;
  result.run_dir = run_dir;
  result.seed = seed;
  fs::create_directories(run_dir / "checkpoints");
  write_json(run_dir / "config.json", to_json(config));
  write_json(run_dir / "run.json", {{"seed", seed}, {"version", version()}, {"track", config.track},
                                    {"variant", agent::to_string(config.variant)},
                                    {"reference", to_string(config.reference)}});

  const World world = make_world(config.track, config.reference, config.line_file, config.env, config.car, config.bot);
  if (world.line) track::save_json((run_dir / "racing_line.json").string(), track::racing_line_to_json(*world.line));

  const agent::AgentConfig acfg = config.agent_config();
  agent::Agent agent(acfg, seed);
  replay::ReplayBuffer buffer = agent.make_buffer();
  agent::ExplorationState expl = agent::ExplorationState::from_config(acfg, seed * 0x9E3779B97F4A7C15ULL + 1);
  sim::Environment env(world.track, world.reference, world.env, config.car);

  CsvFile metrics(run_dir / "metrics.csv",
                  "episode,steps,return,critic_loss_mean,actor_obj_mean,epsilon_prime,laps,damage");
  CsvFile evals(run_dir / "eval.csv", "episode,laps,best_lap,damage,termination,return,steps");
  agent::ObservationWindow window(acfg.actor_window());
  const auto warmup = static_cast<std::size_t>(std::max(config.warmup, acfg.batch_size));

  try {
    for (int episode = 1; episode <= config.episodes; ++episode) {
      std::vector<double> state = env.reset().to_vector();
      window.reset(state);
      MetricsRow row;
      row.episode = episode;
      int updates = 0;
      for (std::uint32_t step = 0;; ++step) {
        const Action a = agent.act_explore(window.stacked(), expl);
        expl.advance();
        const sim::StepResult r = env.step(a);
        std::vector<double> next = r.observation.to_vector();
        buffer.push({state, a, r.reward, next, r.termination, static_cast<std::uint64_t>(episode), step});
        row.total_return += r.reward;
        ++row.steps;
        if (buffer.size() >= warmup) {
          for (int u = 0; u < config.updates_per_step; ++u) {
            const agent::TrainStats s = agent.train_step(buffer);
            row.critic_loss_mean += s.critic_loss;
            row.actor_obj_mean += s.actor_objective;
            ++updates;
          }
        }
        if (r.termination != Termination::none) break;
        window.push(next);
        state = std::move(next);
      }
      if (updates > 0) {
        row.critic_loss_mean /= updates;
        row.actor_obj_mean /= updates;
      }
      row.epsilon_prime = expl.epsilon_prime;
      row.laps = env.laps();
      row.damage = env.state().damage;
      if (!std::isfinite(row.total_return) || !std::isfinite(row.critic_loss_mean))
        throw NumericError("training diverged at episode " + std::to_string(episode));
      metrics.row(row.episode, row.steps, row.total_return, row.critic_loss_mean, row.actor_obj_mean,
                  row.epsilon_prime, row.laps, row.damage);
      result.metrics.push_back(row);
      if (progress) progress(row);

      if (episode % config.checkpoint_every == 0)
        agent.save((run_dir / "checkpoints" / checkpoint_name(episode)).string());
      if (episode % config.eval_every == 0 || episode == config.episodes) {
        const EpisodeResult e = evaluate(agent, world, config.eval_laps, 1, config.eval_max_steps).front();
        evals.row(episode, static_cast<int>(e.lap_times.size()), lap_cell(e.best_lap()), e.damage,
                  sim::to_string(e.termination), e.total_return, e.steps);
        result.evals.push_back({episode, e});
        const auto lap = e.best_lap();
        if (lap && e.damage == 0.0 && (!result.best_lap || *lap < *result.best_lap)) {
          result.best_lap = lap;
          result.best_lap_episode = episode;
          agent.save((run_dir / "best.bin").string());
        }
      }
    }
  } catch (const NumericError& e) {
    result.failed = true;
    result.failure = e.what();
    std::ofstream(run_dir / "FAILED") << e.what() << '\n';
  }
  agent.save((run_dir / "latest.bin").string());
  if (!result.best_lap) agent.save((run_dir / "best.bin").string());
  return result;
}

// ---------------------------------------------------------------------------
// Tournament

std::vector<LeaderboardRow> leaderboard(const std::vector<RunSummary>& runs) {
  std::vector<std::string> order;
  std::map<std::string, std::vector<const RunSummary*>> by_variant;
  for (const auto& r : runs) {
    if (!by_variant.count(r.variant)) order.push_back(r.variant);
    by_variant[r.variant].push_back(&r);
  }
  std::vector<LeaderboardRow> rows;
  for (const auto& name : order) {
    const auto& list = by_variant[name];
    LeaderboardRow row;
    row.variant = name;
    row.runs = static_cast<int>(list.size());
    std::vector<double> clean;
    int finished = 0;
    for (const RunSummary* r : list) {
      row.mean_damage += r->damage;
      if (r->best_lap) ++finished;
      if (r->best_lap && r->damage == 0.0) clean.push_back(*r->best_lap);
    }
    row.mean_damage /= row.runs;
    row.finish_rate = static_cast<double>(finished) / row.runs;
    if (!clean.empty()) {
      row.blt = *std::min_element(clean.begin(), clean.end());
      row.alt = std::accumulate(clean.begin(), clean.end(), 0.0) / static_cast<double>(clean.size());
    }
    rows.push_back(row);
  }
  std::stable_sort(rows.begin(), rows.end(), [](const LeaderboardRow& a, const LeaderboardRow& b) {
    if (a.alt.has_value() != b.alt.has_value()) return a.alt.has_value();
    return a.alt && *a.alt < *b.alt;
  });
  return rows;
}

std::optional<std::string> family_winner(const std::vector<LeaderboardRow>& rows,
                                         const std::vector<std::string>& candidates) {
  std::optional<std::string> best;
  double best_alt = 0.0;
  for (const auto& name : candidates)
    for (const auto& row : rows)
      if (row.variant == name && row.alt && (!best || *row.alt < best_alt)) {
        best = name;
        best_alt = *row.alt;
      }
  return best;
}

void write_leaderboard(const fs::path& path, const std::vector<LeaderboardRow>& rows) {
  CsvFile out(path, "rank,variant,bLT,aLT,mean_damage,finish_rate,runs");
  int rank = 1;
  for (const auto& r : rows)
    out.row(rank++, r.variant, lap_cell(r.blt), lap_cell(r.alt), r.mean_damage, r.finish_rate, r.runs);
}

namespace {

std::vector<RunSummary> run_grid(const ExperimentConfig& base, const std::vector<agent::Variant>& variants,
                                 const std::string& track, int episodes, const fs::path& out_dir) {
  struct Task {
    agent::Variant variant;
    std::uint64_t seed;
  };
  std::vector<Task> tasks;
  for (auto v : variants)
    for (auto s : base.seeds) tasks.push_back({v, s});
  std::vector<RunSummary> summaries(tasks.size());
  std::atomic<std::size_t> next{0};
  std::mutex error_mutex;
  std::exception_ptr error;

  auto worker = [&] {
    for (std::size_t i = next++; i < tasks.size(); i = next++) {
      try {
        ExperimentConfig cfg = base;
        cfg.variant = tasks[i].variant;
        cfg.track = track;
        cfg.episodes = episodes;
        const fs::path dir = out_dir / track / agent::to_string(cfg.variant) / ("seed_" + std::to_string(tasks[i].seed));
        const TrainResult tr = train(cfg, tasks[i].seed, dir);
        const World world = make_world(track, cfg.reference, cfg.line_file, cfg.env, cfg.car, cfg.bot);
        const EpisodeResult test =
            evaluate_checkpoint((dir / "best.bin").string(), world, cfg.eval_laps, 1, cfg.eval_max_steps).front();
        summaries[i] = {agent::to_string(cfg.variant), tasks[i].seed, test.best_lap(), test.damage};
        if (tr.failed) summaries[i].best_lap.reset();
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!error) error = std::current_exception();
      }
    }
  };
  const int jobs = std::min<int>(base.jobs, static_cast<int>(tasks.size()));
  std::vector<std::thread> pool;
  for (int j = 1; j < jobs; ++j) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
  return summaries;
}

}  // namespace

TournamentResult tournament(const ExperimentConfig& config) {
  config.validate();
  TournamentResult out;
  const std::vector<agent::Variant> variants =
      config.variants.empty() ? std::vector<agent::Variant>{config.variant} : config.variants;
  const fs::path root(config.output_dir);
  fs::create_directories(root);
  out.runs = run_grid(config, variants, config.track, config.episodes, root);
  out.rows = leaderboard(out.runs);
  write_leaderboard(root / ("leaderboard_" + config.track + ".csv"), out.rows);

  std::map<std::string, std::vector<std::string>> families;
  for (auto v : variants) families[agent::family(v)].push_back(agent::to_string(v));
  std::vector<agent::Variant> promoted;
  for (const auto& [fam, names] : families)
    if (auto w = family_winner(out.rows, names)) {
      out.winners.push_back(*w);
      promoted.push_back(agent::variant_from_string(*w));
    }
  if (!config.promote_track.empty() && !promoted.empty()) {
    out.promoted_runs = run_grid(config, promoted, config.promote_track, config.promote_episodes, root);
    out.promoted_rows = leaderboard(out.promoted_runs);
    write_leaderboard(root / ("leaderboard_" + config.promote_track + ".csv"), out.promoted_rows);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Generalization

std::optional<std::size_t> select_general_model(const std::vector<CheckpointResult>& results) {
  std::optional<std::size_t> best;
  for (std::size_t i = 0; i < results.size(); ++i) {
    const auto& r = results[i];
    if (r.laps.empty()) continue;
    const bool all = std::all_of(r.laps.begin(), r.laps.end(), [](const auto& l) { return l.has_value(); });
    if (!all) continue;
    if (!best || *r.laps.front() < *results[*best].laps.front()) best = i;
  }
  return best;
}

GeneralizationReport generalization_eval(const fs::path& run_dir, const std::vector<std::string>& tracks,
                                         int laps, int max_steps) {
  const ExperimentConfig config = load_experiment_config((run_dir / "config.json").string());
  GeneralizationReport report;
  report.tracks.push_back(config.track);
  for (const auto& t : tracks)
    if (t != config.track) report.tracks.push_back(t);

  std::vector<World> worlds;
  for (const auto& t : report.tracks) {
    const bool training = t == config.track;
    const std::string line = training && fs::exists(run_dir / "racing_line.json") ? (run_dir / "racing_line.json").string() : "";
    worlds.push_back(make_world(t, config.reference, line, config.env, config.car, config.bot));
  }

  std::vector<fs::path> files;
  if (fs::exists(run_dir / "checkpoints"))
    for (const auto& entry : fs::directory_iterator(run_dir / "checkpoints"))
      if (std::regex_match(entry.path().filename().string(), std::regex(R"(ep\d+\.bin)"))) files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  if (files.empty()) throw ConfigError("no periodic checkpoints in " + (run_dir / "checkpoints").string());

  for (const auto& f : files) {
    CheckpointResult cr;
    cr.episode = std::stoi(f.filename().string().substr(2));
    cr.path = f.string();
    const agent::Agent agent = agent::Agent::load(cr.path);
    for (const auto& w : worlds) {
      const EpisodeResult e = evaluate(agent, w, laps, 1, max_steps).front();
      cr.laps.push_back(e.best_lap());
      cr.damage.push_back(e.damage);
    }
    report.checkpoints.push_back(std::move(cr));
  }
  report.general = select_general_model(report.checkpoints);

  CsvFile out(run_dir / "generalization.csv", "episode,track,best_lap,damage,general");
  for (std::size_t i = 0; i < report.checkpoints.size(); ++i)
    for (std::size_t t = 0; t < report.tracks.size(); ++t)
      out.row(report.checkpoints[i].episode, report.tracks[t], lap_cell(report.checkpoints[i].laps[t]),
              report.checkpoints[i].damage[t], report.general == i ? 1 : 0);
  return report;
}

// ---------------------------------------------------------------------------
// Adopted-target ablation

int AblationReport::at_wins() const {
  return static_cast<int>(std::count_if(pairs.begin(), pairs.end(),
                                        [](const AblationPair& p) { return p.at_final > p.plain_final; }));
}

AblationReport ablation_at(const ExperimentConfig& config, const fs::path& out_dir, int final_window) {
  AblationReport report;
  report.final_window = final_window;
  auto returns = [](const TrainResult& r) {
    std::vector<double> v;
    for (const auto& m : r.metrics) v.push_back(m.total_return);
    return v;
  };
  auto tail_mean = [final_window](const std::vector<double>& v) {
    const std::size_t k = std::min<std::size_t>(v.size(), static_cast<std::size_t>(final_window));
    if (k == 0) return 0.0;
    return std::accumulate(v.end() - static_cast<std::ptrdiff_t>(k), v.end(), 0.0) / static_cast<double>(k);
  };

  for (auto seed : config.seeds) {
    AblationPair pair;
    pair.seed = seed;
    for (bool at : {true, false}) {
      ExperimentConfig cfg = config;
      cfg.agent.adopted_target = at;
      const TrainResult r = train(cfg, seed, out_dir / (at ? "at" : "plain") / ("seed_" + std::to_string(seed)));
      (at ? pair.at_returns : pair.plain_returns) = returns(r);
    }
    pair.at_final = tail_mean(pair.at_returns);
    pair.plain_final = tail_mean(pair.plain_returns);
    report.pairs.push_back(std::move(pair));
  }

  CsvFile curves(out_dir / "ablation_at.csv", "seed,episode,at_return,plain_return,at_smooth,plain_smooth");
  for (const auto& p : report.pairs) {
    const auto at_s = moving_average(p.at_returns, 5);
    const auto plain_s = moving_average(p.plain_returns, 5);
    const std::size_t n = std::min(p.at_returns.size(), p.plain_returns.size());
    for (std::size_t i = 0; i < n; ++i)
      curves.row(p.seed, static_cast<int>(i + 1), p.at_returns[i], p.plain_returns[i], at_s[i], plain_s[i]);
  }
  CsvFile summary(out_dir / "ablation_at_summary.csv", "seed,at_final,plain_final,at_better");
  for (const auto& p : report.pairs) summary.row(p.seed, p.at_final, p.plain_final, p.at_final > p.plain_final ? 1 : 0);
  return report;
}

}  // namespace racerl::harness
