#include "racerl/car_sim.hpp"

#include <algorithm>
#include <cmath>

#include "racerl/errors.hpp"

namespace racerl::sim {

double CarParams::rpm(double speed) const {
  return idle_rpm + (max_rpm - idle_rpm) * std::clamp(speed / top_speed, 0.0, 1.0);
}

void CarParams::validate() const {
  for (double v : {mass, grip, engine_force, brake_force, max_steer, wheelbase, top_speed,
                   wheel_radius, idle_rpm, max_rpm, gravity})
    if (!(v > 0.0) || !std::isfinite(v)) throw ConfigError("car parameters must be positive");
  if (downforce_coeff < 0.0 || slip_gain < 0.0 || slide_scrub < 0.0)
    throw ConfigError("car parameters must be non-negative");
}

Action Action::clamped() const {
  return {std::clamp(steer, -1.0, 1.0), std::clamp(throttle, 0.0, 1.0), std::clamp(brake, 0.0, 1.0)};
}

bool Action::finite() const {
  return std::isfinite(steer) && std::isfinite(throttle) && std::isfinite(brake);
}

const char* to_string(Termination t) {
  switch (t) {
    case Termination::none:
      return "none";
    case Termination::out_of_track:
      return "out_of_track";
    case Termination::backwards:
      return "backwards";
    case Termination::slow_progress:
      return "slow_progress";
    case Termination::max_steps:
      return "max_steps";
  }
  return "none";
}

Termination termination_from_string(const std::string& s) {
  for (auto t : {Termination::none, Termination::out_of_track, Termination::backwards,
                 Termination::slow_progress, Termination::max_steps})
    if (s == to_string(t)) return t;
  throw ConfigError("unknown termination '" + s + "'");
}

std::vector<double> Observation::to_vector() const {
  std::vector<double> v;
  v.reserve(size(lac.has_value()));
  v.push_back(angle / ObservationScale::angle);
  for (double r : track) v.push_back(r / ObservationScale::range);
  v.push_back(track_pos);
  v.push_back(vx / ObservationScale::speed);
  v.push_back(vy / ObservationScale::speed);
  v.push_back(vz / ObservationScale::speed);
  for (double w : wheel_spin) v.push_back(w / ObservationScale::wheel_spin);
  v.push_back(rpm / ObservationScale::rpm);
  if (lac)
    for (double k : *lac) v.push_back(k / ObservationScale::curvature);
  return v;
}

// ---------------------------------------------------------------------------

double reward(double vx, double angle, double track_pos, double damage_increment,
              double damage_weight, bool literal_sin) {
  const double side = literal_sin ? std::sin(angle) : std::abs(std::sin(angle));
  return vx * (std::cos(angle) - side - std::abs(track_pos)) - damage_weight * damage_increment;
}

CarState integrate(const CarParams& p, CarState s, const Action& action, double dt) {
  const double v = s.vx;
  const double steer_angle = action.steer * p.max_steer;

  double force = p.engine_force * action.throttle - p.drag_coeff() * v * v;
  if (v > 0.0) force -= p.brake_force * action.brake;

  const double yaw_desired = v * std::tan(steer_angle) / p.wheelbase;
  const double lat_desired = v * std::abs(yaw_desired);
  const double lat_limit = p.lateral_grip_limit(v);
  double saturation = 0.0;
  if (lat_desired > lat_limit) saturation = 1.0 - lat_limit / lat_desired;

  const double side = yaw_desired > 0 ? 1.0 : (yaw_desired < 0 ? -1.0 : 0.0);
  s.vy = -side * p.slip_gain * saturation * v;
  const double speed = std::hypot(v, s.vy);
  double yaw = yaw_desired;
  if (speed > 0.0) yaw = side * std::min(std::abs(yaw_desired), lat_limit / speed);

  double vx = v + force / p.mass * dt - p.slide_scrub * lat_limit * saturation * dt;
  vx = std::clamp(vx, 0.0, p.top_speed);
  if (vx == 0.0) s.vy = 0.0;

  const double mid_heading = s.heading + 0.5 * yaw * dt;
  const Vec2 forward = Vec2::from_angle(mid_heading);
  s.position = s.position + (forward * (0.5 * (v + vx)) + forward.left() * s.vy) * dt;
  s.heading = track::wrap_angle(s.heading + yaw * dt);
  s.yaw_rate = yaw;
  s.vx = vx;
  return s;
}

double apply_damage(CarState& state, Vec2 outward_normal, double damage_coeff) {
  const Vec2 forward = Vec2::from_angle(state.heading);
  const Vec2 left = forward.left();
  const Vec2 velocity = forward * state.vx + left * state.vy;
  const double normal_speed = velocity.dot(outward_normal);
  if (normal_speed <= 0.0) return 0.0;
  const Vec2 slide = velocity - outward_normal * normal_speed;
  state.vx = std::max(0.0, slide.dot(forward));
  state.vy = slide.dot(left);
  const double increment = damage_coeff * normal_speed * normal_speed;
  state.damage += increment;
  return increment;
}

// ---------------------------------------------------------------------------

void TerminationMonitor::reset() {
  steps_ = 0;
  backwards_run_ = 0;
  recent_vx_.clear();
  recent_sum_ = 0.0;
}

TerminationCheck TerminationMonitor::update(double track_pos, double angle, double vx) {
  ++steps_;
  recent_vx_.push_back(vx);
  recent_sum_ += vx;
  if (static_cast<int>(recent_vx_.size()) > config_.slow_window) {
    recent_sum_ -= recent_vx_.front();
    recent_vx_.pop_front();
  }
  constexpr double half_pi = 1.57079632679489661923;
  backwards_run_ = std::abs(angle) > half_pi ? backwards_run_ + 1 : 0;

  if (std::abs(track_pos) > 1.0) return {Termination::out_of_track, -1.0};
  if (backwards_run_ >= config_.backwards_steps) return {Termination::backwards, -1.0};
  if (steps_ >= config_.slow_after && static_cast<int>(recent_vx_.size()) == config_.slow_window &&
      recent_sum_ / config_.slow_window < config_.slow_speed)
    return {Termination::slow_progress, std::nullopt};
  if (steps_ >= config_.max_steps) return {Termination::max_steps, std::nullopt};
  return {};
}

Observation telemetry(const CarParams& params, const CarState& state, const track::Track& track,
                      const track::ReferencePath& reference, bool lac_enabled,
                      const track::TrackFrame* axis_frame,
                      const track::TrackFrame* reference_frame) {
  const track::TrackFrame axis =
      axis_frame ? *axis_frame : track.axis().project(state.position, state.heading);
  const track::TrackFrame ref =
      reference_frame ? *reference_frame : reference.project(state.position, state.heading);
  Observation obs;
  obs.angle = ref.angle;
  if (std::abs(axis.track_pos) <= 1.0)
    obs.track = track::rangefinders_inside(track, state.position, state.heading);
  obs.track_pos = ref.track_pos;
  obs.vx = state.vx;
  obs.vy = state.vy;
  obs.vz = 0.0;
  obs.wheel_spin.fill(state.vx / params.wheel_radius);
  obs.rpm = params.rpm(state.vx);
  if (lac_enabled) obs.lac = track::look_ahead_curvature(reference, ref.delta);
  return obs;
}

// ---------------------------------------------------------------------------

Environment::Environment(std::shared_ptr<const track::Track> track,
                         std::shared_ptr<const track::ReferencePath> reference, EnvConfig config,
                         CarParams params)
    : track_(std::move(track)),
      reference_(std::move(reference)),
      config_(config),
      params_(params),
      monitor_(config) {
  if (!track_) throw ConfigError("environment needs a track");
  if (!reference_) reference_ = std::shared_ptr<const track::ReferencePath>(track_, &track_->axis());
  if (config_.substeps < 1 || !(config_.dt > 0.0) || config_.max_steps < 1)
    throw ConfigError("invalid environment timing");
  params_.validate();
}

void Environment::update_frames() {
  axis_frame_ = track_->axis().project_near(state_.position, state_.heading, axis_frame_.segment);
  if (reference_.get() == &track_->axis()) {
    reference_frame_ = axis_frame_;
  } else {
    reference_frame_ =
        reference_->project_near(state_.position, state_.heading, reference_frame_.segment);
  }
}

Observation Environment::reset() {
  state_ = {};
  state_.position = track_->point_at(config_.start_delta);
  const Vec2 ahead = track_->point_at(config_.start_delta + 1.0);
  const Vec2 d = ahead - state_.position;
  state_.heading = std::atan2(d.y, d.x);
  monitor_.reset();
  axis_frame_ = track_->axis().project(state_.position, state_.heading);
  reference_frame_ = reference_->project(state_.position, state_.heading);
  progress_ = 0.0;
  sim_time_ = 0.0;
  last_lap_start_ = 0.0;
  best_lap_ = 0.0;
  laps_ = 0;
  return telemetry(params_, state_, *track_, *reference_, config_.lac_enabled, &axis_frame_,
                   &reference_frame_);
}

StepResult Environment::step(const Action& raw) {
  if (!raw.finite()) throw NumericError("environment step: non-finite action");
  const Action action = raw.clamped();
  StepResult result;
  const double h = config_.dt / config_.substeps;
  const double lap = track_->length();
  for (int k = 0; k < config_.substeps; ++k) {
    const double prev_delta = axis_frame_.delta;
    state_ = integrate(params_, state_, action, h);
    update_frames();

    if (std::abs(axis_frame_.lateral) >= track_->half_width()) {
      const Vec2 outward = track_->left_normal_at(axis_frame_.delta) *
                           (axis_frame_.lateral > 0.0 ? 1.0 : -1.0);
      result.info.damage_increment += apply_damage(state_, outward, config_.damage_coeff);
    }

    double d = axis_frame_.delta - prev_delta;
    if (d < -0.5 * lap) d += lap;
    if (d > 0.5 * lap) d -= lap;
    const double before = progress_;
    progress_ += d;
    const double start = sim_time_;
    sim_time_ += h;
    const double line = (laps_ + 1) * lap;
    if (before < line && progress_ >= line) {
      const double crossing = start + h * (line - before) / (progress_ - before);
      result.info.lap_completed = true;
      result.info.lap_time = crossing - last_lap_start_;
      best_lap_ = best_lap_ > 0.0 ? std::min(best_lap_, result.info.lap_time) : result.info.lap_time;
      last_lap_start_ = crossing;
      ++laps_;
    }
  }

  result.observation = telemetry(params_, state_, *track_, *reference_, config_.lac_enabled,
                                 &axis_frame_, &reference_frame_);
  const auto check = monitor_.update(axis_frame_.track_pos, axis_frame_.angle, state_.vx);
  result.termination = check.kind;
  if (check.terminal_reward) {
    result.reward = *check.terminal_reward;
  } else {
    result.reward = reward(state_.vx, reference_frame_.angle, reference_frame_.track_pos,
                           result.info.damage_increment, config_.damage_weight,
                           config_.literal_sin);
  }
  return result;
}

}  // namespace racerl::sim
