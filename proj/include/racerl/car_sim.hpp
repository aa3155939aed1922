#pragma once

#include <array>
#include <deque>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "racerl/track.hpp"

namespace racerl::sim {

using track::Vec2;

struct CarParams {
  double mass = 1000.0;             // kg
  double grip = 1.2;                // tire-road friction coefficient
  double downforce_coeff = 1.5;     // F_a = c * v^2, N / (m/s)^2
  double engine_force = 6000.0;     // N at full throttle
  double brake_force = 12000.0;     // N at full brake
  double max_steer = 0.35;          // rad at |steer| = 1
  double wheelbase = 2.7;           // m
  double top_speed = 70.0;          // m/s; aerodynamic drag is sized so engine force balances here
  double wheel_radius = 0.33;       // m
  double idle_rpm = 1000.0;
  double max_rpm = 10000.0;         // reached at top speed
  double gravity = 9.81;
  double slip_gain = 0.3;           // lateral slide speed per unit of grip saturation
  double slide_scrub = 0.5;         // fraction of the grip limit lost as drag while sliding

  double drag_coeff() const { return engine_force / (top_speed * top_speed); }
  double downforce(double speed) const { return downforce_coeff * speed * speed; }
  /// Maximum lateral acceleration mu * (g + F_a / m).
  double lateral_grip_limit(double speed) const { return grip * (gravity + downforce(speed) / mass); }
  double rpm(double speed) const;
  void validate() const;
};

struct CarState {
  Vec2 position;
  double heading = 0.0;   // rad, world frame
  double vx = 0.0;        // longitudinal speed, m/s
  double vy = 0.0;        // lateral speed (positive left), m/s
  double yaw_rate = 0.0;  // rad/s
  double damage = 0.0;    // cumulative, never decreases within an episode
};

struct Action {
  double steer = 0.0;     // [-1, 1], positive turns left
  double throttle = 0.0;  // [0, 1]
  double brake = 0.0;     // [0, 1]

  Action clamped() const;
  bool finite() const;
  bool operator==(const Action&) const = default;
};

enum class Termination { none, out_of_track, backwards, slow_progress, max_steps };

const char* to_string(Termination t);
Termination termination_from_string(const std::string& s);
/// Premature terminations end the episode for a reason other than the step cap.
inline bool is_premature(Termination t) {
  return t == Termination::out_of_track || t == Termination::backwards ||
         t == Termination::slow_progress;
}

/// Scale constants mapping each telemetry feature to roughly [-1, 1].
struct ObservationScale {
  static constexpr double angle = 3.14159265358979323846;
  static constexpr double range = track::kRangefinderRange;
  static constexpr double speed = 50.0;
  static constexpr double wheel_spin = 150.0;
  static constexpr double rpm = 10000.0;
  static constexpr double curvature = 0.02;  // LAC is divided by this
};

struct Observation {
  double angle = 0.0;
  std::array<double, track::kRangefinderCount> track{};
  double track_pos = 0.0;
  double vx = 0.0;
  double vy = 0.0;
  double vz = 0.0;
  std::array<double, 4> wheel_spin{};
  double rpm = 0.0;
  std::optional<std::array<double, 4>> lac;

  /// Scaled feature vector in fixed order: angle, 19 rangefinders, trackPos,
  /// Vx, Vy, Vz, 4 wheel speeds, rpm [, 4 LAC].
  std::vector<double> to_vector() const;
  static std::size_t size(bool lac_enabled) { return lac_enabled ? 33 : 29; }
};

struct StepInfo {
  bool lap_completed = false;
  double lap_time = 0.0;  // s, valid when lap_completed
  double damage_increment = 0.0;
};

struct StepResult {
  Observation observation;
  double reward = 0.0;
  Termination termination = Termination::none;
  StepInfo info;
};

// ---------------------------------------------------------------------------
// Pure pieces

/// Reward V_x (cos th - |sin th| - |trackPos|) - damage_weight * damage.
/// `literal_sin` switches to the signed sin(th) form.
double reward(double vx, double angle, double track_pos, double damage_increment,
              double damage_weight = 0.01, bool literal_sin = false);

/// One physics substep: longitudinal force balance plus a kinematic bicycle
/// model whose lateral acceleration is capped by the grip limit. Saturation
/// reduces the yaw rate, adds an outward slide and scrubs speed.
CarState integrate(const CarParams& params, CarState state, const Action& action, double dt);

/// Border contact. Adds damage_coeff * (outward normal speed)^2 to the state
/// and removes the outward velocity component. Returns the increment.
double apply_damage(CarState& state, Vec2 outward_normal, double damage_coeff);

struct EnvConfig {
  double dt = 0.2;
  int substeps = 10;
  int max_steps = 1000;
  double damage_weight = 0.01;
  double damage_coeff = 1.0;
  bool literal_sin = false;
  double slow_speed = 2.0;   // m/s
  int slow_window = 50;      // steps
  int slow_after = 100;      // steps
  int backwards_steps = 5;
  bool lac_enabled = false;
  double start_delta = 0.0;
};

struct TerminationCheck {
  Termination kind = Termination::none;
  std::optional<double> terminal_reward;
};

/// Episode-history part of the termination rules. Feed it once per agent step.
class TerminationMonitor {
 public:
  explicit TerminationMonitor(const EnvConfig& config) : config_(config) {}
  void reset();
  /// `track_pos` and `angle` are relative to the track axis.
  TerminationCheck update(double track_pos, double angle, double vx);
  int steps() const { return steps_; }

 private:
  EnvConfig config_;
  int steps_ = 0;
  int backwards_run_ = 0;
  std::deque<double> recent_vx_;
  double recent_sum_ = 0.0;
};

inline TerminationCheck check_termination(TerminationMonitor& history, double track_pos,
                                          double angle, double vx) {
  return history.update(track_pos, angle, vx);
}

/// Builds the observation for a car state. `reference` supplies angle,
/// trackPos and LAC; rangefinders come from the track borders.
Observation telemetry(const CarParams& params, const CarState& state, const track::Track& track,
                      const track::ReferencePath& reference, bool lac_enabled,
                      const track::TrackFrame* axis_frame = nullptr,
                      const track::TrackFrame* reference_frame = nullptr);

// ---------------------------------------------------------------------------

class Environment {
 public:
  Environment(std::shared_ptr<const track::Track> track,
              std::shared_ptr<const track::ReferencePath> reference, EnvConfig config = {},
              CarParams params = {});

  Observation reset();
  StepResult step(const Action& action);

  const CarState& state() const { return state_; }
  const CarParams& params() const { return params_; }
  const EnvConfig& config() const { return config_; }
  const track::Track& track() const { return *track_; }
  const track::ReferencePath& reference() const { return *reference_; }
  const track::TrackFrame& axis_frame() const { return axis_frame_; }
  const track::TrackFrame& reference_frame() const { return reference_frame_; }
  int steps() const { return monitor_.steps(); }
  double time() const { return steps() * config_.dt; }
  int laps() const { return laps_; }
  /// Unwrapped distance travelled along the axis since the start line.
  double progress() const { return progress_; }
  double best_lap() const { return best_lap_; }

 private:
  void update_frames();

  std::shared_ptr<const track::Track> track_;
  std::shared_ptr<const track::ReferencePath> reference_;
  EnvConfig config_;
  CarParams params_;
  CarState state_;
  TerminationMonitor monitor_;
  track::TrackFrame axis_frame_;
  track::TrackFrame reference_frame_;
  double progress_ = 0.0;
  double sim_time_ = 0.0;
  double last_lap_start_ = 0.0;
  double best_lap_ = 0.0;
  int laps_ = 0;
};

}  // namespace racerl::sim
