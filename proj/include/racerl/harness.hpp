#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "racerl/agent.hpp"
#include "racerl/car_sim.hpp"
#include "racerl/track.hpp"

namespace racerl::harness {

using sim::Action;
using sim::Termination;

/// Build version, e.g. "0.1.0-3-gabc1234".
const char* version();

// ---------------------------------------------------------------------------
// Reference modes

/// mot: middle of the track; rc: recorded racing line; rc_lac: racing line plus
/// look-ahead curvature features.
enum class ReferenceMode { mot, rc, rc_lac };

const char* to_string(ReferenceMode m);
ReferenceMode reference_mode_from_string(const std::string& s);

// ---------------------------------------------------------------------------
// Baseline bot

struct BotConfig {
  double safety = 0.9;          // fraction of the cornering limit used as speed target
  double speed_scale = 1.0;     // extra multiplier on the speed target
  double lookahead_min = 8.0;   // m
  double lookahead_time = 0.4;  // s of travel added to the pursuit distance
  double preview = 200.0;       // m of path scanned for upcoming corners
  double brake_decel = 8.0;     // m/s^2 assumed when planning braking points
  double speed_gain = 0.4;      // pedal per m/s of speed error
};

/// Speed target at `delta`: min over the preview of the braking-reachable
/// cornering limit, capped at top speed.
double bot_target_speed(const track::ReferencePath& path, const sim::CarParams& car, double delta,
                        const BotConfig& config);

/// Pure pursuit toward a look-ahead point on `path` plus proportional
/// throttle/brake toward the target speed.
Action baseline_bot(const sim::CarState& state, const track::TrackFrame& frame,
                    const track::ReferencePath& path, const sim::CarParams& car,
                    const BotConfig& config = {});

/// Drives the bot around `track` at reduced speed and samples <delta, alpha>
/// every `spacing` meters of the second (flying) lap. Throws if no lap is completed.
track::RacingLine record_reference_line(const track::Track& track, BotConfig config = {0.9, 0.6},
                                        double spacing = 2.0, const sim::CarParams& car = {});

// ---------------------------------------------------------------------------
// Rollouts

struct EpisodeResult {
  std::vector<double> lap_times;
  double damage = 0.0;
  Termination termination = Termination::none;
  double total_return = 0.0;
  int steps = 0;

  bool finished() const { return !lap_times.empty(); }
  /// Fastest completed lap, or nullopt for DNF.
  std::optional<double> best_lap() const;
};

/// Anything that maps the current environment state to an action.
class Controller {
 public:
  virtual ~Controller() = default;
  virtual void reset(const sim::Observation& first) = 0;
  virtual Action act(const sim::Environment& env, const sim::Observation& obs) = 0;
};

class BotController : public Controller {
 public:
  explicit BotController(BotConfig config = {}) : config_(config) {}
  void reset(const sim::Observation&) override {}
  Action act(const sim::Environment& env, const sim::Observation& obs) override;

 private:
  BotConfig config_;
};

/// Deterministic (or exploring, when `exploration` is set) agent policy.
class AgentController : public Controller {
 public:
  explicit AgentController(const agent::Agent& agent, agent::ExplorationState* exploration = nullptr);
  void reset(const sim::Observation& first) override;
  Action act(const sim::Environment& env, const sim::Observation& obs) override;

 private:
  const agent::Agent& agent_;
  agent::ExplorationState* exploration_;
  agent::ObservationWindow window_;
  bool started_ = false;
};

/// Per-step CSV: step,t,x,y,heading,Vx,Vy,steer,throttle,brake,reward,trackPos,theta,damage
class TelemetryLog {
 public:
  explicit TelemetryLog(std::ostream& out);
  void record(int step, const sim::Environment& env, const Action& action, double reward);

 private:
  std::ostream& out_;
};

/// Runs one episode from a standing start until `laps` laps are done or the
/// environment terminates it.
EpisodeResult run_episode(sim::Environment& env, Controller& controller, int laps,
                          TelemetryLog* log = nullptr);

// ---------------------------------------------------------------------------
// Configuration

struct ExperimentConfig {
  std::string track = "oval";
  agent::Variant variant = agent::Variant::win1;
  ReferenceMode reference = ReferenceMode::mot;
  std::string line_file;  // racing line for rc modes; empty: record one with the bot
  int episodes = 500;
  std::vector<std::uint64_t> seeds = {1, 2, 3};
  int eval_every = 10;
  int eval_laps = 2;
  int eval_max_steps = 2000;
  int checkpoint_every = 50;
  int warmup = 1000;  // transitions collected before updates start
  int updates_per_step = 1;
  std::string output_dir = "runs";
  // tournament
  std::vector<agent::Variant> variants;
  std::string promote_track;  // second phase for family winners; empty to skip
  int promote_episodes = 2000;
  int jobs = 1;

  agent::AgentConfig agent;
  sim::EnvConfig env;
  sim::CarParams car;
  BotConfig bot;

  void validate() const;
  /// Agent settings for `variant` with this experiment's overrides applied.
  agent::AgentConfig agent_config() const;
};

nlohmann::json to_json(const ExperimentConfig& c);
/// Missing keys keep their defaults. Unknown keys are rejected.
ExperimentConfig experiment_config_from_json(const nlohmann::json& j);
ExperimentConfig load_experiment_config(const std::string& path);

struct World {
  std::shared_ptr<const track::Track> track;
  std::shared_ptr<const track::ReferencePath> reference;
  std::optional<track::RacingLine> line;
  sim::EnvConfig env;
  sim::CarParams car;
};

/// Loads the track and resolves the reference path for a mode (recording a
/// racing line with the bot when the rc modes have no line file).
World make_world(const std::string& track_name, ReferenceMode mode, const std::string& line_file,
                 sim::EnvConfig env, const sim::CarParams& car = {}, const BotConfig& bot = {});

// ---------------------------------------------------------------------------
// Training and evaluation

struct MetricsRow {
  int episode = 0;
  int steps = 0;
  double total_return = 0.0;
  double critic_loss_mean = 0.0;
  double actor_obj_mean = 0.0;
  double epsilon_prime = 0.0;
  int laps = 0;
  double damage = 0.0;
};

struct EvalRow {
  int episode = 0;
  EpisodeResult result;
};

struct TrainResult {
  std::filesystem::path run_dir;
  std::uint64_t seed = 0;
  std::vector<MetricsRow> metrics;
  std::vector<EvalRow> evals;
  /// Fastest zero-damage lap seen in any evaluation.
  std::optional<double> best_lap;
  int best_lap_episode = 0;
  bool failed = false;
  std::string failure;
};

using ProgressFn = std::function<void(const MetricsRow&)>;

/// Trains one seed and writes config, metrics.csv, eval.csv and checkpoints to `run_dir`.
TrainResult train(const ExperimentConfig& config, std::uint64_t seed,
                  const std::filesystem::path& run_dir, const ProgressFn& progress = {});

/// Deterministic evaluation of an agent: `runs` rollouts of `laps` laps each.
std::vector<EpisodeResult> evaluate(const agent::Agent& agent, const World& world, int laps,
                                    int runs = 1, int max_steps = 2000);
std::vector<EpisodeResult> evaluate_checkpoint(const std::string& checkpoint, const World& world,
                                               int laps, int runs = 1, int max_steps = 2000);
EpisodeResult evaluate_bot(const World& world, int laps, const BotConfig& bot = {},
                           int max_steps = 2000, TelemetryLog* log = nullptr);

// ---------------------------------------------------------------------------
// Tournament

/// Outcome of one trained model in the test phase.
struct RunSummary {
  std::string variant;
  std::uint64_t seed = 0;
  std::optional<double> best_lap;  // nullopt: DNF
  double damage = 0.0;
};

struct LeaderboardRow {
  std::string variant;
  std::optional<double> blt;  // over zero-damage finishers
  std::optional<double> alt;
  double mean_damage = 0.0;
  double finish_rate = 0.0;
  int runs = 0;
};

/// Pure aggregation: finishers ranked by aLT, then variants without a
/// zero-damage finisher (DNF).
std::vector<LeaderboardRow> leaderboard(const std::vector<RunSummary>& runs);
/// Best variant (by aLT) among `candidates`; nullopt when all are DNF.
std::optional<std::string> family_winner(const std::vector<LeaderboardRow>& rows,
                                         const std::vector<std::string>& candidates);
void write_leaderboard(const std::filesystem::path& path, const std::vector<LeaderboardRow>& rows);

struct TournamentResult {
  std::vector<RunSummary> runs;
  std::vector<LeaderboardRow> rows;
  std::vector<std::string> winners;
  std::vector<RunSummary> promoted_runs;
  std::vector<LeaderboardRow> promoted_rows;
};

TournamentResult tournament(const ExperimentConfig& config);

// ---------------------------------------------------------------------------
// Generalization

struct CheckpointResult {
  int episode = 0;
  std::string path;
  /// Best lap per track (training track first); nullopt: DNF.
  std::vector<std::optional<double>> laps;
  std::vector<double> damage;
};

/// Index of the checkpoint with the fastest training-track lap among those
/// finishing every track; ties go to the earlier checkpoint.
std::optional<std::size_t> select_general_model(const std::vector<CheckpointResult>& results);

struct GeneralizationReport {
  std::vector<std::string> tracks;
  std::vector<CheckpointResult> checkpoints;
  std::optional<std::size_t> general;
};

/// Evaluates every periodic checkpoint in `run_dir` on all `tracks` (the
/// training track must come first) and writes generalization.csv there.
GeneralizationReport generalization_eval(const std::filesystem::path& run_dir,
                                         const std::vector<std::string>& tracks, int laps = 1,
                                         int max_steps = 2000);

// ---------------------------------------------------------------------------
// Adopted-target ablation

struct AblationPair {
  std::uint64_t seed = 0;
  std::vector<double> at_returns;
  std::vector<double> plain_returns;
  double at_final = 0.0;
  double plain_final = 0.0;
};

struct AblationReport {
  std::vector<AblationPair> pairs;
  int final_window = 10;
  int at_wins() const;
};

/// Paired runs differing only in the adopted-target flag. Writes
/// ablation_at.csv (raw and smoothed curves) and ablation_at_summary.csv.
AblationReport ablation_at(const ExperimentConfig& config, const std::filesystem::path& out_dir,
                           int final_window = 10);

// ---------------------------------------------------------------------------
// Small utilities

/// Trailing moving average; early entries average what is available.
std::vector<double> moving_average(const std::vector<double>& values, int window);

/// Numbers as written to CSV files.
std::string format_number(double v);

}  // namespace racerl::harness
