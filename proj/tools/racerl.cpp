#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "racerl/errors.hpp"
#include "racerl/harness.hpp"
#include "racerl/plot.hpp"

using namespace racerl;
namespace fs = std::filesystem;

namespace {

harness::ExperimentConfig config_or_default(const std::string& path) {
  return path.empty() ? harness::ExperimentConfig{} : harness::load_experiment_config(path);
}

std::string lap_text(const std::optional<double>& lap) {
  return lap ? harness::format_number(*lap) : std::string("DNF");
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ',');)
    if (!item.empty()) out.push_back(item);
  return out;
}

void print_leaderboard(const std::string& title, const std::vector<harness::LeaderboardRow>& rows) {
  std::printf("%s\n%-4s %-8s %10s %10s %12s %8s\n", title.c_str(), "rank", "variant", "bLT", "aLT", "mean_damage",
              "finish");
  int rank = 1;
  for (const auto& r : rows)
    std::printf("%-4d %-8s %10s %10s %12.3f %8.2f\n", rank++, r.variant.c_str(), lap_text(r.blt).c_str(),
                lap_text(r.alt).c_str(), r.mean_damage, r.finish_rate);
}

int cmd_train(const std::string& config_path, std::uint64_t seed, std::string run_dir, bool quiet) {
  const harness::ExperimentConfig cfg = config_or_default(config_path);
  if (run_dir.empty())
    run_dir = (fs::path(cfg.output_dir) / cfg.track / agent::to_string(cfg.variant) / ("seed_" + std::to_string(seed)))
                  .string();
  auto progress = [quiet](const harness::MetricsRow& m) {
    if (quiet || (m.episode % 10 != 0 && m.episode != 1)) return;
    std::printf("episode %5d  steps %5d  return %10.1f  laps %d  damage %8.2f  eps' %.3f\n", m.episode, m.steps,
                m.total_return, m.laps, m.damage, m.epsilon_prime);
    std::fflush(stdout);
  };
  const harness::TrainResult r = harness::train(cfg, seed, run_dir, progress);
  std::printf("run dir: %s\n", r.run_dir.string().c_str());
  std::printf("best zero-damage lap: %s", lap_text(r.best_lap).c_str());
  if (r.best_lap) std::printf(" (episode %d)", r.best_lap_episode);
  std::printf("\n");
  if (r.failed) {
    std::fprintf(stderr, "training failed: %s\n", r.failure.c_str());
    return 3;
  }
  return 0;
}

int cmd_eval(const std::string& checkpoint, bool bot, const std::string& track, int laps,
             const std::string& reference, const std::string& line, int runs, int max_steps,
             const std::string& config_path, const std::string& telemetry) {
  const harness::ExperimentConfig cfg = config_or_default(config_path);
  const harness::World world = harness::make_world(track, harness::reference_mode_from_string(reference), line,
                                                   cfg.env, cfg.car, cfg.bot);
  if (runs <= 0) runs = track == "technical" ? 5 : 10;
  std::vector<harness::EpisodeResult> results;
  if (bot) {
    std::ofstream tel;
    std::unique_ptr<harness::TelemetryLog> log;
    if (!telemetry.empty()) {
      tel.open(telemetry);
      log = std::make_unique<harness::TelemetryLog>(tel);
    }
    for (int i = 0; i < runs; ++i)
      results.push_back(harness::evaluate_bot(world, laps, cfg.bot, max_steps, i == 0 ? log.get() : nullptr));
  } else {
    if (checkpoint.empty()) throw ConfigError("eval needs --checkpoint or --bot");
    results = harness::evaluate_checkpoint(checkpoint, world, laps, runs, max_steps);
    if (!telemetry.empty()) {
      const agent::Agent agent = agent::Agent::load(checkpoint);
      sim::EnvConfig env = world.env;
      env.max_steps = max_steps;
      sim::Environment e(world.track, world.reference, env, world.car);
      harness::AgentController controller(agent);
      std::ofstream tel(telemetry);
      harness::TelemetryLog log(tel);
      harness::run_episode(e, controller, laps, &log);
    }
  }
  double total_damage = 0.0;
  std::optional<double> best;
  for (std::size_t i = 0; i < results.size(); ++i) {
    const auto& r = results[i];
    std::printf("run %zu: laps %zu  best %s  damage %s  termination %s  laps:", i + 1, r.lap_times.size(),
                lap_text(r.best_lap()).c_str(), harness::format_number(r.damage).c_str(),
                sim::to_string(r.termination));
    for (double t : r.lap_times) std::printf(" %s", harness::format_number(t).c_str());
    std::printf("\n");
    total_damage += r.damage;
    if (r.best_lap() && (!best || *r.best_lap() < *best)) best = r.best_lap();
  }
  std::printf("summary: best %s  cumulative damage %s  status %s\n", lap_text(best).c_str(),
              harness::format_number(total_damage).c_str(), best ? "finished" : "DNF");
  return 0;
}

int cmd_tournament(const std::string& config_path) {
  const harness::ExperimentConfig cfg = config_or_default(config_path);
  const harness::TournamentResult r = harness::tournament(cfg);
  print_leaderboard("leaderboard " + cfg.track, r.rows);
  std::printf("family winners:");
  for (const auto& w : r.winners) std::printf(" %s", w.c_str());
  std::printf("\n");
  if (!r.promoted_rows.empty()) print_leaderboard("leaderboard " + cfg.promote_track, r.promoted_rows);
  return 0;
}

int cmd_generalize(const std::string& run_dir, const std::string& tracks, int laps, int max_steps) {
  const auto rep = harness::generalization_eval(run_dir, split_list(tracks), laps, max_steps);
  std::printf("%-8s", "episode");
  for (const auto& t : rep.tracks) std::printf(" %14s", t.c_str());
  std::printf("\n");
  for (std::size_t i = 0; i < rep.checkpoints.size(); ++i) {
    std::printf("%-8d", rep.checkpoints[i].episode);
    for (const auto& l : rep.checkpoints[i].laps) std::printf(" %14s", lap_text(l).c_str());
    std::printf("%s\n", rep.general == i ? "  <- general model" : "");
  }
  if (!rep.general) std::printf("no checkpoint finishes every track: no general model\n");
  std::printf("wrote %s\n", (fs::path(run_dir) / "generalization.csv").string().c_str());
  return 0;
}

int cmd_ablate(const std::string& config_path, const std::string& track, int episodes, int max_steps, int seeds,
               const std::string& out) {
  harness::ExperimentConfig cfg = config_or_default(config_path);
  cfg.track = track;
  if (episodes > 0) cfg.episodes = episodes;
  if (max_steps > 0) cfg.env.max_steps = max_steps;
  cfg.seeds.clear();
  for (int s = 1; s <= seeds; ++s) cfg.seeds.push_back(static_cast<std::uint64_t>(s));
  const fs::path dir = out.empty() ? fs::path(cfg.output_dir) / ("ablate_at_" + track) : fs::path(out);
  const auto rep = harness::ablation_at(cfg, dir);
  for (const auto& p : rep.pairs)
    std::printf("seed %llu: AT %.1f  y=r %.1f  %s\n", static_cast<unsigned long long>(p.seed), p.at_final,
                p.plain_final, p.at_final > p.plain_final ? "AT better" : "y=r better or equal");
  std::printf("AT better in %d of %zu pairs (final %d-episode window)\n", rep.at_wins(), rep.pairs.size(),
              rep.final_window);
  std::printf("wrote %s\n", (dir / "ablation_at.csv").string().c_str());
  return 0;
}

int cmd_record_line(const std::string& config_path, const std::string& track_name, std::string out) {
  const harness::ExperimentConfig cfg = config_or_default(config_path);
  const track::Track t = track::load_track(track_name);
  harness::BotConfig slow = cfg.bot;
  slow.speed_scale = 0.6;
  const track::RacingLine line = harness::record_reference_line(t, slow, 2.0, cfg.car);
  if (out.empty()) out = "racing_line_" + track_name + ".json";
  track::save_json(out, track::racing_line_to_json(line));
  std::printf("recorded %zu points over %.1f m -> %s\n", line.points().size(), t.length(), out.c_str());
  return 0;
}

int cmd_plot(const std::string& csv, std::string out) {
  const plot::CsvTable table = plot::read_csv(csv);
  if (out.empty()) out = fs::path(csv).replace_extension(".svg").string();
  std::ofstream f(out);
  if (!f) throw std::runtime_error("cannot write " + out);
  f << plot::plot_csv(table, fs::path(csv).stem().string());
  std::printf("wrote %s\n", out.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"racerl: DDPG racing agents on a 2D track simulator"};
  app.require_subcommand(0, 1);
  bool print_config = false;
  app.add_flag("--print-config", print_config, "print the default configuration as JSON and exit");
  app.set_version_flag("--version", std::string(harness::version()));

  std::string config, run_dir, checkpoint, track = "oval", reference = "mot", line, tracks, out, telemetry;
  std::uint64_t seed = 1;
  int laps = 2, runs = 0, max_steps = 2000, episodes = 0, seeds = 5, ablate_steps = 0;
  bool bot = false, quiet = false;

  auto* train = app.add_subcommand("train", "train one seed");
  train->add_option("--config", config, "experiment config (JSON)")->check(CLI::ExistingFile);
  train->add_option("--seed", seed, "random seed");
  train->add_option("--run-dir", run_dir, "output directory (default: <output_dir>/<track>/<variant>/seed_<n>)");
  train->add_flag("--quiet", quiet, "no per-episode progress");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint (or the baseline bot)");
  eval->add_option("--checkpoint", checkpoint, "agent checkpoint")->check(CLI::ExistingFile);
  eval->add_flag("--bot", bot, "evaluate the baseline bot instead of a checkpoint");
  eval->add_option("--track", track, "track name or JSON file");
  eval->add_option("--laps", laps, "laps per run");
  eval->add_option("--reference", reference, "mot, rc or rc-lac")->check(CLI::IsMember({"mot", "rc", "rc-lac"}));
  eval->add_option("--line", line, "racing line file for rc modes (default: record one)");
  eval->add_option("--runs", runs, "evaluation runs (default: 10, or 5 on technical)");
  eval->add_option("--max-steps", max_steps, "step cap per run");
  eval->add_option("--config", config, "experiment config providing env/car/bot settings")->check(CLI::ExistingFile);
  eval->add_option("--telemetry", telemetry, "write per-step telemetry CSV of the first run");

  auto* tourn = app.add_subcommand("tournament", "train and rank variants");
  tourn->add_option("--config", config, "experiment config (JSON)")->required()->check(CLI::ExistingFile);

  auto* gen = app.add_subcommand("generalize", "evaluate periodic checkpoints on several tracks");
  gen->add_option("--run-dir", run_dir, "training run directory")->required()->check(CLI::ExistingDirectory);
  gen->add_option("--tracks", tracks, "comma-separated track names")->required();
  gen->add_option("--laps", laps, "laps per evaluation")->default_val(1);
  gen->add_option("--max-steps", max_steps, "step cap per evaluation");

  auto* ablate = app.add_subcommand("ablate-at", "adopted-target ablation over paired seeds");
  ablate->add_option("--track", track, "track name");
  ablate->add_option("--config", config, "experiment config (JSON)")->check(CLI::ExistingFile);
  ablate->add_option("--episodes", episodes, "episodes per run")->default_val(400);
  ablate->add_option("--max-steps", ablate_steps, "episode step cap")->default_val(60);
  ablate->add_option("--seeds", seeds, "number of paired seeds")->default_val(5);
  ablate->add_option("--out", out, "output directory");

  auto* record = app.add_subcommand("record-line", "record a reference racing line with the bot");
  record->add_option("--track", track, "track name")->required();
  record->add_option("-o,--out", out, "output JSON file");
  record->add_option("--config", config, "experiment config providing car/bot settings")->check(CLI::ExistingFile);

  std::string csv;
  auto* plt = app.add_subcommand("plot", "render a CSV written by racerl as SVG");
  plt->add_option("csv", csv, "input CSV")->required();
  plt->add_option("-o,--out", out, "output SVG");

  CLI11_PARSE(app, argc, argv);

  try {
    if (print_config) {
      std::cout << harness::to_json(harness::ExperimentConfig{}).dump(2) << '\n';
      return 0;
    }
    if (*train) return cmd_train(config, seed, run_dir, quiet);
    if (*eval) return cmd_eval(checkpoint, bot, track, laps, reference, line, runs, max_steps, config, telemetry);
    if (*tourn) return cmd_tournament(config);
    if (*gen) return cmd_generalize(run_dir, tracks, laps, max_steps);
    if (*ablate) return cmd_ablate(config, track, episodes, ablate_steps, seeds, out);
    if (*record) return cmd_record_line(config, track, out);
    if (*plt) return cmd_plot(csv, out);
    std::cout << app.help();
    return 0;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
}
