#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <regex>
#include <sstream>

#include <nlohmann/json.hpp>

#include "racerl/errors.hpp"
#include "racerl/harness.hpp"
#include "racerl/plot.hpp"

using namespace racerl;
using namespace racerl::harness;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("racerl_test_harness_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

ExperimentConfig tiny_config() {
  ExperimentConfig c;
  c.episodes = 2;
  c.seeds = {5};
  c.warmup = 64;
  c.eval_every = 1;
  c.eval_laps = 1;
  c.eval_max_steps = 150;
  c.checkpoint_every = 1;
  c.env.max_steps = 150;
  c.agent.batch_size = 16;
  return c;
}

}  // namespace

TEST_CASE("moving average") {
  const auto m = moving_average({0, 0, 0, 0, 5}, 5);
  CHECK(m.back() == 1.0);
  for (double v : moving_average(std::vector<double>(12, 3.25), 5)) CHECK(v == 3.25);
  const auto e = moving_average({2, 4, 6}, 5);
  CHECK(e[0] == 2.0);
  CHECK(e[1] == 3.0);
  CHECK_THROWS_AS(moving_average({1.0}, 0), DomainError);
}

TEST_CASE("leaderboard ranks finishers before DNF") {
  const std::vector<RunSummary> runs = {
      {"WIN8", 1, std::nullopt, 0.0}, {"WIN8", 2, 30.0, 3.0},  // only a damaged finisher
      {"WIN1", 1, 28.0, 0.0},         {"WIN1", 2, 27.0, 0.0}, {"WIN1", 3, 26.0, 1.0},
  };
  const auto rows = leaderboard(runs);
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].variant == "WIN1");
  CHECK(*rows[0].blt == 27.0);
  CHECK(*rows[0].alt == 27.5);
  CHECK(rows[0].finish_rate == 1.0);
  CHECK(rows[1].variant == "WIN8");
  CHECK_FALSE(rows[1].alt.has_value());
  CHECK(rows[1].finish_rate == 0.5);
  CHECK(rows[1].mean_damage == 1.5);
  for (const auto& r : rows)
    if (r.alt) CHECK(*r.alt >= *r.blt);
  // aggregation is a pure function of its input
  const auto again = leaderboard(runs);
  CHECK(again[0].alt == rows[0].alt);
}

TEST_CASE("family winner picks the lowest aLT") {
  std::vector<LeaderboardRow> rows(3);
  const char* names[] = {"WIN1", "WIN4", "WIN8"};
  const double alts[] = {27.16, 26.96, 35.61};
  for (int i = 0; i < 3; ++i) {
    rows[i].variant = names[i];
    rows[i].alt = alts[i];
    rows[i].blt = alts[i];
  }
  CHECK(family_winner(rows, {"WIN1", "WIN4", "WIN8"}) == std::optional<std::string>("WIN4"));
  rows[1].alt.reset();
  CHECK(family_winner(rows, {"WIN1", "WIN4", "WIN8"}) == std::optional<std::string>("WIN1"));
  CHECK_FALSE(family_winner(rows, {"WIN4"}).has_value());
}

TEST_CASE("general model selection") {
  CheckpointResult finishes{50, "a", {70.0, 80.0, 90.0}, {0, 0, 0}};
  CheckpointResult dnf_b{100, "b", {65.0, std::nullopt, 88.0}, {0, 0, 0}};
  CHECK(select_general_model({finishes, dnf_b}) == std::optional<std::size_t>(0));
  CHECK(select_general_model({finishes}) == std::optional<std::size_t>(0));
  CHECK_FALSE(select_general_model({dnf_b}).has_value());
  CHECK_FALSE(select_general_model({}).has_value());
  CheckpointResult tie{150, "c", {70.0, 75.0, 85.0}, {0, 0, 0}};
  CHECK(select_general_model({dnf_b, finishes, tie}) == std::optional<std::size_t>(1));
  CheckpointResult faster{200, "d", {60.0, 75.0, 85.0}, {0, 0, 0}};
  CHECK(select_general_model({finishes, dnf_b, faster}) == std::optional<std::size_t>(2));
}

TEST_CASE("bot pedals") {
  const track::TrackSegment segs[] = {track::TrackSegment::straight(400), track::TrackSegment::arc(180, 20),
                               track::TrackSegment::straight(400), track::TrackSegment::arc(180, 20)};
  const track::Track t = track::make_track_from_segments("hairpins", 12.0, segs);
  const sim::CarParams car;

  sim::CarState cruising;
  cruising.position = {50.0, 0.0};
  cruising.vx = 10.0;
  const Action a = baseline_bot(cruising, t.axis().project(cruising.position, 0.0), t.axis(), car);
  CHECK(a.brake == 0.0);
  CHECK(a.throttle > 0.0);
  CHECK(std::abs(a.steer) < 0.05);

  sim::CarState late;
  late.position = {390.0, 0.0};
  late.vx = 50.0;
  const Action b = baseline_bot(late, t.axis().project(late.position, 0.0), t.axis(), car);
  CHECK(b.brake > 0.0);
  CHECK(b.throttle == 0.0);
}

TEST_CASE("bot laps the oval cleanly and deterministically") {
  const World w = make_world("oval", ReferenceMode::mot, "", sim::EnvConfig{});
  const EpisodeResult r1 = evaluate_bot(w, 2);
  const EpisodeResult r2 = evaluate_bot(w, 2);
  REQUIRE(r1.lap_times.size() == 2);
  CHECK(r1.damage == 0.0);
  CHECK(r1.lap_times == r2.lap_times);
  CHECK(*r1.best_lap() == doctest::Approx(32.2845).epsilon(1e-5));
}

TEST_CASE("recorded reference line") {
  const track::Track t = track::bundled_track("oval");
  const track::RacingLine line = record_reference_line(t);
  double lo = 1.0, hi = 0.0;
  for (const auto& p : line.points()) {
    CHECK(p.alpha >= 0.0);
    CHECK(p.alpha <= 1.0);
    lo = std::min(lo, p.alpha);
    hi = std::max(hi, p.alpha);
  }
  CHECK(hi - lo > 0.0);  // not just the centerline
  CHECK(line.path().lap_length() == doctest::Approx(t.length()).epsilon(0.01));
  // the oval's first straight keeps the line straight
  CHECK(std::abs(line.path().curvature_at(t.length() * 0.1)) < 5e-3);
}

TEST_CASE("DNF is a status, not an error") {
  const World w = make_world("oval", ReferenceMode::mot, "", sim::EnvConfig{});
  BotConfig crawl;
  crawl.speed_scale = 0.05;
  const EpisodeResult r = evaluate_bot(w, 1, crawl, 100);
  CHECK_FALSE(r.finished());
  CHECK_FALSE(r.best_lap().has_value());
}

TEST_CASE("config json round trip and unknown keys") {
  ExperimentConfig c;
  c.track = "technical";
  c.variant = agent::Variant::per40k;
  c.reference = ReferenceMode::rc_lac;
  c.seeds = {4, 9};
  c.agent.gamma = 0.97;
  c.env.damage_weight = 2.0;
  c.bot.safety = 0.8;
  const ExperimentConfig back = experiment_config_from_json(to_json(c));
  CHECK(to_json(back) == to_json(c));
  CHECK(back.agent_config().prioritized);
  CHECK(back.agent_config().observation_size == c.agent_config().observation_size);

  CHECK_THROWS_AS(experiment_config_from_json({{"tarck", "oval"}}), ConfigError);
  CHECK_THROWS_AS(experiment_config_from_json({{"agent", {{"gama", 0.9}}}}), ConfigError);
  CHECK_THROWS_AS(experiment_config_from_json({{"reference", "apex"}}), ConfigError);
  CHECK_THROWS_AS(experiment_config_from_json({{"episodes", 0}}), ConfigError);
  CHECK(experiment_config_from_json({{"episodes", 7}}).episodes == 7);
}

TEST_CASE("training smoke run is reproducible") {
  const ExperimentConfig c = tiny_config();
  const fs::path a = scratch("a"), b = scratch("b");
  const TrainResult ra = train(c, 5, a);
  const TrainResult rb = train(c, 5, b);
  CHECK_FALSE(ra.failed);
  CHECK(rb.metrics.size() == ra.metrics.size());
  REQUIRE(ra.metrics.size() == 2);
  for (const char* f : {"config.json", "run.json", "metrics.csv", "eval.csv", "best.bin", "latest.bin",
                        "checkpoints/ep00001.bin"})
    CHECK(fs::exists(a / f));
  const std::string ma = slurp(a / "metrics.csv");
  CHECK(std::count(ma.begin(), ma.end(), '\n') == 3);
  CHECK(ma == slurp(b / "metrics.csv"));
  CHECK(slurp(a / "eval.csv") == slurp(b / "eval.csv"));
  const auto run = nlohmann::json::parse(slurp(a / "run.json"));
  CHECK(run.at("seed") == 5);
  CHECK_FALSE(run.at("version").get<std::string>().empty());

  const ExperimentConfig back = load_experiment_config((a / "config.json").string());
  CHECK(to_json(back) == to_json(c));

  const World w = make_world("oval", ReferenceMode::mot, "", c.env);
  const auto e = evaluate_checkpoint((a / "latest.bin").string(), w, 1, 2, 100);
  REQUIRE(e.size() == 2);
  CHECK(e[0].steps == e[1].steps);
  CHECK(e[0].total_return == e[1].total_return);
  const World lac = make_world("oval", ReferenceMode::rc_lac, "", c.env);
  CHECK_THROWS_AS(evaluate_checkpoint((a / "latest.bin").string(), lac, 1), ConfigError);

  fs::remove_all(a);
  fs::remove_all(b);
}

TEST_CASE("one-episode run writes one metrics row") {
  ExperimentConfig c = tiny_config();
  c.episodes = 1;
  const fs::path dir = scratch("one");
  const TrainResult r = train(c, 1, dir);
  CHECK(r.metrics.size() == 1);
  const std::string m = slurp(dir / "metrics.csv");
  CHECK(std::count(m.begin(), m.end(), '\n') == 2);
  CHECK(m.rfind("episode,steps,return,critic_loss_mean,actor_obj_mean,epsilon_prime,laps,damage\n1,", 0) == 0);
  fs::remove_all(dir);
}

TEST_CASE("generalization over saved checkpoints") {
  ExperimentConfig c = tiny_config();
  const fs::path dir = scratch("gen");
  train(c, 3, dir);
  const GeneralizationReport r = generalization_eval(dir, {"oval", "technical"}, 1, 100);
  CHECK(r.tracks == std::vector<std::string>{"oval", "technical"});
  REQUIRE(r.checkpoints.size() == 2);
  CHECK(r.checkpoints[0].episode == 1);
  CHECK(r.checkpoints[0].laps.size() == 2);
  CHECK(fs::exists(dir / "generalization.csv"));
  fs::remove_all(dir);
  CHECK_THROWS_AS(generalization_eval(scratch("empty"), {"oval"}), ConfigError);
}

TEST_CASE("plot svg") {
  const std::string svg = plot::line_plot_svg("t", "x", "y", {{"s", {0.0, 1.0}, {2.0, 3.0}}});
  const std::regex poly("<polyline[^>]*points=\"([^\"]*)\"");
  std::smatch m;
  REQUIRE(std::regex_search(svg, m, poly));
  std::istringstream pts(m[1].str());
  int n = 0;
  for (std::string tok; pts >> tok;) ++n;
  CHECK(n == 2);
  std::size_t count = 0;
  for (std::size_t p = svg.find("<polyline"); p != std::string::npos; p = svg.find("<polyline", p + 1)) ++count;
  CHECK(count == 1);

  const fs::path dir = scratch("plot");
  std::ofstream(dir / "empty.csv") << "episode,return\n";
  CHECK_THROWS(plot::read_csv((dir / "empty.csv").string()));
  CHECK_THROWS(plot::read_csv((dir / "missing.csv").string()));
  std::ofstream(dir / "m.csv") << "episode,return\n1,2\n2,DNF\n";
  const plot::CsvTable tab = plot::read_csv((dir / "m.csv").string());
  CHECK(tab.column("return") == 1);
  CHECK(std::isnan(tab.numbers(1)[1]));
  CHECK(plot::plot_csv(tab, "m").find("<svg") != std::string::npos);
  fs::remove_all(dir);
}

TEST_CASE("reference mode names") {
  for (auto m : {ReferenceMode::mot, ReferenceMode::rc, ReferenceMode::rc_lac})
    CHECK(reference_mode_from_string(to_string(m)) == m);
  CHECK_THROWS_AS(reference_mode_from_string("fast"), ConfigError);
  CHECK(format_number(0.5) == "0.5");
  CHECK(format_number(std::nan("")) == "nan");
}
