#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <nlohmann/json.hpp>

#include "racerl/agent.hpp"
#include "racerl/car_sim.hpp"
#include "racerl/errors.hpp"
#include "racerl/harness.hpp"
#include "racerl/replay.hpp"
#include "racerl/track.hpp"

namespace py = pybind11;
using namespace racerl;

namespace {

py::dict episode_dict(const harness::EpisodeResult& r) {
  py::dict d;
  d["lap_times"] = r.lap_times;
  d["best_lap"] = r.best_lap();
  d["damage"] = r.damage;
  d["termination"] = sim::to_string(r.termination);
  d["total_return"] = r.total_return;
  d["steps"] = r.steps;
  return d;
}

// Thin stateful wrapper so Python owns the track alongside the environment.
class PyEnv {
 public:
  PyEnv(const std::string& track, const std::string& reference, int max_steps)
      : world_(make(track, reference, max_steps)), env_(world_.track, world_.reference, world_.env, world_.car) {}

  std::vector<double> reset() { return env_.reset().to_vector(); }

  py::tuple step(double steer, double throttle, double brake) {
    const sim::StepResult r = env_.step({steer, throttle, brake});
    py::dict info;
    info["lap_completed"] = r.info.lap_completed;
    info["lap_time"] = r.info.lap_time;
    info["damage_increment"] = r.info.damage_increment;
    return py::make_tuple(r.observation.to_vector(), r.reward, sim::to_string(r.termination), info);
  }

  int laps() const { return env_.laps(); }
  double time() const { return env_.time(); }
  double damage() const { return env_.state().damage; }
  py::tuple position() const { return py::make_tuple(env_.state().position.x, env_.state().position.y); }

 private:
  static harness::World make(const std::string& track, const std::string& reference, int max_steps) {
    sim::EnvConfig env;
    env.max_steps = max_steps;
    return harness::make_world(track, harness::reference_mode_from_string(reference), "", env);
  }
  harness::World world_;
  sim::Environment env_;
};

}  // namespace

PYBIND11_MODULE(_racerl, m) {
  m.doc() = "racerl native core";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<DomainError>(m, "DomainError", PyExc_ValueError);
  py::register_exception<GeometryError>(m, "GeometryError", PyExc_ValueError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);

  m.def("version", &harness::version);
  m.def("reward", &sim::reward, py::arg("vx"), py::arg("angle"), py::arg("track_pos"),
        py::arg("damage_increment") = 0.0, py::arg("damage_weight") = 0.01, py::arg("literal_sin") = false);
  m.def("max_speed", &track::max_speed, py::arg("kappa"), py::arg("grip"), py::arg("mass"), py::arg("downforce"),
        py::arg("gravity") = 9.81);
  m.def(
      "priority",
      [](double td, double grad_sq, double lambda3, double epsilon) {
        replay::PERConfig c;
        c.lambda3 = lambda3;
        c.epsilon = epsilon;
        return replay::priority(td, grad_sq, c);
      },
      py::arg("td_error"), py::arg("actor_grad_sq"), py::arg("lambda3") = 0.1, py::arg("epsilon") = 1e-3);
  m.def("moving_average", &harness::moving_average, py::arg("values"), py::arg("window") = 5);
  m.def("bundled_track_names", &track::bundled_track_names);
  m.def("default_config_json", [] { return harness::to_json(harness::ExperimentConfig{}).dump(); });

  py::class_<track::Track>(m, "Track")
      .def_property_readonly("name", &track::Track::name)
      .def_property_readonly("length", &track::Track::length)
      .def_property_readonly("width", &track::Track::width)
      .def("curvature_at", [](const track::Track& t, double d) { return t.axis().curvature_at(d); });
  m.def("load_track", &track::load_track, py::arg("name_or_path"));

  py::class_<PyEnv>(m, "Env")
      .def(py::init<const std::string&, const std::string&, int>(), py::arg("track") = "oval",
           py::arg("reference") = "mot", py::arg("max_steps") = 1000)
      .def("reset", &PyEnv::reset)
      .def("step", &PyEnv::step, py::arg("steer"), py::arg("throttle"), py::arg("brake"))
      .def_property_readonly("laps", &PyEnv::laps)
      .def_property_readonly("time", &PyEnv::time)
      .def_property_readonly("damage", &PyEnv::damage)
      .def_property_readonly("position", &PyEnv::position);

  py::class_<agent::Agent>(m, "Agent")
      .def_static("load", py::overload_cast<const std::string&>(&agent::Agent::load), py::arg("path"))
      .def("act",
           [](const agent::Agent& a, const std::vector<double>& window) {
             const sim::Action x = a.act(window);
             return py::make_tuple(x.steer, x.throttle, x.brake);
           })
      .def_property_readonly("variant", [](const agent::Agent& a) { return agent::to_string(a.config().variant); })
      .def_property_readonly("config_json", [](const agent::Agent& a) { return agent::to_json(a.config()).dump(); });

  m.def(
      "evaluate_bot",
      [](const std::string& track, int laps, int max_steps) {
        const harness::World w = harness::make_world(track, harness::ReferenceMode::mot, "", sim::EnvConfig{});
        return episode_dict(harness::evaluate_bot(w, laps, {}, max_steps));
      },
      py::arg("track") = "oval", py::arg("laps") = 2, py::arg("max_steps") = 2000);

  m.def(
      "evaluate_checkpoint",
      [](const std::string& checkpoint, const std::string& track, const std::string& reference, int laps,
         int max_steps) {
        const harness::World w =
            harness::make_world(track, harness::reference_mode_from_string(reference), "", sim::EnvConfig{});
        return episode_dict(harness::evaluate_checkpoint(checkpoint, w, laps, 1, max_steps).front());
      },
      py::arg("checkpoint"), py::arg("track") = "oval", py::arg("reference") = "mot", py::arg("laps") = 1,
      py::arg("max_steps") = 2000);

  m.def(
      "train",
      [](const std::string& config_json, std::uint64_t seed, const std::filesystem::path& run_dir) {
        const harness::ExperimentConfig cfg =
            harness::experiment_config_from_json(nlohmann::json::parse(config_json));
        harness::TrainResult r;
        {
          py::gil_scoped_release release;
          r = harness::train(cfg, seed, run_dir);
        }
        py::dict d;
        d["run_dir"] = r.run_dir;
        d["episodes"] = r.metrics.size();
        d["returns"] = [&] {
          std::vector<double> v;
          for (const auto& row : r.metrics) v.push_back(row.total_return);
          return v;
        }();
        d["best_lap"] = r.best_lap;
        d["failed"] = r.failed;
        return d;
      },
      py::arg("config_json"), py::arg("seed"), py::arg("run_dir"));
}
