#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "dmad/eval/attribution.hpp"
#include "dmad/eval/pipeline.hpp"
#include "dmad/model/layers.hpp"
#include "dmad/sim/serialize.hpp"
#include "dmad/train/hungarian.hpp"

namespace py = pybind11;
using namespace dmad;

namespace {

// JSON crosses the boundary as text; the Python side parses it.
sim::WorldConfig world_from(const std::string& text) {
  return text.empty() ? sim::WorldConfig{} : sim::world_config_from_json(nlohmann::json::parse(text));
}

py::tuple hungarian(py::array_t<double, py::array::c_style | py::array::forcecast> cost) {
  if (cost.ndim() != 2) throw std::invalid_argument("cost must be a 2-D array");
  const auto rows = static_cast<std::size_t>(cost.shape(0)), cols = static_cast<std::size_t>(cost.shape(1));
  std::vector<double> c(cost.data(), cost.data() + rows * cols);
  const auto a = train::hungarian(c, rows, cols);
  return py::make_tuple(a.pairs, a.cost);
}

py::array_t<double> velocity(py::array_t<double, py::array::c_style | py::array::forcecast> waypoints,
                             std::size_t past_steps, double dt) {
  if (waypoints.ndim() != 2) throw std::invalid_argument("waypoints must be a 2-D array");
  const auto rows = static_cast<std::size_t>(waypoints.shape(0)), cols = static_cast<std::size_t>(waypoints.shape(1));
  ad::Tape tape;
  const auto v = model::velocity_from_trajectory(
      tape.constant({rows, cols}, {waypoints.data(), waypoints.data() + rows * cols}), past_steps, dt);
  py::array_t<double> out({rows, std::size_t{2}});
  std::copy(v.value().begin(), v.value().end(), out.mutable_data());
  return out;
}

std::string evaluate_run(const std::filesystem::path& run_dir, const std::filesystem::path& data_dir, int stage) {
  const auto run = eval::open_run(run_dir);
  const auto data = train::load_dataset(data_dir);
  return eval::metric_csv(eval::evaluate_model(*run.model(stage), data, stage == 2, run.manifest_hash(stage)));
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Native core of the dmad driving stack";
  py::register_exception<sim::MapError>(m, "MapError", PyExc_RuntimeError);

  m.def(
      "episode_json", [](std::uint64_t seed, const std::string& world) {
        return sim::to_json(sim::gen_episode(seed, world_from(world))).dump();
      },
      py::arg("seed"), py::arg("world") = "");
  m.def(
      "write_dataset", [](const std::string& world, std::uint64_t first, std::uint64_t last,
                          const std::filesystem::path& out) { sim::write_dataset(world_from(world), first, last, out); },
      py::arg("world"), py::arg("first"), py::arg("last"), py::arg("out"));
  m.def("hungarian", &hungarian, py::arg("cost"));
  m.def("velocity_from_trajectory", &velocity, py::arg("waypoints"), py::arg("past_steps"), py::arg("dt"));
  m.def("gini", &eval::gini, py::arg("values"));
  m.def(
      "train", [](const std::string& config, const std::filesystem::path& data_dir, const std::filesystem::path& out) {
        const auto cfg = train::train_config_from_json(nlohmann::json::parse(config));
        const auto data = train::load_dataset(data_dir);
        py::gil_scoped_release release;
        train::train_two_stage(cfg, data, out);
      },
      py::arg("config"), py::arg("data_dir"), py::arg("out"));
  m.def("evaluate_run", &evaluate_run, py::arg("run_dir"), py::arg("data_dir"), py::arg("stage") = 2);
}
