#include "echoplan/closedloop.hpp"
#include "echoplan/trainer.hpp"

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

namespace py = pybind11;
using namespace echoplan;

namespace {

world::SemanticRaster raster_from_array(py::array_t<float, py::array::c_style | py::array::forcecast> arr) {
  if (arr.ndim() != 3 || arr.shape(2) != world::GridSpec::k_sem)
    throw std::invalid_argument("raster must have shape (h, w, " + std::to_string(world::GridSpec::k_sem) + ")");
  world::SemanticRaster raster(static_cast<int>(arr.shape(0)), static_cast<int>(arr.shape(1)));
  std::copy(arr.data(), arr.data() + arr.size(), raster.values.begin());
  return raster;
}

py::array_t<float> raster_to_array(const world::SemanticRaster& raster) {
  py::array_t<float> out({raster.h, raster.w, static_cast<int>(world::GridSpec::k_sem)});
  std::copy(raster.values.begin(), raster.values.end(), out.mutable_data());
  return out;
}

py::array_t<double> matrix_to_array(const Eigen::MatrixXd& m) {
  py::array_t<double> out({static_cast<py::ssize_t>(m.rows()), static_cast<py::ssize_t>(m.cols())});
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) out.mutable_at(r, c) = m(r, c);
  return out;
}

}  // namespace

PYBIND11_MODULE(_echoplan, mod) {
  mod.doc() = "echo-cycle BEV planner core";

  py::enum_<world::Command>(mod, "Command")
      .value("LEFT", world::Command::kLeft)
      .value("STRAIGHT", world::Command::kStraight)
      .value("RIGHT", world::Command::kRight);

  py::enum_<world::Scenario>(mod, "Scenario")
      .value("STRAIGHT", world::Scenario::kStraight)
      .value("LEFT_TURN", world::Scenario::kLeftTurn)
      .value("RIGHT_TURN", world::Scenario::kRightTurn)
      .value("INTERSECTION_MIXED", world::Scenario::kIntersectionMixed);

  mod.def("reverse_command", &world::reverse_command);

  py::class_<world::EgoState>(mod, "EgoState")
      .def(py::init<>())
      .def_readwrite("x", &world::EgoState::x)
      .def_readwrite("y", &world::EgoState::y)
      .def_readwrite("heading", &world::EgoState::heading)
      .def_readwrite("speed", &world::EgoState::speed);

  py::class_<world::Frame>(mod, "Frame")
      .def_property_readonly("raster", [](const world::Frame& f) { return raster_to_array(f.raster); })
      .def_readonly("ego", &world::Frame::ego)
      .def_readonly("command", &world::Frame::command)
      .def_property_readonly("gt_future", [](const world::Frame& f) {
        Eigen::MatrixXd m(world::kNumWaypoints, 2);
        for (int i = 0; i < world::kNumWaypoints; ++i) {
          m(i, 0) = f.gt_future[2 * i];
          m(i, 1) = f.gt_future[2 * i + 1];
        }
        return matrix_to_array(m);
      });

  py::class_<world::Episode>(mod, "Episode")
      .def_readonly("scenario_id", &world::Episode::scenario_id)
      .def_readonly("seed", &world::Episode::seed)
      .def_readonly("scenario", &world::Episode::scenario)
      .def_readonly("frames", &world::Episode::frames);

  mod.def("generate_episode",
          [](std::uint64_t seed, world::Scenario scenario) {
            return world::generate_episode(seed, scenario, world::GridSpec{});
          },
          py::arg("seed"), py::arg("scenario"));
  mod.def("save_dataset", &world::save_dataset, py::arg("episodes"), py::arg("path"));
  mod.def("load_dataset", &world::load_dataset, py::arg("path"));
  mod.def("dataset_hash", &world::dataset_hash, py::arg("path"));

  py::class_<trainer::TrainConfig>(mod, "TrainConfig")
      .def(py::init<>())
      .def_static("from_json", &trainer::TrainConfig::from_json)
      .def("to_json", &trainer::TrainConfig::to_json)
      .def_readwrite("epochs", &trainer::TrainConfig::epochs)
      .def_readwrite("learning_rate", &trainer::TrainConfig::learning_rate)
      .def_readwrite("batch_size", &trainer::TrainConfig::batch_size)
      .def_readwrite("lambda_futbev", &trainer::TrainConfig::lambda_futbev)
      .def_readwrite("lambda_curbev", &trainer::TrainConfig::lambda_curbev)
      .def_readwrite("n_s", &trainer::TrainConfig::n_s)
      .def_readwrite("k", &trainer::TrainConfig::k)
      .def_readwrite("seed", &trainer::TrainConfig::seed)
      .def_readwrite("dataset", &trainer::TrainConfig::dataset);

  py::class_<trainer::Checkpoint>(mod, "Checkpoint")
      .def_static("load", &trainer::Checkpoint::load)
      .def("save", &trainer::Checkpoint::save)
      .def_readonly("step", &trainer::Checkpoint::step)
      .def_property_readonly("config", [](const trainer::Checkpoint& c) { return c.config; })
      .def("infer",
           [](const trainer::Checkpoint& ckpt,
              py::array_t<float, py::array::c_style | py::array::forcecast> raster, world::Command command) {
             model::Model m = ckpt.make_model();
             return matrix_to_array(cfc::infer(m, raster_from_array(std::move(raster)), command));
           },
           py::arg("raster"), py::arg("command"));

  mod.def("train",
          [](const trainer::TrainConfig& config) {
            std::vector<world::Episode> dataset = world::load_dataset(config.dataset);
            trainer::Trainer t(config, &dataset);
            t.run_all_epochs();
            return t.checkpoint();
          },
          py::arg("config"), py::call_guard<py::gil_scoped_release>());

  mod.def("evaluate_open_loop",
          [](const trainer::Checkpoint& ckpt, const std::string& data) {
            model::Model m = ckpt.make_model();
            std::vector<world::Episode> episodes = world::load_dataset(data);
            return trainer::evaluate_open_loop(m, episodes,
                                               {ckpt.config.lambda_futbev, ckpt.config.lambda_curbev})
                .to_json();
          },
          py::arg("checkpoint"), py::arg("data"));

  mod.def("evaluate_closed_loop",
          [](const trainer::Checkpoint& ckpt, std::uint64_t suite_seed) {
            model::Model m = ckpt.make_model();
            closedloop::RolloutConfig config;
            config.grid = ckpt.config.grid;
            config.suite = closedloop::default_suite(suite_seed);
            auto planner = [&m](const world::SemanticRaster& raster, world::Command cmd,
                                const world::EgoState&) {
              return metrics::Trajectory(cfc::infer(m, raster, cmd));
            };
            return closedloop::rollout(planner, config).to_json();
          },
          py::arg("checkpoint"), py::arg("suite_seed"));
}
