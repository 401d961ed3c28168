#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "ndde/batched.hpp"
#include "ndde/experiments.hpp"
#include "ndde/reference.hpp"
#include "ndde/trainer.hpp"

namespace py = pybind11;
using namespace ndde;

namespace {

py::array_t<double> matrix_to_numpy(const Eigen::MatrixXd& m) {
  py::array_t<double> out({static_cast<py::ssize_t>(m.rows()), static_cast<py::ssize_t>(m.cols())});
  auto buf = out.mutable_unchecked<2>();
  for (py::ssize_t i = 0; i < buf.shape(0); ++i)
    for (py::ssize_t j = 0; j < buf.shape(1); ++j) buf(i, j) = m(i, j);
  return out;
}

TrainConfig make_train_config(long iterations, std::uint64_t seed, std::vector<int> hidden,
                              int n_collocation, double learning_rate, long log_every,
                              const std::string& engine) {
  TrainConfig tc;
  tc.iterations = iterations;
  tc.seed = seed;
  tc.arch.hidden = std::move(hidden);
  tc.n_collocation = n_collocation;
  tc.adam.learning_rate = learning_rate;
  tc.log_every = log_every;
  if (engine == "batched") tc.engine = LossEngine::batched;
  else if (engine == "tape") tc.engine = LossEngine::tape;
  else throw ConfigError("unknown engine: " + engine);
  return tc;
}

struct PyTrainResult {
  DdeProblemSpec spec;
  TrainResult result;

  py::dict recovered() const {
    py::dict d;
    for (const auto& [name, value] : result.params.named_trainables()) d[name.c_str()] = value;
    return d;
  }

  py::array_t<double> eval_grid(const std::vector<double>& ts) const {
    return matrix_to_numpy(batched_eval_grid(result.params, ts));
  }

  py::dict final_losses() const {
    py::dict d;
    const auto& rep = result.trace.entries.back().report;
    d["loss_f"] = rep.loss_f;
    d["loss_i"] = rep.loss_i;
    if (rep.has_data()) d["loss_g"] = rep.loss_g;
    d["total"] = rep.total;
    return d;
  }

  py::list loss_history() const {
    py::list rows;
    for (const auto& e : result.trace.entries) {
      py::dict d;
      d["iteration"] = e.iteration;
      d["total"] = e.report.total;
      py::dict tracked;
      for (std::size_t i = 0; i < result.trace.tracked_names.size(); ++i)
        tracked[result.trace.tracked_names[i].c_str()] = e.tracked[i];
      d["tracked"] = tracked;
      rows.append(d);
    }
    return rows;
  }

  void save_checkpoint(const std::string& path) const { result.params.save_checkpoint(path); }
};

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Neural solvers for forward and inverse delay differential equation problems";

  py::register_exception<NddeError>(m, "NddeError");

  py::class_<DdeProblemSpec>(m, "Problem")
      .def_readonly("name", &DdeProblemSpec::name)
      .def_readonly("n", &DdeProblemSpec::n)
      .def_readonly("horizon", &DdeProblemSpec::horizon)
      .def_property_readonly("delays",
                             [](const DdeProblemSpec& p) {
                               py::dict d;
                               for (const auto& dp : p.delays) d[dp.name.c_str()] = dp.value;
                               return d;
                             })
      .def_property_readonly("system_params",
                             [](const DdeProblemSpec& p) {
                               py::dict d;
                               for (const auto& sp : p.system_params) d[sp.name.c_str()] = sp.value;
                               return d;
                             })
      .def("__repr__", [](const DdeProblemSpec& p) {
        return "<Problem " + p.name + " n=" + std::to_string(p.n) + ">";
      });

  m.def("registry_names", &registry_names);
  m.def(
      "get_problem",
      [](const std::string& name, py::object tau, py::object delays) {
        RegistryOptions opt;
        if (!tau.is_none()) opt.tau = tau.cast<double>();
        if (!delays.is_none()) opt.delays = delays.cast<std::vector<double>>();
        return registry_get(name, opt);
      },
      py::arg("name"), py::arg("tau") = py::none(), py::arg("delays") = py::none());
  m.def("load_problem_json", &load_problem_json_file, py::arg("path"));

  py::class_<DenseSolution>(m, "ReferenceSolution")
      .def_property_readonly("mesh", [](const DenseSolution& s) { return s.mesh(); })
      .def("eval", [](const DenseSolution& s, int component, double t) { return s.eval(component, t); },
           py::arg("component"), py::arg("t"))
      .def("eval_grid",
           [](const DenseSolution& s, const std::vector<double>& ts) {
             return matrix_to_numpy(s.eval_grid(ts));
           },
           py::arg("ts"));

  m.def(
      "solve_dde",
      [](const DdeProblemSpec& spec, double rtol, double atol, int discontinuity_depth) {
        StepperConfig cfg;
        cfg.rtol = rtol;
        cfg.atol = atol;
        cfg.discontinuity_depth = discontinuity_depth;
        return solve_dde(spec, cfg);
      },
      py::arg("problem"), py::arg("rtol") = 1e-6, py::arg("atol") = 1e-8,
      py::arg("discontinuity_depth") = 3);

  m.def("series_solution", py::vectorize([](double tau, double t) { return series_solution(tau, t); }),
        py::arg("tau"), py::arg("t"));

  m.def(
      "relative_l2_error",
      [](const std::vector<double>& pred, const std::vector<double>& exact) {
        return relative_l2_error(pred, exact);
      },
      py::arg("pred"), py::arg("exact"));

  m.def("uniform_grid", &uniform_grid, py::arg("horizon"), py::arg("points"));

  py::class_<PyTrainResult>(m, "TrainResult")
      .def_property_readonly("recovered", &PyTrainResult::recovered)
      .def_property_readonly("aborted", [](const PyTrainResult& r) { return r.result.aborted; })
      .def("eval_grid", &PyTrainResult::eval_grid, py::arg("ts"))
      .def("final_losses", &PyTrainResult::final_losses)
      .def("loss_history", &PyTrainResult::loss_history)
      .def("save_checkpoint", &PyTrainResult::save_checkpoint, py::arg("path"));

  m.def(
      "train_forward",
      [](const DdeProblemSpec& spec, long iterations, std::uint64_t seed, std::vector<int> hidden,
         int n_collocation, double learning_rate, long log_every, const std::string& engine) {
        TrainConfig tc = make_train_config(iterations, seed, std::move(hidden), n_collocation,
                                           learning_rate, log_every, engine);
        tc.mode = RunMode::forward;
        return PyTrainResult{spec, train(spec, tc)};
      },
      py::arg("problem"), py::arg("iterations") = 80000, py::arg("seed") = 0,
      py::arg("hidden") = std::vector<int>{20, 40, 20}, py::arg("n_collocation") = 5000,
      py::arg("learning_rate") = 1e-3, py::arg("log_every") = 100, py::arg("engine") = "batched");

  m.def(
      "train_inverse",
      [](const DdeProblemSpec& spec, const std::vector<double>& obs_times,
         const std::string& obs_source, long iterations, std::uint64_t seed,
         std::vector<int> hidden, int n_collocation, double learning_rate, long log_every,
         const std::string& engine) {
        TrainConfig tc = make_train_config(iterations, seed, std::move(hidden), n_collocation,
                                           learning_rate, log_every, engine);
        tc.mode = RunMode::inverse;
        StepperConfig stepper;
        ObservationSet obs = make_observations(spec, obs_times, obs_source, stepper);
        return PyTrainResult{spec, train(spec, tc, &obs)};
      },
      py::arg("problem"), py::arg("obs_times"), py::arg("obs_source") = "reference",
      py::arg("iterations") = 80000, py::arg("seed") = 0,
      py::arg("hidden") = std::vector<int>{20, 40, 20}, py::arg("n_collocation") = 5000,
      py::arg("learning_rate") = 1e-3, py::arg("log_every") = 100, py::arg("engine") = "batched");

  m.def(
      "eval_checkpoint",
      [](const std::string& path, const std::vector<double>& ts) {
        ParameterStore store = ParameterStore::load_checkpoint(path);
        return matrix_to_numpy(batched_eval_grid(store, ts));
      },
      py::arg("path"), py::arg("ts"));
}
