#include "ndde/experiments.hpp"

#include <cmath>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "ndde/batched.hpp"
#include "json.hpp"

namespace ndde {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string fmt(double v) { return json(v).dump(); }

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path);
  out << text;
}

std::string csv_number(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_trajectory_csv(const std::string& path, std::span<const double> ts,
                          const Eigen::MatrixXd& y) {
  std::ostringstream out;
  out << "t";
  for (int j = 1; j <= y.rows(); ++j) out << ",y" << j;
  out << "\n";
  for (std::size_t i = 0; i < ts.size(); ++i) {
    out << csv_number(ts[i]);
    for (int j = 0; j < y.rows(); ++j) out << "," << csv_number(y(j, static_cast<Eigen::Index>(i)));
    out << "\n";
  }
  write_text(path, out.str());
}

void write_loss_history_csv(const std::string& path, const TrainTrace& trace, int n, bool has_data) {
  std::ostringstream out;
  out << "iteration";
  for (int j = 1; j <= n; ++j) out << ",loss_f" << j;
  for (int j = 1; j <= n; ++j) out << ",loss_i" << j;
  if (has_data)
    for (int j = 1; j <= n; ++j) out << ",loss_g" << j;
  for (int j = 1; j <= n; ++j) out << ",w_f" << j;
  for (int j = 1; j <= n; ++j) out << ",w_i" << j;
  if (has_data)
    for (int j = 1; j <= n; ++j) out << ",w_g" << j;
  out << ",total\n";
  for (const auto& e : trace.entries) {
    out << e.iteration;
    auto row = [&](const std::vector<double>& v) {
      for (double x : v) out << "," << csv_number(x);
    };
    row(e.report.loss_f);
    row(e.report.loss_i);
    if (has_data) row(e.report.loss_g);
    row(e.report.w_f);
    row(e.report.w_i);
    if (has_data) row(e.report.w_g);
    out << "," << csv_number(e.report.total) << "\n";
  }
  write_text(path, out.str());
}

void write_params_history_csv(const std::string& path, const TrainTrace& trace) {
  std::ostringstream out;
  out << "iteration";
  for (const auto& name : trace.tracked_names) out << "," << name;
  out << "\n";
  for (const auto& e : trace.entries) {
    out << e.iteration;
    for (double v : e.tracked) out << "," << csv_number(v);
    out << "\n";
  }
  write_text(path, out.str());
}

json metrics_json(const MetricsTable& table, const RunConfig& cfg, const std::string& mode) {
  json doc;
  doc["meta"] = {{"mode", mode},
                 {"problem", cfg.problem},
                 {"seed", cfg.train.seed},
                 {"timestamp", static_cast<long>(std::time(nullptr))}};
  if (!table.l2_errors.empty()) {
    json l2 = json::object();
    for (std::size_t i = 0; i < table.l2_errors.size(); ++i)
      l2[table.l2_labels[i]] = table.l2_errors[i];
    doc["l2_relative_error"] = std::move(l2);
  }
  if (!table.params.empty()) {
    json rows = json::array();
    for (const auto& r : table.params) {
      rows.push_back({{"name", r.name},
                      {"true_value", r.true_value},
                      {"predicted", r.predicted},
                      {"relative_error", r.rel_error}});
    }
    doc["parameters"] = std::move(rows);
  }
  return doc;
}

void emit_run_outputs(const RunConfig& cfg, const std::string& mode, const MetricsTable& table,
                      const TrainResult* result, std::span<const double> grid,
                      const Eigen::MatrixXd* traj, int n) {
  fs::create_directories(cfg.out_dir);
  const std::string base = cfg.out_dir + "/";
  if (traj) write_trajectory_csv(base + "trajectory.csv", grid, *traj);
  if (result) {
    write_loss_history_csv(base + "loss_history.csv", result->trace, n,
                           !result->trace.entries.empty() &&
                               result->trace.entries.front().report.has_data());
    write_params_history_csv(base + "params_history.csv", result->trace);
    result->params.save_checkpoint(base + "checkpoint.json");
  }
  write_text(base + "metrics.json", metrics_json(table, cfg, mode).dump(2) + "\n");
}

std::vector<std::string> component_labels(int n) {
  std::vector<std::string> labels;
  for (int j = 1; j <= n; ++j) labels.push_back("y" + std::to_string(j));
  return labels;
}

/// Reference trajectory for error reporting: the series oracle for the
/// scalar linear-decay problem, the RK23 solver otherwise.
Eigen::MatrixXd exact_trajectory(const DdeProblemSpec& spec, std::span<const double> grid,
                                 const StepperConfig& stepper) {
  if (spec.name == "linear_decay") {
    const double tau = spec.delays.at(0).value;
    Eigen::MatrixXd out(1, static_cast<Eigen::Index>(grid.size()));
    for (std::size_t i = 0; i < grid.size(); ++i)
      out(0, static_cast<Eigen::Index>(i)) = series_solution(tau, grid[i]);
    return out;
  }
  DenseSolution sol = solve_dde(spec, stepper);
  return sol.eval_grid(grid);
}

std::vector<double> matrix_row(const Eigen::MatrixXd& m, int row) {
  std::vector<double> v(static_cast<std::size_t>(m.cols()));
  for (Eigen::Index i = 0; i < m.cols(); ++i) v[static_cast<std::size_t>(i)] = m(row, i);
  return v;
}

struct Trajectory {
  std::vector<double> t;
  Eigen::MatrixXd y;
};

Trajectory read_trajectory_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open trajectory: " + path);
  std::string line;
  if (!std::getline(in, line)) throw ConfigError("empty trajectory: " + path);
  int cols = 1;
  for (char c : line) cols += c == ',';
  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) row.push_back(std::stod(cell));
    if (static_cast<int>(row.size()) != cols) throw ConfigError("ragged trajectory: " + path);
    rows.push_back(std::move(row));
  }
  Trajectory tr;
  tr.t.reserve(rows.size());
  tr.y.resize(cols - 1, static_cast<Eigen::Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    tr.t.push_back(rows[i][0]);
    for (int j = 1; j < cols; ++j)
      tr.y(j - 1, static_cast<Eigen::Index>(i)) = rows[i][static_cast<std::size_t>(j)];
  }
  return tr;
}

}  // namespace

RunConfig load_run_config_text(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad config JSON: ") + e.what());
  }
  RunConfig cfg;
  try {
    cfg.problem = doc.value("problem", cfg.problem);
    if (doc.contains("problem_options")) {
      const auto& po = doc.at("problem_options");
      if (po.contains("tau")) cfg.problem_options.tau = po.at("tau").get<double>();
      if (po.contains("delays"))
        cfg.problem_options.delays = po.at("delays").get<std::vector<double>>();
    }
    cfg.train.iterations = doc.value("iterations", cfg.train.iterations);
    cfg.train.adam.learning_rate = doc.value("learning_rate", cfg.train.adam.learning_rate);
    if (doc.contains("adam")) {
      const auto& a = doc.at("adam");
      cfg.train.adam.beta1 = a.value("beta1", cfg.train.adam.beta1);
      cfg.train.adam.beta2 = a.value("beta2", cfg.train.adam.beta2);
      cfg.train.adam.epsilon = a.value("epsilon", cfg.train.adam.epsilon);
    }
    cfg.train.seed = doc.value("seed", cfg.train.seed);
    cfg.train.log_every = doc.value("log_every", cfg.train.log_every);
    cfg.train.n_collocation = doc.value("n_collocation", cfg.train.n_collocation);
    if (doc.contains("hidden")) cfg.train.arch.hidden = doc.at("hidden").get<std::vector<int>>();
    if (doc.contains("engine")) {
      const std::string engine = doc.at("engine").get<std::string>();
      if (engine == "batched") cfg.train.engine = LossEngine::batched;
      else if (engine == "tape") cfg.train.engine = LossEngine::tape;
      else throw ConfigError("unknown engine: " + engine);
    }
    if (doc.contains("observations")) {
      const auto& o = doc.at("observations");
      cfg.obs_times = o.at("times").get<std::vector<double>>();
      cfg.obs_source = o.value("source", cfg.obs_source);
    }
    cfg.eval_grid = doc.value("eval_grid", cfg.eval_grid);
    if (doc.contains("stepper")) {
      const auto& s = doc.at("stepper");
      cfg.stepper.rtol = s.value("rtol", cfg.stepper.rtol);
      cfg.stepper.atol = s.value("atol", cfg.stepper.atol);
      cfg.stepper.initial_step = s.value("initial_step", cfg.stepper.initial_step);
      cfg.stepper.max_step = s.value("max_step", cfg.stepper.max_step);
      cfg.stepper.discontinuity_depth =
          s.value("discontinuity_depth", cfg.stepper.discontinuity_depth);
      if (s.contains("fixed_step")) cfg.stepper.fixed_step = s.at("fixed_step").get<double>();
    }
    cfg.out_dir = doc.value("out", cfg.out_dir);
    cfg.checkpoint = doc.value("checkpoint", cfg.checkpoint);
    cfg.pred_csv = doc.value("pred_csv", cfg.pred_csv);
    cfg.reference_csv = doc.value("reference_csv", cfg.reference_csv);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad config value: ") + e.what());
  }
  return cfg;
}

RunConfig load_run_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return load_run_config_text(ss.str());
}

DdeProblemSpec resolve_problem(const RunConfig& cfg) {
  if (cfg.problem.size() > 5 && cfg.problem.substr(cfg.problem.size() - 5) == ".json")
    return load_problem_json_file(cfg.problem);
  return registry_get(cfg.problem, cfg.problem_options);
}

ObservationSet make_observations(const DdeProblemSpec& spec, const std::vector<double>& times,
                                 const std::string& source, const StepperConfig& stepper) {
  if (times.empty()) throw ConfigError("inverse mode requires observation times");
  ObservationSet obs;
  obs.t = times;
  obs.values.resize(static_cast<std::size_t>(spec.n));
  if (source == "series") {
    if (spec.n != 1 || spec.delays.size() != 1)
      throw ConfigError("series observations only fit single-delay scalar problems");
    const double tau = spec.delays[0].value;
    for (double t : times) obs.values[0].push_back(series_solution(tau, t));
  } else if (source == "reference") {
    DenseSolution sol = solve_dde(spec, stepper);
    for (int j = 1; j <= spec.n; ++j)
      for (double t : times) obs.values[static_cast<std::size_t>(j - 1)].push_back(sol.eval(j, t));
  } else {
    throw ConfigError("unknown observation source: " + source);
  }
  return obs;
}

MetricsTable run_forward(const RunConfig& cfg) {
  DdeProblemSpec spec = resolve_problem(cfg);
  TrainConfig tc = cfg.train;
  tc.mode = RunMode::forward;
  TrainResult result = train(spec, tc);
  if (result.aborted) throw NonFiniteGradient(result.abort_reason);

  const std::vector<double> grid = uniform_grid(spec.horizon, cfg.eval_grid);
  const Eigen::MatrixXd pred = batched_eval_grid(result.params, grid);
  const Eigen::MatrixXd exact = exact_trajectory(spec, grid, cfg.stepper);

  MetricsTable table;
  table.l2_labels = component_labels(spec.n);
  for (int j = 0; j < spec.n; ++j) {
    const auto p = matrix_row(pred, j);
    const auto e = matrix_row(exact, j);
    table.l2_errors.push_back(relative_l2_error(p, e));
  }
  emit_run_outputs(cfg, "forward", table, &result, grid, &pred, spec.n);
  return table;
}

MetricsTable run_inverse(const RunConfig& cfg) {
  DdeProblemSpec spec = resolve_problem(cfg);
  ObservationSet obs = make_observations(spec, cfg.obs_times, cfg.obs_source, cfg.stepper);
  TrainConfig tc = cfg.train;
  tc.mode = RunMode::inverse;
  TrainResult result = train(spec, tc, &obs);
  if (result.aborted) throw NonFiniteGradient(result.abort_reason);

  MetricsTable table;
  for (int d = 0; d < result.params.n_delays(); ++d) {
    const auto& dp = spec.delays[static_cast<std::size_t>(d)];
    if (!dp.trainable) continue;
    MetricsRow row;
    row.name = dp.name;
    row.true_value = dp.value;
    row.predicted = result.params.delay(d);
    row.rel_error = dp.value != 0.0 ? std::abs(row.predicted - dp.value) / std::abs(dp.value)
                                    : std::abs(row.predicted);
    table.params.push_back(row);
  }
  for (int p = 0; p < result.params.n_system(); ++p) {
    const auto& sp = spec.system_params[static_cast<std::size_t>(p)];
    if (!sp.trainable) continue;
    MetricsRow row;
    row.name = sp.name;
    row.true_value = sp.value;
    row.predicted = result.params.system_param(p);
    row.rel_error = sp.value != 0.0 ? std::abs(row.predicted - sp.value) / std::abs(sp.value)
                                    : std::abs(row.predicted);
    table.params.push_back(row);
  }

  const std::vector<double> grid = uniform_grid(spec.horizon, cfg.eval_grid);
  const Eigen::MatrixXd pred = batched_eval_grid(result.params, grid);
  emit_run_outputs(cfg, "inverse", table, &result, grid, &pred, spec.n);
  return table;
}

MetricsTable run_reference(const RunConfig& cfg) {
  DdeProblemSpec spec = resolve_problem(cfg);
  const std::vector<double> grid = uniform_grid(spec.horizon, cfg.eval_grid);
  DenseSolution sol = solve_dde(spec, cfg.stepper);
  const Eigen::MatrixXd traj = sol.eval_grid(grid);
  MetricsTable table;
  emit_run_outputs(cfg, "reference", table, nullptr, grid, &traj, spec.n);
  return table;
}

MetricsTable run_compare(const RunConfig& cfg) {
  DdeProblemSpec spec = resolve_problem(cfg);
  const std::vector<double> grid = uniform_grid(spec.horizon, cfg.eval_grid);

  Eigen::MatrixXd pred;
  if (!cfg.pred_csv.empty()) {
    Trajectory tr = read_trajectory_csv(cfg.pred_csv);
    if (tr.t.size() != grid.size()) throw GridMismatch("prediction grid size differs");
    for (std::size_t i = 0; i < grid.size(); ++i)
      if (std::abs(tr.t[i] - grid[i]) > 1e-12) throw GridMismatch("prediction grid points differ");
    pred = tr.y;
  } else if (!cfg.checkpoint.empty()) {
    ParameterStore store = ParameterStore::load_checkpoint(cfg.checkpoint);
    pred = batched_eval_grid(store, grid);
  } else {
    throw ConfigError("compare needs a checkpoint or pred_csv");
  }

  Eigen::MatrixXd exact;
  if (!cfg.reference_csv.empty()) {
    Trajectory tr = read_trajectory_csv(cfg.reference_csv);
    if (tr.t.size() != grid.size()) throw GridMismatch("reference grid size differs");
    for (std::size_t i = 0; i < grid.size(); ++i)
      if (std::abs(tr.t[i] - grid[i]) > 1e-12) throw GridMismatch("reference grid points differ");
    exact = tr.y;
  } else {
    exact = exact_trajectory(spec, grid, cfg.stepper);
  }
  if (pred.rows() != exact.rows()) throw GridMismatch("component counts differ");

  MetricsTable table;
  table.l2_labels = component_labels(static_cast<int>(pred.rows()));
  for (int j = 0; j < pred.rows(); ++j)
    table.l2_errors.push_back(relative_l2_error(matrix_row(pred, j), matrix_row(exact, j)));
  emit_run_outputs(cfg, "compare", table, nullptr, grid, &pred, static_cast<int>(pred.rows()));
  return table;
}

std::string format_metrics(const MetricsTable& table) {
  std::ostringstream out;
  if (!table.params.empty()) {
    out << "parameter  true  predicted  relative_error\n";
    for (const auto& r : table.params) {
      out << r.name << "  " << fmt(r.true_value) << "  " << fmt(r.predicted) << "  "
          << fmt(r.rel_error) << "\n";
    }
  }
  if (!table.l2_errors.empty()) {
    out << "component  relative_l2_error\n";
    for (std::size_t i = 0; i < table.l2_errors.size(); ++i)
      out << table.l2_labels[i] << "  " << fmt(table.l2_errors[i]) << "\n";
  }
  return out.str();
}

}  // namespace ndde
