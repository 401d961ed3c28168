#pragma once

#include <optional>
#include <string>
#include <vector>

#include "ndde/reference.hpp"
#include "ndde/trainer.hpp"

namespace ndde {

/// One experiment as described by a JSON config file plus CLI overrides.
struct RunConfig {
  std::string problem = "linear_decay";  // registry name or path to a problem JSON
  RegistryOptions problem_options;
  TrainConfig train;
  std::vector<double> obs_times;
  std::string obs_source = "series";  // "series" | "reference"
  int eval_grid = 1001;
  StepperConfig stepper;
  std::string out_dir = ".";
  std::string checkpoint;      // compare: trained parameters
  std::string pred_csv;        // compare: trajectory file instead of a checkpoint
  std::string reference_csv;   // compare: precomputed reference trajectory
};

RunConfig load_run_config_text(const std::string& text);
RunConfig load_run_config_file(const std::string& path);

struct MetricsRow {
  std::string name;
  double true_value = 0.0;
  double predicted = 0.0;
  double rel_error = 0.0;
};

struct MetricsTable {
  std::vector<MetricsRow> params;      // recovered parameters (inverse mode)
  std::vector<double> l2_errors;       // per-component relative L2 errors
  std::vector<std::string> l2_labels;  // "y1", "y2", ...
};

/// Loads the problem named by the config (registry or JSON file).
DdeProblemSpec resolve_problem(const RunConfig& cfg);

/// Observations for the inverse problems, generated from the configured
/// oracle at the true parameter values.
ObservationSet make_observations(const DdeProblemSpec& spec, const std::vector<double>& times,
                                 const std::string& source, const StepperConfig& stepper);

/// Trains in forward mode and reports relative L2 errors against the series
/// oracle (linear_decay) or the reference solver. Writes trajectory.csv,
/// loss_history.csv, params_history.csv, metrics.json, checkpoint.json.
MetricsTable run_forward(const RunConfig& cfg);

/// Generates observations, trains in inverse mode and reports the recovered
/// parameters with relative errors. Same output files as run_forward.
MetricsTable run_inverse(const RunConfig& cfg);

/// Samples the reference solution on the evaluation grid.
MetricsTable run_reference(const RunConfig& cfg);

/// Relative L2 error between a trained checkpoint (or trajectory CSV) and
/// the reference solution on the shared grid.
MetricsTable run_compare(const RunConfig& cfg);

/// Renders the table exactly as metrics.json serializes the numbers.
std::string format_metrics(const MetricsTable& table);

}  // namespace ndde
