#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "ndde/experiments.hpp"

using namespace ndde;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  REQUIRE(in.good());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// metrics.json minus its timestamp line (the one field allowed to differ).
std::string strip_timestamp(std::string text) {
  std::string out;
  std::stringstream ss(text);
  std::string line;
  while (std::getline(ss, line)) {
    if (line.find("\"timestamp\"") != std::string::npos) continue;
    out += line + "\n";
  }
  return out;
}

fs::path fresh_dir(const std::string& name) {
  fs::path dir = fs::temp_directory_path() / ("ndde_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

}  // namespace

TEST_SUITE("experiments") {

TEST_CASE("run config parsing and overrides") {
  RunConfig cfg = load_run_config_text(R"JSON({
    "problem": "linear_decay",
    "problem_options": {"tau": 1.5},
    "iterations": 123,
    "learning_rate": 0.002,
    "seed": 9,
    "n_collocation": 77,
    "hidden": [5, 6],
    "observations": {"times": [2, 4], "source": "series"},
    "eval_grid": 101,
    "out": "somewhere"
  })JSON");
  CHECK(cfg.problem == "linear_decay");
  CHECK(cfg.problem_options.tau == 1.5);
  CHECK(cfg.train.iterations == 123);
  CHECK(cfg.train.adam.learning_rate == 0.002);
  CHECK(cfg.train.seed == 9);
  CHECK(cfg.train.n_collocation == 77);
  CHECK(cfg.train.arch.hidden == std::vector<int>{5, 6});
  CHECK(cfg.obs_times == std::vector<double>{2.0, 4.0});
  CHECK(cfg.eval_grid == 101);
  CHECK(cfg.out_dir == "somewhere");
  CHECK_THROWS_AS(load_run_config_text("{not json"), ConfigError);
  CHECK_THROWS_AS(load_run_config_text(R"({"engine": "mystery"})"), ConfigError);
}

TEST_CASE("reference run writes the expected files") {
  RunConfig cfg;
  cfg.problem = "sir_delay";
  cfg.eval_grid = 51;
  cfg.out_dir = fresh_dir("reference").string();
  run_reference(cfg);
  CHECK(fs::exists(fs::path(cfg.out_dir) / "trajectory.csv"));
  CHECK(fs::exists(fs::path(cfg.out_dir) / "metrics.json"));

  const std::string traj = slurp(fs::path(cfg.out_dir) / "trajectory.csv");
  CHECK(traj.substr(0, 11) == "t,y1,y2,y3\n");
  // First row holds the initial state [5, 1, 0].
  std::stringstream ss(traj);
  std::string header, first;
  std::getline(ss, header);
  std::getline(ss, first);
  CHECK(first == "0,5,1,0");
}

TEST_CASE("reference run on linear decay matches the series value at t=2") {
  RunConfig cfg;
  cfg.problem = "linear_decay";
  cfg.problem_options.tau = 1.0;
  cfg.eval_grid = 11;  // grid point at exactly t = 2
  cfg.out_dir = fresh_dir("reference_decay").string();
  run_reference(cfg);
  std::stringstream ss(slurp(fs::path(cfg.out_dir) / "trajectory.csv"));
  std::string line;
  std::getline(ss, line);
  double y_at_2 = 0.0;
  while (std::getline(ss, line)) {
    if (line.rfind("2,", 0) == 0) y_at_2 = std::stod(line.substr(2));
  }
  CHECK(y_at_2 == doctest::Approx(-0.5).epsilon(1e-6));
}

TEST_CASE("invalid grids are rejected") {
  RunConfig cfg;
  cfg.problem = "linear_decay";
  cfg.eval_grid = 1;
  cfg.out_dir = fresh_dir("badgrid").string();
  CHECK_THROWS_AS(run_reference(cfg), InvalidGrid);
}

TEST_CASE("degenerate zero-iteration forward run still reports") {
  RunConfig cfg;
  cfg.problem = "linear_decay";
  cfg.problem_options.tau = 1.0;
  cfg.train.iterations = 0;
  cfg.train.n_collocation = 32;
  cfg.train.arch.hidden = {4};
  cfg.eval_grid = 41;
  cfg.out_dir = fresh_dir("degenerate").string();
  MetricsTable table = run_forward(cfg);
  REQUIRE(table.l2_errors.size() == 1);
  CHECK(table.l2_errors[0] > 0.1);  // untrained network, large error
  CHECK(fs::exists(fs::path(cfg.out_dir) / "trajectory.csv"));
  CHECK(fs::exists(fs::path(cfg.out_dir) / "loss_history.csv"));
  CHECK(fs::exists(fs::path(cfg.out_dir) / "params_history.csv"));
  CHECK(fs::exists(fs::path(cfg.out_dir) / "checkpoint.json"));
  CHECK(fs::exists(fs::path(cfg.out_dir) / "metrics.json"));
}

TEST_CASE("same config and seed reproduce outputs byte for byte") {
  RunConfig cfg;
  cfg.problem = "linear_decay";
  cfg.problem_options.tau = 1.0;
  cfg.train.iterations = 15;
  cfg.train.n_collocation = 32;
  cfg.train.log_every = 5;
  cfg.train.arch.hidden = {4};
  cfg.train.seed = 3;
  cfg.eval_grid = 21;

  cfg.out_dir = fresh_dir("repro_a").string();
  run_forward(cfg);
  const fs::path a = cfg.out_dir;
  cfg.out_dir = fresh_dir("repro_b").string();
  run_forward(cfg);
  const fs::path b = cfg.out_dir;

  for (const char* f : {"trajectory.csv", "loss_history.csv", "params_history.csv",
                        "checkpoint.json"}) {
    CHECK_MESSAGE(slurp(a / f) == slurp(b / f), "file differs: ", f);
  }
  CHECK(strip_timestamp(slurp(a / "metrics.json")) == strip_timestamp(slurp(b / "metrics.json")));
}

TEST_CASE("compare: a reference against itself is exactly zero") {
  RunConfig ref_cfg;
  ref_cfg.problem = "triple_system";
  ref_cfg.eval_grid = 41;
  ref_cfg.out_dir = fresh_dir("self_ref").string();
  run_reference(ref_cfg);

  RunConfig cmp = ref_cfg;
  cmp.out_dir = fresh_dir("self_cmp").string();
  cmp.pred_csv = (fs::path(ref_cfg.out_dir) / "trajectory.csv").string();
  MetricsTable table = run_compare(cmp);
  REQUIRE(table.l2_errors.size() == 3);
  for (double e : table.l2_errors) CHECK(e == 0.0);
}

TEST_CASE("compare: mismatched grids raise GridMismatch") {
  RunConfig ref_cfg;
  ref_cfg.problem = "linear_decay";
  ref_cfg.problem_options.tau = 1.0;
  ref_cfg.eval_grid = 41;
  ref_cfg.out_dir = fresh_dir("grid_ref").string();
  run_reference(ref_cfg);

  RunConfig cmp = ref_cfg;
  cmp.eval_grid = 31;  // different grid than the stored trajectory
  cmp.out_dir = fresh_dir("grid_cmp").string();
  cmp.pred_csv = (fs::path(ref_cfg.out_dir) / "trajectory.csv").string();
  CHECK_THROWS_AS(run_compare(cmp), GridMismatch);
}

TEST_CASE("compare needs a prediction source") {
  RunConfig cmp;
  cmp.problem = "linear_decay";
  cmp.out_dir = fresh_dir("no_pred").string();
  CHECK_THROWS_AS(run_compare(cmp), ConfigError);
}

TEST_CASE("observations come from the configured oracle") {
  DdeProblemSpec decay = registry_get("linear_decay", {.tau = 1.0});
  ObservationSet s = make_observations(decay, {2.0, 4.0}, "series", {});
  CHECK(s.values[0][0] == doctest::Approx(-0.5).epsilon(1e-15));

  DdeProblemSpec sir = registry_get("sir_delay");
  ObservationSet r = make_observations(sir, {2.0, 4.0}, "reference", {});
  CHECK(r.values.size() == 3);
  CHECK(r.values[0].size() == 2);
  CHECK_THROWS_AS(make_observations(sir, {2.0}, "series", {}), ConfigError);
  CHECK_THROWS_AS(make_observations(sir, {}, "reference", {}), ConfigError);
}

TEST_CASE("inverse run reports recovered parameters with relative errors") {
  RunConfig cfg;
  cfg.problem = "linear_decay";
  cfg.problem_options.tau = 1.0;
  cfg.obs_times = {2.0, 4.0, 6.0, 8.0, 10.0};
  cfg.obs_source = "series";
  cfg.train.iterations = 10;
  cfg.train.n_collocation = 32;
  cfg.train.arch.hidden = {4};
  cfg.eval_grid = 21;
  cfg.out_dir = fresh_dir("inverse_small").string();
  MetricsTable table = run_inverse(cfg);
  REQUIRE(table.params.size() == 1);
  CHECK(table.params[0].name == "tau");
  CHECK(table.params[0].true_value == 1.0);
  // 10 iterations cannot recover tau; the report just has to be coherent.
  CHECK(table.params[0].rel_error ==
        doctest::Approx(std::abs(table.params[0].predicted - 1.0)).epsilon(1e-12));
  const std::string hist = slurp(fs::path(cfg.out_dir) / "params_history.csv");
  CHECK(hist.rfind("iteration,tau", 0) == 0);
}

}  // TEST_SUITE
