#include <cstdio>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "ndde/experiments.hpp"

namespace {

struct CliArgs {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<long> iters;
};

void add_common(CLI::App* sub, CliArgs& args) {
  sub->add_option("--config", args.config, "JSON run configuration")->required();
  sub->add_option("--seed", args.seed, "Override the run seed");
  sub->add_option("--out", args.out, "Override the output directory");
  sub->add_option("--iters", args.iters, "Override the iteration budget");
}

ndde::RunConfig make_config(const CliArgs& args) {
  ndde::RunConfig cfg = ndde::load_run_config_file(args.config);
  if (args.seed) cfg.train.seed = *args.seed;
  if (args.out) cfg.out_dir = *args.out;
  if (args.iters) cfg.train.iterations = *args.iters;
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Neural solver for forward and inverse delay differential equation problems"};
  app.require_subcommand(1);

  CliArgs args;
  CLI::App* fwd = app.add_subcommand("forward", "Train on a forward problem and report errors");
  CLI::App* inv = app.add_subcommand("inverse", "Estimate delays/parameters from data");
  CLI::App* ref = app.add_subcommand("reference", "Sample the reference solver on a grid");
  CLI::App* cmp = app.add_subcommand("compare", "Compare a trained model against the reference");
  for (CLI::App* sub : {fwd, inv, ref, cmp}) add_common(sub, args);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    ndde::RunConfig cfg = make_config(args);
    ndde::MetricsTable table;
    if (fwd->parsed()) table = ndde::run_forward(cfg);
    else if (inv->parsed()) table = ndde::run_inverse(cfg);
    else if (ref->parsed()) table = ndde::run_reference(cfg);
    else table = ndde::run_compare(cfg);
    std::cout << ndde::format_metrics(table);
    std::cout << "outputs written to " << cfg.out_dir << "\n";
    return 0;
  } catch (const ndde::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const ndde::UnknownProblem& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const ndde::NddeError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
