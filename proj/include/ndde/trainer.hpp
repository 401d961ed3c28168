#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ndde/batched.hpp"
#include "ndde/losses.hpp"

namespace ndde {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Which objective evaluation backs the loop: the fused Eigen engine (fast,
/// the default) or the scalar tape (reference; only sensible at small N_f).
enum class LossEngine { batched, tape };

struct TrainConfig {
  long iterations = 80000;
  AdamConfig adam;
  std::uint64_t seed = 0;
  long log_every = 100;
  int n_collocation = 5000;
  RunMode mode = RunMode::forward;
  LossEngine engine = LossEngine::batched;
  MlpArchitecture arch;
  std::vector<long> snapshot_at;  // iterations at which to copy the parameters
};

struct TraceEntry {
  long iteration;
  LossReport report;
  std::vector<double> tracked;  // values of tracked_names at this iteration
};

struct TrainTrace {
  std::vector<std::string> tracked_names;  // trainable delays and system params
  std::vector<TraceEntry> entries;
};

struct TrainResult {
  ParameterStore params;
  TrainTrace trace;
  std::vector<std::pair<long, ParameterStore>> snapshots;
  bool aborted = false;
  std::string abort_reason;
};

/// Adam moments; step() applies one masked update with bias correction.
/// Throws NonFiniteGradient on NaN/Inf gradient entries.
class AdamState {
 public:
  explicit AdamState(std::size_t size) : m_(size, 0.0), v_(size, 0.0) {}

  void step(std::vector<double>& params, std::span<const double> grad,
            std::span<const std::uint8_t> mask, const AdamConfig& cfg);

  long steps_taken() const { return t_; }

 private:
  std::vector<double> m_, v_;
  long t_ = 0;
};

/// Clamps every trainable delay into [0, spec.history_bound].
void project_delays(ParameterStore& store, const DdeProblemSpec& spec);

/// Full optimization loop: adaptive-weighted losses, reverse gradient, Adam,
/// delay projection. Inverse mode requires observations.
TrainResult train(const DdeProblemSpec& spec, const TrainConfig& cfg,
                  const ObservationSet* obs = nullptr);

}  // namespace ndde
