#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "ndde/network.hpp"
#include "ndde/problem.hpp"

namespace ndde {

/// Residual collocation points, sampled uniformly over [0, horizon] once at
/// startup.
struct CollocationSet {
  std::vector<double> t;
  std::uint64_t seed = 0;

  static CollocationSet sample(int count, double horizon, std::uint64_t seed);
};

/// Known data points (t_g, y_exact) shared by all components.
struct ObservationSet {
  std::vector<double> t;
  std::vector<std::vector<double>> values;  // [component][point]

  int count() const { return static_cast<int>(t.size()); }
};

/// Per-equation losses, the adaptive weights, and the weighted total for one
/// iteration.
struct LossReport {
  std::vector<double> loss_f, loss_i, loss_g;  // loss_g empty in forward mode
  std::vector<double> w_f, w_i, w_g;
  double total = 0.0;

  bool has_data() const { return !loss_g.empty(); }
};

/// Adaptive weights over nonnegative loss parts: w_k = part_k / sum(parts),
/// computed from detached values; uniform fallback when the sum degenerates.
/// Returns (weights, weighted total).
std::pair<std::vector<double>, double> adaptive_weights(std::span<const double> parts);

/// Taped counterpart: the total carries gradients of the parts only (the
/// weights are per-iteration constants).
struct AdaptiveTotal {
  std::vector<double> weights;
  ad::TScalar total;
};
AdaptiveTotal adaptive_total(std::span<const ad::TScalar> parts);

/// Builds the paper's loss terms on one tape. The network evaluator defaults
/// to forward_t over the store's networks and can be replaced in tests.
class TapeLossAssembler {
 public:
  TapeLossAssembler(const DdeProblemSpec& spec, const ParameterStore& store, ad::Tape& tape);

  void set_evaluator(ComponentEvaluator ev) { evaluator_ = std::move(ev); }

  /// Mean squared residual |dy_j/dt - f_j(...)|^2 over the collocation set.
  ad::TScalar residual_loss(const CollocationSet& colloc, int j);

  /// Squared misfit at the single point t = 0.
  ad::TScalar ic_loss(int j);

  /// Mean squared misfit against the observations of component j.
  ad::TScalar data_loss(const ObservationSet& obs, int j);

  const LiftedParams& lifted() const { return lifted_; }
  ad::TScalar component(int k, const ad::TScalar& t);

 private:
  const DdeProblemSpec& spec_;
  ad::Tape& tape_;
  LiftedParams lifted_;
  std::vector<expr::BoundExpr> bound_;
  ComponentEvaluator evaluator_;
};

/// One full loss/gradient evaluation (all equations, adaptive total, reverse
/// pass). The reference implementation of the training objective.
struct LossEval {
  LossReport report;
  std::vector<double> grad;  // d(total)/d(flat parameter)
};

LossEval evaluate_losses_tape(const DdeProblemSpec& spec, const ParameterStore& store,
                              const CollocationSet& colloc, const ObservationSet* obs);

}  // namespace ndde
