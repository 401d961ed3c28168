#pragma once

#include <Eigen/Dense>
#include <limits>
#include <optional>
#include <span>
#include <vector>

#include "ndde/problem.hpp"

namespace ndde {

struct StepperConfig {
  double rtol = 1e-6;
  double atol = 1e-8;
  double initial_step = 0.0;  // 0 picks one automatically
  double max_step = std::numeric_limits<double>::infinity();
  int discontinuity_depth = 3;
  std::optional<double> fixed_step;  // disables error control (order studies)
};

/// Mesh of accepted steps with values and derivatives at every mesh point;
/// evaluable anywhere in [0, T] through the cubic Hermite interpolant of
/// each interval (C1 inside intervals, C0 across them).
class DenseSolution {
 public:
  int components() const { return static_cast<int>(Y_.rows()); }
  double t_end() const { return ts_.back(); }
  const std::vector<double>& mesh() const { return ts_; }

  /// Value of component j (1-based) at s in [0, T].
  double eval(int j, double s) const;

  /// All components on a grid; row j-1 holds component j.
  Eigen::MatrixXd eval_grid(std::span<const double> ts) const;

  double mesh_value(int j, std::size_t i) const { return Y_(j - 1, static_cast<Eigen::Index>(i)); }
  double mesh_derivative(int j, std::size_t i) const {
    return F_(j - 1, static_cast<Eigen::Index>(i));
  }

 private:
  friend DenseSolution solve_dde(const DdeProblemSpec&, const StepperConfig&);
  std::vector<double> ts_;
  Eigen::MatrixXd Y_;  // n x mesh
  Eigen::MatrixXd F_;  // n x mesh
};

/// Method-of-steps integration with the Bogacki-Shampine embedded (2,3)
/// pair. Lagged values come from the history function (s <= 0) or the dense
/// interpolant (s > 0); the step size never exceeds the smallest used delay,
/// and the mesh lands exactly on every propagated discontinuity point up to
/// the configured depth. Delays are treated as fixed.
DenseSolution solve_dde(const DdeProblemSpec& spec, const StepperConfig& cfg = {});

/// Closed-form series for y' = -y(t - tau), y(t)=1 for t <= 0:
///   y(t) = 1 + sum_{k=1..n} (-1)^k [t-(k-1)tau]^k / k!   on [(n-1)tau, n*tau].
double series_solution(double tau, double t);

/// sqrt(sum |pred - exact|^2) / sqrt(sum |exact|^2).
double relative_l2_error(std::span<const double> pred, std::span<const double> exact);

/// Uniform grid of m points covering [0, horizon] (endpoints exact).
std::vector<double> uniform_grid(double horizon, int m);

}  // namespace ndde
