#include "ndde/reference.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace ndde {

using Eigen::MatrixXd;
using Eigen::VectorXd;

double DenseSolution::eval(int j, double s) const {
  if (s < 0.0 || s > ts_.back()) throw OutOfRange(s, 0.0, ts_.back());
  // Containing interval [ts_[i], ts_[i+1]].
  auto it = std::upper_bound(ts_.begin(), ts_.end(), s);
  std::size_t i = it == ts_.begin() ? 0 : static_cast<std::size_t>(it - ts_.begin()) - 1;
  if (i + 1 >= ts_.size()) i = ts_.size() - 2;

  const double t0 = ts_[i], t1 = ts_[i + 1];
  const double h = t1 - t0;
  const double th = (s - t0) / h;
  const double th2 = th * th, th3 = th2 * th;
  const double h00 = 2.0 * th3 - 3.0 * th2 + 1.0;
  const double h10 = th3 - 2.0 * th2 + th;
  const double h01 = -2.0 * th3 + 3.0 * th2;
  const double h11 = th3 - th2;
  const auto r = static_cast<Eigen::Index>(j - 1);
  const auto i0 = static_cast<Eigen::Index>(i), i1 = static_cast<Eigen::Index>(i + 1);
  return h00 * Y_(r, i0) + h10 * h * F_(r, i0) + h01 * Y_(r, i1) + h11 * h * F_(r, i1);
}

MatrixXd DenseSolution::eval_grid(std::span<const double> ts) const {
  MatrixXd out(components(), static_cast<Eigen::Index>(ts.size()));
  for (std::size_t i = 0; i < ts.size(); ++i)
    for (int j = 1; j <= components(); ++j)
      out(j - 1, static_cast<Eigen::Index>(i)) = eval(j, ts[i]);
  return out;
}

namespace {

// All sums of up to `depth` used-delay values in (0, T): the points where the
// initial derivative discontinuity propagates.
std::vector<double> discontinuity_points(const std::vector<double>& taus, double T, int depth) {
  std::set<double> pts;
  std::vector<double> frontier{0.0};
  for (int d = 0; d < depth; ++d) {
    std::vector<double> next;
    for (double base : frontier) {
      for (double tau : taus) {
        const double p = base + tau;
        if (p <= 0.0 || p >= T) continue;
        bool known = false;
        for (double q : pts) {
          if (std::abs(q - p) < 1e-12) {
            known = true;
            break;
          }
        }
        if (!known) {
          pts.insert(p);
          next.push_back(p);
        }
      }
    }
    frontier = std::move(next);
  }
  return {pts.begin(), pts.end()};
}

struct RhsContext {
  const DdeProblemSpec& spec;
  std::vector<expr::BoundExpr> bound;
  std::vector<double> sys;

  explicit RhsContext(const DdeProblemSpec& s) : spec(s) {
    for (int j = 1; j <= s.n; ++j) bound.push_back(expr::bind(s.rhs[static_cast<std::size_t>(j - 1)], s, j));
    for (const auto& p : s.system_params) sys.push_back(p.value);
  }
};

}  // namespace

DenseSolution solve_dde(const DdeProblemSpec& spec, const StepperConfig& cfg) {
  spec.validate();
  const int n = spec.n;
  const double T = spec.horizon;
  RhsContext ctx(spec);

  // Delays actually used by some lag slot.
  std::set<int> used;
  for (const auto& be : ctx.bound)
    for (const auto& slot : be.lag_slots) used.insert(slot.delay_index);
  std::vector<double> taus;
  for (int d : used) {
    const double tau = spec.delays[static_cast<std::size_t>(d)].value;
    if (tau <= 0.0) throw ConfigError("solve_dde requires strictly positive used delays");
    taus.push_back(tau);
  }

  double max_h = cfg.max_step;
  for (double tau : taus) max_h = std::min(max_h, tau);
  max_h = std::min(max_h, T);

  std::vector<double> barriers = discontinuity_points(taus, T, cfg.discontinuity_depth);
  barriers.push_back(T);

  DenseSolution sol;
  sol.ts_.reserve(256);
  std::vector<VectorXd> ys, fs;

  VectorXd y(n);
  for (int j = 1; j <= n; ++j) y(j - 1) = history_eval(spec, j, 0.0);

  // Lagged lookup against the partial mesh (or history for s <= 0).
  auto lag_lookup = [&](int k, double s) -> double {
    if (s <= 0.0) return history_eval(spec, k, s);
    auto it = std::upper_bound(sol.ts_.begin(), sol.ts_.end(), s);
    std::size_t i = static_cast<std::size_t>(it - sol.ts_.begin());
    i = i == 0 ? 0 : i - 1;
    if (i + 1 >= sol.ts_.size()) i = sol.ts_.size() - 2;
    const double t0 = sol.ts_[i], t1 = sol.ts_[i + 1];
    const double h = t1 - t0;
    const double th = (s - t0) / h;
    const double th2 = th * th, th3 = th2 * th;
    return (2.0 * th3 - 3.0 * th2 + 1.0) * ys[i](k - 1) + (th3 - 2.0 * th2 + th) * h * fs[i](k - 1) +
           (-2.0 * th3 + 3.0 * th2) * ys[i + 1](k - 1) + (th3 - th2) * h * fs[i + 1](k - 1);
  };

  auto rhs = [&](double t, const VectorXd& state) -> VectorXd {
    VectorXd out(n);
    expr::DelayedState<double> ds;
    ds.t = t;
    ds.y.assign(state.data(), state.data() + n);
    for (int j = 1; j <= n; ++j) {
      const auto& be = ctx.bound[static_cast<std::size_t>(j - 1)];
      ds.lag.resize(be.lag_slots.size());
      for (std::size_t s = 0; s < be.lag_slots.size(); ++s) {
        const auto& slot = be.lag_slots[s];
        const double tau = spec.delays[static_cast<std::size_t>(slot.delay_index)].value;
        ds.lag[s] = lag_lookup(slot.component, t - tau);
      }
      out(j - 1) = expr::eval<double>(be, ds, ctx.sys);
    }
    return out;
  };

  auto push_point = [&](double t, const VectorXd& yv, const VectorXd& fv) {
    sol.ts_.push_back(t);
    ys.push_back(yv);
    fs.push_back(fv);
  };

  double t = 0.0;
  VectorXd f0 = rhs(0.0, y);
  push_point(0.0, y, f0);

  std::size_t next_barrier = 0;
  double h = cfg.fixed_step.value_or(cfg.initial_step > 0.0 ? cfg.initial_step
                                                            : std::min(max_h, T / 100.0));
  h = std::min(h, max_h);
  VectorXd k1 = f0;
  bool k1_fresh = true;

  while (t < T - 1e-14 * T) {
    while (next_barrier < barriers.size() && barriers[next_barrier] <= t + 1e-14 * T) ++next_barrier;
    double h_try = std::min(h, max_h);
    double landing = -1.0;
    if (next_barrier < barriers.size()) {
      // Land exactly on the barrier when it is within (a whisker of) reach.
      const double dist = barriers[next_barrier] - t;
      if (dist <= h_try * (1.0 + 1e-9)) {
        h_try = dist;
        landing = barriers[next_barrier];
      }
    }
    if (h_try < 1e-12 * T) throw StepSizeUnderflow(t);

    if (!k1_fresh) {
      k1 = rhs(t, y);
      k1_fresh = true;
    }
    const VectorXd k2 = rhs(t + 0.5 * h_try, y + 0.5 * h_try * k1);
    const VectorXd k3 = rhs(t + 0.75 * h_try, y + 0.75 * h_try * k2);
    const VectorXd ynew = y + h_try * (2.0 * k1 + 3.0 * k2 + 4.0 * k3) / 9.0;
    const VectorXd k4 = rhs(t + h_try, ynew);
    const VectorXd err = h_try * (-5.0 * k1 + 6.0 * k2 + 8.0 * k3 - 9.0 * k4) / 72.0;

    if (!ynew.allFinite() || !k4.allFinite()) throw NonFiniteState(t);

    bool accept = true;
    double errnorm = 0.0;
    if (!cfg.fixed_step) {
      for (int j = 0; j < n; ++j) {
        const double scale = cfg.atol + cfg.rtol * std::max(std::abs(y(j)), std::abs(ynew(j)));
        const double e = err(j) / scale;
        errnorm += e * e;
      }
      errnorm = std::sqrt(errnorm / n);
      accept = errnorm <= 1.0;
    }

    if (accept) {
      t += h_try;
      if (landing > 0.0) t = landing;
      y = ynew;
      push_point(t, y, k4);
      k1 = k4;  // FSAL
      k1_fresh = true;
    } else {
      k1_fresh = true;  // same t, k1 still valid
    }

    if (!cfg.fixed_step) {
      const double fac = errnorm == 0.0 ? 5.0 : std::clamp(0.9 * std::pow(errnorm, -1.0 / 3.0), 0.2, 5.0);
      h = std::min(h_try * fac, max_h);
    }
  }

  sol.Y_.resize(n, static_cast<Eigen::Index>(sol.ts_.size()));
  sol.F_.resize(n, static_cast<Eigen::Index>(sol.ts_.size()));
  for (std::size_t i = 0; i < sol.ts_.size(); ++i) {
    sol.Y_.col(static_cast<Eigen::Index>(i)) = ys[i];
    sol.F_.col(static_cast<Eigen::Index>(i)) = fs[i];
  }
  return sol;
}

double series_solution(double tau, double t) {
  if (t <= 0.0) return 1.0;
  const int segments = std::max(1, static_cast<int>(std::ceil(t / tau)));
  double sum = 1.0;
  double factorial = 1.0;
  double sign = 1.0;
  for (int k = 1; k <= segments; ++k) {
    factorial *= static_cast<double>(k);
    sign = -sign;
    const double base = t - static_cast<double>(k - 1) * tau;
    sum += sign * std::pow(base, k) / factorial;
  }
  return sum;
}

double relative_l2_error(std::span<const double> pred, std::span<const double> exact) {
  if (pred.size() != exact.size()) throw GridMismatch("prediction and reference lengths differ");
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = pred[i] - exact[i];
    num += d * d;
    den += exact[i] * exact[i];
  }
  if (den == 0.0) throw ZeroReferenceNorm();
  return std::sqrt(num) / std::sqrt(den);
}

std::vector<double> uniform_grid(double horizon, int m) {
  if (m < 2) throw InvalidGrid("need at least 2 points");
  std::vector<double> ts(static_cast<std::size_t>(m));
  for (int i = 0; i < m; ++i)
    ts[static_cast<std::size_t>(i)] = horizon * static_cast<double>(i) / static_cast<double>(m - 1);
  return ts;
}

}  // namespace ndde
