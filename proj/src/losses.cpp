#include "ndde/losses.hpp"

#include <cmath>
#include <random>

namespace ndde {

namespace {
constexpr double kDegenerateSum = 1e-12;

double uniform01(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}
}  // namespace

CollocationSet CollocationSet::sample(int count, double horizon, std::uint64_t seed) {
  CollocationSet cs;
  cs.seed = seed;
  cs.t.reserve(static_cast<std::size_t>(count));
  std::mt19937_64 rng(seed);
  for (int i = 0; i < count; ++i) cs.t.push_back(uniform01(rng) * horizon);
  return cs;
}

std::pair<std::vector<double>, double> adaptive_weights(std::span<const double> parts) {
  double sum = 0.0;
  for (double p : parts) sum += p;
  std::vector<double> w(parts.size());
  if (sum < kDegenerateSum) {
    const double u = parts.empty() ? 0.0 : 1.0 / static_cast<double>(parts.size());
    for (auto& x : w) x = u;
  } else {
    for (std::size_t i = 0; i < parts.size(); ++i) w[i] = parts[i] / sum;
  }
  double total = 0.0;
  for (std::size_t i = 0; i < parts.size(); ++i) total += w[i] * parts[i];
  return {std::move(w), total};
}

AdaptiveTotal adaptive_total(std::span<const ad::TScalar> parts) {
  std::vector<double> vals(parts.size());
  for (std::size_t i = 0; i < parts.size(); ++i) vals[i] = parts[i].value();
  auto [w, _] = adaptive_weights(vals);

  ad::TScalar total = ad::TScalar::constant(0.0);
  for (std::size_t i = 0; i < parts.size(); ++i) total = total + w[i] * parts[i];
  return {std::move(w), total};
}

TapeLossAssembler::TapeLossAssembler(const DdeProblemSpec& spec, const ParameterStore& store,
                                     ad::Tape& tape)
    : spec_(spec), tape_(tape), lifted_(lift_params(store, tape)) {
  bound_.reserve(static_cast<std::size_t>(spec.n));
  for (int j = 1; j <= spec.n; ++j)
    bound_.push_back(expr::bind(spec.rhs[static_cast<std::size_t>(j - 1)], spec, j));
  evaluator_ = [this](int k, const ad::TScalar& s) {
    return forward_t(lifted_, k - 1, s, tape_);
  };
}

ad::TScalar TapeLossAssembler::component(int k, const ad::TScalar& t) { return evaluator_(k, t); }

ad::TScalar TapeLossAssembler::residual_loss(const CollocationSet& colloc, int j) {
  if (colloc.t.empty()) throw ConfigError("empty collocation set");
  const expr::BoundExpr& be = bound_[static_cast<std::size_t>(j - 1)];

  std::vector<ad::TScalar> sys(spec_.system_params.size());
  for (std::size_t p = 0; p < sys.size(); ++p) sys[p] = lifted_.system(static_cast<int>(p));

  ad::TScalar sum = ad::TScalar::constant(0.0);
  expr::DelayedState<ad::TScalar> state;
  state.y.resize(static_cast<std::size_t>(spec_.n));
  state.lag.resize(be.lag_slots.size());

  for (double ti : colloc.t) {
    const ad::TScalar t = ad::time_constant(ti);
    state.t = t;
    for (int k = 1; k <= spec_.n; ++k) state.y[static_cast<std::size_t>(k - 1)] = component(k, t);
    for (std::size_t s = 0; s < be.lag_slots.size(); ++s) {
      const auto& slot = be.lag_slots[s];
      state.lag[s] =
          delayed_lookup(spec_, evaluator_, slot.component, t, lifted_.delay(slot.delay_index), tape_);
    }
    const ad::TScalar ydot = state.y[static_cast<std::size_t>(j - 1)].tangent_scalar();
    const ad::TScalar f = expr::eval<ad::TScalar>(be, state, sys);
    const ad::TScalar r = ydot - f;
    sum = sum + r * r;
  }
  return sum / static_cast<double>(colloc.t.size());
}

ad::TScalar TapeLossAssembler::ic_loss(int j) {
  const ad::TScalar y0 = component(j, ad::time_constant(0.0));
  const double phi0 = history_eval(spec_, j, 0.0);
  const ad::TScalar r = y0 - phi0;
  return r * r;
}

ad::TScalar TapeLossAssembler::data_loss(const ObservationSet& obs, int j) {
  if (obs.t.empty()) throw ConfigError("empty observation set");
  const auto& targets = obs.values[static_cast<std::size_t>(j - 1)];
  ad::TScalar sum = ad::TScalar::constant(0.0);
  for (std::size_t i = 0; i < obs.t.size(); ++i) {
    const ad::TScalar y = component(j, ad::time_constant(obs.t[i]));
    const ad::TScalar r = y - targets[i];
    sum = sum + r * r;
  }
  return sum / static_cast<double>(obs.t.size());
}

LossEval evaluate_losses_tape(const DdeProblemSpec& spec, const ParameterStore& store,
                              const CollocationSet& colloc, const ObservationSet* obs) {
  ad::Tape tape;
  TapeLossAssembler asmb(spec, store, tape);

  const int n = spec.n;
  std::vector<ad::TScalar> parts;
  parts.reserve(static_cast<std::size_t>(obs ? 3 * n : 2 * n));
  for (int j = 1; j <= n; ++j) parts.push_back(asmb.residual_loss(colloc, j));
  for (int j = 1; j <= n; ++j) parts.push_back(asmb.ic_loss(j));
  if (obs) {
    for (int j = 1; j <= n; ++j) parts.push_back(asmb.data_loss(*obs, j));
  }

  AdaptiveTotal at = adaptive_total(parts);

  LossEval out;
  auto& rep = out.report;
  rep.loss_f.resize(static_cast<std::size_t>(n));
  rep.loss_i.resize(static_cast<std::size_t>(n));
  rep.w_f.resize(static_cast<std::size_t>(n));
  rep.w_i.resize(static_cast<std::size_t>(n));
  for (int j = 0; j < n; ++j) {
    rep.loss_f[static_cast<std::size_t>(j)] = parts[static_cast<std::size_t>(j)].value();
    rep.loss_i[static_cast<std::size_t>(j)] = parts[static_cast<std::size_t>(n + j)].value();
    rep.w_f[static_cast<std::size_t>(j)] = at.weights[static_cast<std::size_t>(j)];
    rep.w_i[static_cast<std::size_t>(j)] = at.weights[static_cast<std::size_t>(n + j)];
  }
  if (obs) {
    rep.loss_g.resize(static_cast<std::size_t>(n));
    rep.w_g.resize(static_cast<std::size_t>(n));
    for (int j = 0; j < n; ++j) {
      rep.loss_g[static_cast<std::size_t>(j)] = parts[static_cast<std::size_t>(2 * n + j)].value();
      rep.w_g[static_cast<std::size_t>(j)] = at.weights[static_cast<std::size_t>(2 * n + j)];
    }
  }
  rep.total = at.total.value();

  const ad::GradientMap g = ad::reverse_gradient(tape, at.total);
  out.grad = flat_gradient(g, asmb.lifted());
  return out;
}

}  // namespace ndde
