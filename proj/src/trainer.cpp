#include "ndde/trainer.hpp"

#include <cmath>

namespace ndde {

void AdamState::step(std::vector<double>& params, std::span<const double> grad,
                     std::span<const std::uint8_t> mask, const AdamConfig& cfg) {
  for (std::size_t i = 0; i < grad.size(); ++i) {
    if (mask[i] && !std::isfinite(grad[i]))
      throw NonFiniteGradient("parameter " + std::to_string(i));
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!mask[i]) continue;
    m_[i] = cfg.beta1 * m_[i] + (1.0 - cfg.beta1) * grad[i];
    v_[i] = cfg.beta2 * v_[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
    const double mhat = m_[i] / bc1;
    const double vhat = v_[i] / bc2;
    params[i] -= cfg.learning_rate * mhat / (std::sqrt(vhat) + cfg.epsilon);
  }
}

void project_delays(ParameterStore& store, const DdeProblemSpec& spec) {
  for (int d = 0; d < store.n_delays(); ++d) {
    const int off = store.delay_offset(d);
    if (!store.trainable_mask()[static_cast<std::size_t>(off)]) continue;
    double& v = store.flat()[static_cast<std::size_t>(off)];
    if (v < 0.0) v = 0.0;
    if (v > spec.history_bound) v = spec.history_bound;
  }
}

namespace {

std::vector<double> tracked_values(const ParameterStore& store) {
  std::vector<double> vals;
  for (const auto& [name, value] : store.named_trainables()) vals.push_back(value);
  return vals;
}

}  // namespace

TrainResult train(const DdeProblemSpec& spec, const TrainConfig& cfg, const ObservationSet* obs) {
  spec.validate();
  if (cfg.mode == RunMode::inverse && obs == nullptr)
    throw ConfigError("inverse mode requires observations");

  TrainResult result;
  result.params = ParameterStore::init(spec, cfg.arch, cfg.mode, cfg.seed);
  ParameterStore& store = result.params;

  for (const auto& [name, value] : store.named_trainables())
    result.trace.tracked_names.push_back(name);

  // Decorrelated stream for the collocation sample.
  const std::uint64_t colloc_seed = cfg.seed ^ 0x9e3779b97f4a7c15ULL;
  CollocationSet colloc = CollocationSet::sample(cfg.n_collocation, spec.horizon, colloc_seed);

  std::optional<BatchedLossEvaluator> batched;
  if (cfg.engine == LossEngine::batched) {
    batched.emplace(spec, colloc,
                    obs ? std::optional<ObservationSet>(*obs) : std::nullopt);
  }
  auto evaluate = [&]() {
    if (batched) return batched->evaluate(store);
    return evaluate_losses_tape(spec, store, colloc, obs);
  };

  AdamState adam(store.flat().size());
  auto record = [&](long iteration, const LossReport& report) {
    result.trace.entries.push_back(TraceEntry{iteration, report, tracked_values(store)});
  };

  for (long it = 0; it < cfg.iterations; ++it) {
    LossEval le;
    try {
      le = evaluate();
    } catch (const NddeError& e) {
      result.aborted = true;
      result.abort_reason = e.what();
      return result;
    }
    if (it % cfg.log_every == 0) record(it, le.report);
    try {
      adam.step(store.flat(), le.grad, store.trainable_mask(), cfg.adam);
    } catch (const NonFiniteGradient& e) {
      result.aborted = true;
      result.abort_reason = e.what();
      return result;
    }
    project_delays(store, spec);
    for (long s : cfg.snapshot_at) {
      if (s == it + 1) result.snapshots.emplace_back(s, store);
    }
  }

  // Closing entry with the post-training losses.
  LossEval final_eval = evaluate();
  record(cfg.iterations, final_eval.report);
  return result;
}

}  // namespace ndde
