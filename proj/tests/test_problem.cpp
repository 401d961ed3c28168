#include <cmath>

#include "doctest.h"
#include "ndde/network.hpp"
#include "ndde/problem.hpp"

using namespace ndde;

TEST_SUITE("problem") {

TEST_CASE("registry: linear_decay") {
  DdeProblemSpec p = registry_get("linear_decay", {.tau = 1.0});
  CHECK(p.n == 1);
  CHECK(p.horizon == 10.0);
  CHECK(p.delays.size() == 1);
  CHECK(p.delays[0].value == 1.0);
  CHECK(history_eval(p, 1, -0.3) == 1.0);
}

TEST_CASE("registry: triple_system delay matrix") {
  DdeProblemSpec p = registry_get("triple_system");
  CHECK(p.n == 3);
  CHECK(p.horizon == 1.0);
  CHECK(p.delays[static_cast<std::size_t>(p.lag_matrix_at(1, 1))].value == doctest::Approx(0.2));
  CHECK(p.delays[static_cast<std::size_t>(p.lag_matrix_at(1, 2))].value == doctest::Approx(0.3));
  CHECK(p.delays[static_cast<std::size_t>(p.lag_matrix_at(2, 2))].value == doctest::Approx(0.4));
  CHECK(p.delays[static_cast<std::size_t>(p.lag_matrix_at(2, 3))].value == doctest::Approx(0.5));
  CHECK(p.lag_matrix_at(3, 1) == -1);
}

TEST_CASE("registry: sir_delay") {
  DdeProblemSpec p = registry_get("sir_delay");
  CHECK(p.n == 3);
  CHECK(p.horizon == 10.0);
  CHECK(p.delay_index("tau1") == 0);
  CHECK(p.delays[0].value == 4.0);
  CHECK(p.delays[1].value == 2.0);
  CHECK(p.system_params[0].name == "alpha");
  CHECK(p.system_params[0].value == doctest::Approx(0.7));
  CHECK(p.system_params[1].value == doctest::Approx(0.3));
  CHECK(p.system_params[2].value == doctest::Approx(0.1));
  CHECK(history_eval(p, 2, -2.0) == 1.0);
  CHECK(history_eval(p, 1, 0.0) == 5.0);
}

TEST_CASE("unknown problems are rejected") {
  CHECK_THROWS_AS(registry_get("lorenz"), UnknownProblem);
}

TEST_CASE("registry problems validate") {
  for (const auto& name : registry_names()) {
    DdeProblemSpec p = registry_get(name);
    CHECK_NOTHROW(p.validate());
  }
}

TEST_CASE("history_eval range checks") {
  DdeProblemSpec p = registry_get("linear_decay");
  CHECK(history_eval(p, 1, 0.0) == 1.0);
  CHECK_THROWS_AS(history_eval(p, 1, -11.0), OutOfHistoryRange);
}

TEST_CASE("delayed_lookup: constant history region has zero tau gradient") {
  DdeProblemSpec p = registry_get("linear_decay", {.tau = 0.5});
  ad::Tape tape;
  ad::TScalar tau = ad::lift_leaf(tape, 0.5);
  auto ev = [&](int, const ad::TScalar& s) { return s; };  // never taken
  ad::TScalar v = delayed_lookup(p, ev, 1, ad::time_constant(0.1), tau, tape);
  CHECK(v.value() == 1.0);
  CHECK(v.is_constant());
  ad::GradientMap g = ad::reverse_gradient(tape, v);
  CHECK(g.at(tau) == 0.0);
}

TEST_CASE("delayed_lookup: network branch is the evaluator at t - tau") {
  DdeProblemSpec p = registry_get("linear_decay", {.tau = 1.0});
  ad::Tape tape;
  ad::TScalar tau = ad::lift_leaf(tape, 1.0);
  auto ev = [&](int, const ad::TScalar& s) { return s * s; };
  ad::TScalar v = delayed_lookup(p, ev, 1, ad::time_constant(5.0), tau, tape);
  CHECK(v.value() == 16.0);
}

TEST_CASE("delayed_lookup: gradient w.r.t. tau matches finite differences") {
  DdeProblemSpec spec = registry_get("linear_decay", {.tau = 1.0});
  MlpArchitecture arch;
  arch.hidden = {5, 5};
  ParameterStore store = ParameterStore::init(spec, arch, RunMode::forward, 11);

  auto value_at_tau = [&](double tauv) {
    return mlp_value(store, 0, 5.0 - tauv);
  };

  ad::Tape tape;
  LiftedParams lp = lift_params(store, tape);
  ad::TScalar tau = lp.delay(0);
  auto ev = [&](int, const ad::TScalar& s) { return forward_t(lp, 0, s, tape); };
  ad::TScalar v = delayed_lookup(spec, ev, 1, ad::time_constant(5.0), tau, tape);
  CHECK(v.value() == doctest::Approx(value_at_tau(1.0)).epsilon(1e-14));

  ad::GradientMap g = ad::reverse_gradient(tape, v);
  const double h = 1e-6;
  const double fd = (value_at_tau(1.0 + h) - value_at_tau(1.0 - h)) / (2.0 * h);
  CHECK(std::abs(g.at(tau) - fd) / std::abs(fd) < 1e-5);

  // The tau gradient is minus the time tangent of the network at s = t - tau.
  ad::TScalar direct = forward_t(lp, 0, ad::lift_time(tape, 4.0), tape);
  CHECK(g.at(tau) == doctest::Approx(-direct.tangent()).epsilon(1e-12));
}

TEST_CASE("delayed_lookup with tau=0 reduces to the plain evaluation") {
  DdeProblemSpec p = registry_get("linear_decay", {.tau = 1.0});
  ad::Tape tape;
  ad::TScalar tau = ad::TScalar::constant(0.0);
  auto ev = [&](int, const ad::TScalar& s) { return s * s + 1.0; };
  for (double t : {0.25, 1.0, 7.5}) {
    ad::TScalar v = delayed_lookup(p, ev, 1, ad::time_constant(t), tau, tape);
    CHECK(v.value() == t * t + 1.0);
  }
}

TEST_CASE("delayed_lookup branches exactly at s = 0") {
  DdeProblemSpec p = registry_get("linear_decay", {.tau = 1.0});
  ad::Tape tape;
  ad::TScalar tau = ad::TScalar::constant(1.0);
  auto ev = [&](int, const ad::TScalar& s) { return s + 100.0; };
  // s = 0: history side (left-closed convention).
  CHECK(delayed_lookup(p, ev, 1, ad::time_constant(1.0), tau, tape).value() == 1.0);
  // s just above 0: network side.
  CHECK(delayed_lookup(p, ev, 1, ad::time_constant(1.0 + 1e-9), tau, tape).value() ==
        doctest::Approx(100.0).epsilon(1e-9));
}

TEST_CASE("non-constant histories keep the chain through s") {
  DdeProblemSpec p;
  p.name = "expr_history";
  p.n = 1;
  p.rhs_source = {"-ylag(1)"};
  p.rhs = {expr::parse("-ylag(1)")};
  p.delays = {{"tau", 0.5, true}};
  p.lag_matrix = {0};
  p.history = {HistoryFn::expression("exp(t)")};
  p.horizon = 2.0;
  p.history_bound = 2.0;
  p.validate();

  ad::Tape tape;
  ad::TScalar tau = ad::lift_leaf(tape, 0.5);
  auto ev = [&](int, const ad::TScalar& s) { return s; };
  // t = 0.2, tau = 0.5 -> s = -0.3, phi(s) = exp(-0.3).
  ad::TScalar v = delayed_lookup(p, ev, 1, ad::time_constant(0.2), tau, tape);
  CHECK(v.value() == doctest::Approx(std::exp(-0.3)).epsilon(1e-14));
  CHECK(v.tangent() == doctest::Approx(std::exp(-0.3)).epsilon(1e-12));
  ad::GradientMap g = ad::reverse_gradient(tape, v);
  CHECK(g.at(tau) == doctest::Approx(-std::exp(-0.3)).epsilon(1e-12));
}

TEST_CASE("problems load from JSON configs") {
  const std::string text = R"JSON({
    "name": "decay_json",
    "n": 1,
    "rhs": ["-ylag(1)"],
    "delays": [{"name": "tau", "value": 1.0, "trainable": true}],
    "lag_defaults": [{"component": 1, "equation": 1, "delay": "tau"}],
    "history": [1.0],
    "horizon": 10.0
  })JSON";
  DdeProblemSpec p = load_problem_json_text(text);
  CHECK(p.n == 1);
  CHECK(p.horizon == 10.0);
  CHECK(p.history_bound == 10.0);
  CHECK(p.delays[0].trainable);
  CHECK(p.lag_matrix_at(1, 1) == 0);
}

}  // TEST_SUITE
