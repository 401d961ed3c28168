#include <algorithm>
#include <cmath>
#include <cstdio>

#include "doctest.h"
#include "ndde/network.hpp"

using namespace ndde;

namespace {

ParameterStore make_store(const std::string& problem, std::vector<int> hidden, RunMode mode,
                          std::uint64_t seed) {
  DdeProblemSpec spec = registry_get(problem);
  MlpArchitecture arch;
  arch.hidden = std::move(hidden);
  return ParameterStore::init(spec, arch, mode, seed);
}

}  // namespace

TEST_SUITE("network") {

TEST_CASE("parameter count for the paper architecture") {
  MlpArchitecture arch;  // [20, 40, 20]
  // 1*20+20 + 20*40+40 + 40*20+20 + 20*1+1
  CHECK(arch.param_count() == 1721);
  ParameterStore st = make_store("linear_decay", {20, 40, 20}, RunMode::forward, 0);
  CHECK(st.network_params() == 1721);
  CHECK(st.flat().size() == 1721 + 1);  // plus the (fixed) delay
}

TEST_CASE("initialization is deterministic in the seed") {
  ParameterStore a = make_store("hutchinson", {20, 40, 20}, RunMode::inverse, 1234);
  ParameterStore b = make_store("hutchinson", {20, 40, 20}, RunMode::inverse, 1234);
  ParameterStore c = make_store("hutchinson", {20, 40, 20}, RunMode::inverse, 1235);
  CHECK(a.flat() == b.flat());
  CHECK(a.flat() != c.flat());
}

TEST_CASE("Glorot bounds hold layer by layer") {
  ParameterStore st = make_store("linear_decay", {20, 40, 20}, RunMode::forward, 7);
  for (const auto& info : st.layout()) {
    if (info.owner != "network:0") continue;
    if (info.name == "W2") {
      const double bound = std::sqrt(6.0 / (20 + 40));
      CHECK(bound == doctest::Approx(0.3162).epsilon(1e-3));
      for (int i = 0; i < info.count; ++i) {
        CHECK(std::abs(st.flat()[static_cast<std::size_t>(info.offset + i)]) <= bound);
      }
    }
    if (info.name[0] == 'b') {
      for (int i = 0; i < info.count; ++i)
        CHECK(st.flat()[static_cast<std::size_t>(info.offset + i)] == 0.0);
    }
  }
}

TEST_CASE("inverse mode zeroes the trainable delays and system parameters") {
  ParameterStore st = make_store("hutchinson", {5}, RunMode::inverse, 0);
  CHECK(st.delay(0) == 0.0);
  CHECK(st.system_param(0) == 0.0);
  CHECK(st.system_param(1) == 0.0);
  ParameterStore fwd = make_store("hutchinson", {5}, RunMode::forward, 0);
  CHECK(fwd.delay(0) == 0.5);
  CHECK(fwd.system_param(0) == 0.6);
  CHECK(fwd.system_param(1) == 0.006);
}

TEST_CASE("all-zero network outputs zero with zero tangent") {
  ParameterStore st = make_store("linear_decay", {20, 40, 20}, RunMode::forward, 0);
  std::fill(st.flat().begin(), st.flat().begin() + st.network_params(), 0.0);
  ad::Tape tape;
  LiftedParams lp = lift_params(st, tape);
  ad::TScalar y = forward_t(lp, 0, ad::lift_time(tape, 3.7), tape);
  CHECK(y.value() == 0.0);
  CHECK(y.tangent() == 0.0);
}

TEST_CASE("single unit configured as y = tanh(t)") {
  // Input scaling is t/T with T = 10; the first weight set to T cancels it.
  ParameterStore st = make_store("linear_decay", {1}, RunMode::forward, 0);
  auto& flat = st.flat();
  flat[0] = 10.0;  // W1
  flat[1] = 0.0;   // b1
  flat[2] = 1.0;   // W2
  flat[3] = 0.0;   // b2
  ad::Tape tape;
  LiftedParams lp = lift_params(st, tape);
  ad::TScalar y0 = forward_t(lp, 0, ad::lift_time(tape, 0.0), tape);
  CHECK(y0.value() == 0.0);
  CHECK(y0.tangent() == 1.0);
  ad::TScalar y1 = forward_t(lp, 0, ad::lift_time(tape, 0.9), tape);
  CHECK(y1.value() == doctest::Approx(std::tanh(0.9)).epsilon(1e-12));
}

TEST_CASE("tangent matches finite differences on a random network") {
  ParameterStore st = make_store("linear_decay", {20, 40, 20}, RunMode::forward, 3);
  ad::Tape tape;
  LiftedParams lp = lift_params(st, tape);
  const double t0 = 0.37;
  ad::TScalar y = forward_t(lp, 0, ad::lift_time(tape, t0), tape);
  CHECK(y.value() == mlp_value(st, 0, t0));  // same accumulation order

  const double h = 1e-6;
  const double fd = (mlp_value(st, 0, t0 + h) - mlp_value(st, 0, t0 - h)) / (2.0 * h);
  CHECK(std::abs(y.tangent() - fd) / std::max(std::abs(fd), 1e-8) < 1e-5);
}

TEST_CASE("output is exactly linear in the final layer parameters") {
  ParameterStore st = make_store("linear_decay", {8, 8}, RunMode::forward, 5);
  const double before = mlp_value(st, 0, 1.3);
  for (const auto& info : st.layout()) {
    if (info.owner == "network:0" && (info.name == "W3" || info.name == "b3")) {
      for (int i = 0; i < info.count; ++i)
        st.flat()[static_cast<std::size_t>(info.offset + i)] *= 2.0;
    }
  }
  CHECK(mlp_value(st, 0, 1.3) == 2.0 * before);
}

TEST_CASE("networks are parameter-isolated") {
  DdeProblemSpec spec = registry_get("triple_system");
  MlpArchitecture arch;
  arch.hidden = {4, 4};
  ParameterStore st = ParameterStore::init(spec, arch, RunMode::forward, 9);
  ad::Tape tape;
  LiftedParams lp = lift_params(st, tape);
  ad::TScalar y0 = forward_t(lp, 0, ad::lift_time(tape, 0.5), tape);
  ad::GradientMap g = ad::reverse_gradient(tape, y0);
  for (int i = st.network_offset(1); i < st.network_offset(2); ++i) {
    CHECK(g.at(lp.at(i)) == 0.0);
  }
  // And its own parameters do receive gradient somewhere.
  double own = 0.0;
  for (int i = 0; i < st.network_params(); ++i) own += std::abs(g.at(lp.at(i)));
  CHECK(own > 0.0);
}

TEST_CASE("forward evaluation is smooth at 1e-7 spacing") {
  ParameterStore st = make_store("linear_decay", {20, 40, 20}, RunMode::forward, 13);
  double max_tangent = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const double t = 10.0 * (i + 0.5) / 1000.0;
    ad::Tape tape;
    LiftedParams lp = lift_params(st, tape);
    ad::TScalar y = forward_t(lp, 0, ad::lift_time(tape, t), tape);
    max_tangent = std::max(max_tangent, std::abs(y.tangent()));
  }
  for (int i = 0; i < 1000; ++i) {
    const double t = 10.0 * (i + 0.5) / 1000.0;
    const double dy = std::abs(mlp_value(st, 0, t + 1e-7) - mlp_value(st, 0, t));
    CHECK(dy <= (max_tangent + 1.0) * 1e-7 * 10.0);
  }
}

TEST_CASE("checkpoints round-trip") {
  ParameterStore st = make_store("sir_delay", {6, 6}, RunMode::inverse, 21);
  st.flat()[5] = 0.123456789012345;
  const std::string path = "checkpoint_roundtrip_test.json";
  st.save_checkpoint(path);
  ParameterStore back = ParameterStore::load_checkpoint(path);
  CHECK(back.flat() == st.flat());
  CHECK(back.trainable_mask() == st.trainable_mask());
  CHECK(back.n_networks() == st.n_networks());
  CHECK(back.time_scale() == st.time_scale());
  CHECK(back.arch().hidden == st.arch().hidden);
  std::remove(path.c_str());
}

}  // TEST_SUITE
