#include <cmath>
#include <functional>
#include <random>
#include <type_traits>
#include <vector>

#include "doctest.h"
#include "ndde/autodiff.hpp"

using namespace ndde;
using namespace ndde::ad;

namespace {

double rel_err(double got, double want, double floor = 1e-8) {
  return std::abs(got - want) / std::max(std::abs(want), floor);
}

// Small random expression trees over the primitive op set, used to pit the
// tape against central finite differences.
struct TreeGen {
  std::mt19937_64 rng;
  int max_depth;

  explicit TreeGen(std::uint64_t seed, int depth) : rng(seed), max_depth(depth) {}

  double unif(double lo, double hi) {
    return lo + (hi - lo) * (static_cast<double>(rng() >> 11) * 0x1.0p-53);
  }
  int pick(int n) { return static_cast<int>(rng() % static_cast<std::uint64_t>(n)); }

  // node encoding: 0..9 ops, 10 leaf-param, 11 constant, 12 time
  struct Node {
    int kind;
    int a = -1, b = -1;
    double c = 0.0;
    int leaf = -1;
    int exponent = 2;
  };
  std::vector<Node> nodes;
  int n_leaves = 0;

  int build(int depth) {
    const bool make_leaf = depth >= max_depth || pick(100) < 25;
    if (make_leaf) {
      const int what = pick(3);
      Node n;
      if (what == 0) {
        n.kind = 12;  // time
      } else if (what == 1) {
        n.kind = 10;
        n.leaf = n_leaves++;
      } else {
        n.kind = 11;
        n.c = unif(-2.0, 2.0);
      }
      nodes.push_back(n);
      return static_cast<int>(nodes.size()) - 1;
    }
    const int op = pick(10);
    Node n;
    n.kind = op;
    n.a = build(depth + 1);
    if (op <= 3) n.b = build(depth + 1);  // add, sub, mul, div
    if (op == 5) n.exponent = 2 + pick(3);
    nodes.push_back(n);
    return static_cast<int>(nodes.size()) - 1;
  }

  // Evaluation over any scalar with the op set; used with TScalar and double.
  // Tracks the smallest divisor and largest intermediate magnitude so callers
  // can reject trees where a finite-difference oracle would be unreliable.
  template <class S, class Leaf, class Time, class Const>
  S eval(int id, Leaf leaf, Time time, Const makeconst, double* min_den, double* max_mag) const {
    const Node& n = nodes[static_cast<std::size_t>(id)];
    auto ev = [&](int child) { return eval<S>(child, leaf, time, makeconst, min_den, max_mag); };
    auto track = [&](S v) {
      double m;
      if constexpr (std::is_same_v<S, TScalar>) m = std::abs(v.value());
      else m = std::abs(v);
      *max_mag = std::max(*max_mag, m);
      return v;
    };
    switch (n.kind) {
      case 0: return track(ev(n.a) + ev(n.b));
      case 1: return track(ev(n.a) - ev(n.b));
      case 2: return track(ev(n.a) * ev(n.b));
      case 3: {
        S num = ev(n.a);
        S den = ev(n.b);
        double dv;
        if constexpr (std::is_same_v<S, TScalar>) dv = den.value();
        else dv = den;
        *min_den = std::min(*min_den, std::abs(dv));
        return track(num / den);
      }
      case 4: return track(-ev(n.a));
      case 5: {
        if constexpr (std::is_same_v<S, TScalar>) return track(pow_int(ev(n.a), n.exponent));
        else return track(std::pow(ev(n.a), n.exponent));
      }
      case 6: {
        if constexpr (std::is_same_v<S, TScalar>) return track(exp(ev(n.a)));
        else return track(std::exp(ev(n.a)));
      }
      case 7: {
        if constexpr (std::is_same_v<S, TScalar>) return track(tanh(ev(n.a)));
        else return track(std::tanh(ev(n.a)));
      }
      case 8: {
        if constexpr (std::is_same_v<S, TScalar>) return track(sin(ev(n.a)));
        else return track(std::sin(ev(n.a)));
      }
      case 9: {
        if constexpr (std::is_same_v<S, TScalar>) return track(cos(ev(n.a)));
        else return track(std::cos(ev(n.a)));
      }
      case 10: return leaf(n.leaf);
      case 12: return time();
      default: return makeconst(n.c);
    }
  }
};

}  // namespace

TEST_SUITE("autodiff") {

TEST_CASE("lift_leaf identity gradient") {
  Tape tape;
  TScalar x = lift_leaf(tape, 3.0);
  GradientMap g = reverse_gradient(tape, x);
  CHECK(g.at(x) == 1.0);
}

TEST_CASE("time and constant lifts") {
  Tape tape;
  TScalar t = lift_time(tape, 2.0);
  CHECK(t.value() == 2.0);
  CHECK(t.tangent() == 1.0);
  TScalar c = TScalar::constant(5.0);
  CHECK(c.tangent() == 0.0);
  CHECK(!c.val_slot().on_tape());
}

TEST_CASE("mul tangent: d(x^2)/dt at x=t=3") {
  Tape tape;
  TScalar x = lift_time(tape, 3.0);
  TScalar y = x * x;
  CHECK(y.value() == 9.0);
  CHECK(y.tangent() == 6.0);
}

TEST_CASE("tanh at zero passes the tangent through") {
  Tape tape;
  TScalar t = lift_time(tape, 0.0);
  TScalar y = tanh(t);
  CHECK(y.value() == 0.0);
  CHECK(y.tangent() == 1.0);
}

TEST_CASE("tangent of exp(t^2) at t=2 matches the finite-difference oracle") {
  Tape tape;
  TScalar t = lift_time(tape, 2.0);
  TScalar y = exp(t * t);
  const double h = 1e-6;
  const double fd = (std::exp((2.0 + h) * (2.0 + h)) - std::exp((2.0 - h) * (2.0 - h))) / (2.0 * h);
  CHECK(rel_err(y.tangent(), fd) < 1e-5);
  CHECK(y.tangent() == doctest::Approx(218.393).epsilon(1e-4));
}

TEST_CASE("product rule adjoints") {
  Tape tape;
  TScalar a = lift_leaf(tape, 2.0);
  TScalar b = lift_leaf(tape, 3.0);
  TScalar y = a * b;
  GradientMap g = reverse_gradient(tape, y);
  CHECK(g.at(a) == 3.0);
  CHECK(g.at(b) == 2.0);
}

TEST_CASE("gradient through the tangent channel: d/dw of d(w t)/dt") {
  Tape tape;
  TScalar w = lift_leaf(tape, 1.7);
  TScalar t = lift_time(tape, 0.4);
  TScalar y = w * t;
  TScalar root = y.tangent_scalar();
  CHECK(root.value() == 1.7);
  GradientMap g = reverse_gradient(tape, root);
  CHECK(g.at(w) == 1.0);
  CHECK(g.at(t) == 0.0);
}

TEST_CASE("division guards") {
  Tape tape;
  TScalar a = lift_leaf(tape, 1.0);
  TScalar z = TScalar::constant(0.0);
  CHECK_THROWS_AS(a / z, DivisionByZero);
  TScalar tiny = lift_leaf(tape, 1e-301);
  CHECK_THROWS_AS(a / tiny, DivisionByZero);
}

TEST_CASE("random trees: reverse gradients match finite differences") {
  int accepted = 0;
  std::uint64_t seed = 1;
  while (accepted < 120 && seed < 4000) {
    TreeGen gen(seed++, 8);
    const int root_id = gen.build(0);
    if (gen.n_leaves == 0) continue;

    std::mt19937_64 vals_rng(seed * 977);
    std::vector<double> leaf_vals(static_cast<std::size_t>(gen.n_leaves));
    for (auto& v : leaf_vals) v = -1.5 + 3.0 * (static_cast<double>(vals_rng() >> 11) * 0x1.0p-53);
    const double t0 = 0.7;

    auto eval_double = [&](const std::vector<double>& lv, double tv, double* min_den,
                           double* max_mag) {
      return gen.eval<double>(
          root_id, [&](int i) { return lv[static_cast<std::size_t>(i)]; }, [&]() { return tv; },
          [](double c) { return c; }, min_den, max_mag);
    };

    // Reject trees whose intermediates are huge or that flirt with a pole;
    // finite differences are not a usable oracle there.
    double min_den = 1e300, max_mag = 0.0;
    double base;
    try {
      base = eval_double(leaf_vals, t0, &min_den, &max_mag);
    } catch (const DivisionByZero&) {
      continue;
    }
    if (!std::isfinite(base) || max_mag > 1e4 || min_den < 0.2) continue;

    Tape tape;
    std::vector<TScalar> leaves;
    for (double v : leaf_vals) leaves.push_back(lift_leaf(tape, v));
    TScalar t = lift_time(tape, t0);
    double dummy = 1e300, dummy2 = 0.0;
    TScalar root = gen.eval<TScalar>(
        root_id, [&](int i) { return leaves[static_cast<std::size_t>(i)]; }, [&]() { return t; },
        [](double c) { return TScalar::constant(c); }, &dummy, &dummy2);
    CHECK(root.value() == doctest::Approx(base).epsilon(1e-12));

    GradientMap g = reverse_gradient(tape, root);
    const double h = 1e-6;
    bool ok = true;
    for (int i = 0; i < gen.n_leaves && ok; ++i) {
      // Central differences at two step sizes; if the oracle disagrees with
      // itself the tree is too curved to judge and is skipped.
      auto central = [&](double step, double* md) {
        auto perturbed = leaf_vals;
        double mm = 0.0;
        perturbed[static_cast<std::size_t>(i)] = leaf_vals[static_cast<std::size_t>(i)] + step;
        const double fp = eval_double(perturbed, t0, md, &mm);
        perturbed[static_cast<std::size_t>(i)] = leaf_vals[static_cast<std::size_t>(i)] - step;
        const double fm = eval_double(perturbed, t0, md, &mm);
        return (fp - fm) / (2.0 * step);
      };
      double md = 1e300;
      const double fd = central(h, &md);
      const double fd2 = central(2.0 * h, &md);
      if (md < 0.2 || !std::isfinite(fd) || !std::isfinite(fd2) ||
          std::abs(fd - fd2) > 2e-6 * std::max(std::abs(fd), 1e-7)) {
        ok = false;
        break;
      }
      const double got = g.at(leaves[static_cast<std::size_t>(i)]);
      if (std::abs(fd) < 1e-7) {
        CHECK(std::abs(got - fd) < 1e-8);
      } else {
        CHECK(rel_err(got, fd) < 1e-5);
      }
    }
    // Forward/reverse consistency: tangent of the root equals the adjoint of
    // the time leaf.
    if (ok) {
      const double tg = g.at(t);
      if (std::abs(root.tangent()) < 1e-7) {
        CHECK(std::abs(tg - root.tangent()) < 1e-8);
      } else {
        CHECK(rel_err(tg, root.tangent()) < 1e-9);
      }
      ++accepted;
    }
  }
  CHECK(accepted >= 100);
}

TEST_CASE("tape evaluation is bit-deterministic") {
  auto run = [](std::vector<double>* grads) {
    Tape tape;
    TScalar a = lift_leaf(tape, 0.3);
    TScalar b = lift_leaf(tape, -1.2);
    TScalar t = lift_time(tape, 0.9);
    TScalar y = tanh(a * t) + exp(b * sin(t)) / (a * a + 1.0);
    GradientMap g = reverse_gradient(tape, y);
    grads->push_back(g.at(a));
    grads->push_back(g.at(b));
    grads->push_back(g.at(t));
    return y.value();
  };
  std::vector<double> g1, g2;
  const double v1 = run(&g1);
  const double v2 = run(&g2);
  CHECK(v1 == v2);
  CHECK(g1 == g2);
}

TEST_CASE("pow_int handles negative exponents") {
  Tape tape;
  TScalar x = lift_leaf(tape, 2.0);
  TScalar y = pow_int(x, -2);
  CHECK(y.value() == doctest::Approx(0.25));
  GradientMap g = reverse_gradient(tape, y);
  CHECK(g.at(x) == doctest::Approx(-2.0 * std::pow(2.0, -3)));
}

}  // TEST_SUITE
