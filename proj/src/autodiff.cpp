#include "ndde/autodiff.hpp"

#include <cmath>

namespace ndde::ad {

namespace {

constexpr double kDivFloor = 1e-300;

Slot n_const(double v) { return Slot{v, kNoNode}; }

// Node-level helpers with constant folding. Every helper computes the result
// value directly (not through the folded partials) so folded and unfolded
// graphs produce bit-identical values.

Slot n_add(Tape* tp, Slot a, Slot b) {
  if (!a.on_tape() && !b.on_tape()) return n_const(a.v + b.v);
  if (a.is_const(0.0)) return b;
  if (b.is_const(0.0)) return a;
  double v = a.v + b.v;
  if (!a.on_tape()) return Slot{v, tp->unary(Op::scale, b.node, 1.0, v)};
  if (!b.on_tape()) return Slot{v, tp->unary(Op::scale, a.node, 1.0, v)};
  return Slot{v, tp->binary(Op::add, a.node, 1.0, b.node, 1.0, v)};
}

Slot n_neg(Tape* tp, Slot a) {
  if (!a.on_tape()) return n_const(-a.v);
  return Slot{-a.v, tp->unary(Op::neg, a.node, -1.0, -a.v)};
}

Slot n_sub(Tape* tp, Slot a, Slot b) {
  if (!a.on_tape() && !b.on_tape()) return n_const(a.v - b.v);
  if (b.is_const(0.0)) return a;
  if (a.is_const(0.0)) return n_neg(tp, b);
  double v = a.v - b.v;
  if (!a.on_tape()) return Slot{v, tp->unary(Op::scale, b.node, -1.0, v)};
  if (!b.on_tape()) return Slot{v, tp->unary(Op::scale, a.node, 1.0, v)};
  return Slot{v, tp->binary(Op::sub, a.node, 1.0, b.node, -1.0, v)};
}

Slot n_mul(Tape* tp, Slot a, Slot b) {
  if (a.is_const(0.0) || b.is_const(0.0)) return n_const(0.0);
  if (!a.on_tape() && !b.on_tape()) return n_const(a.v * b.v);
  if (a.is_const(1.0)) return b;
  if (b.is_const(1.0)) return a;
  double v = a.v * b.v;
  if (!a.on_tape()) return Slot{v, tp->unary(Op::scale, b.node, a.v, v)};
  if (!b.on_tape()) return Slot{v, tp->unary(Op::scale, a.node, b.v, v)};
  return Slot{v, tp->binary(Op::mul, a.node, b.v, b.node, a.v, v)};
}

Slot n_div(Tape* tp, Slot a, Slot b) {
  if (std::abs(b.v) < kDivFloor) throw DivisionByZero(b.v);
  double v = a.v / b.v;
  if (!a.on_tape() && !b.on_tape()) return n_const(v);
  if (b.is_const(1.0)) return a;
  if (!b.on_tape()) return Slot{v, tp->unary(Op::scale, a.node, 1.0 / b.v, v)};
  if (!a.on_tape()) {
    if (a.v == 0.0) return n_const(0.0);
    return Slot{v, tp->unary(Op::div, b.node, -a.v / (b.v * b.v), v)};
  }
  return Slot{v, tp->binary(Op::div, a.node, 1.0 / b.v, b.node, -a.v / (b.v * b.v), v)};
}

Slot n_pow_int(Tape* tp, Slot a, int k) {
  if (k == 0) return n_const(1.0);
  if (k == 1) return a;
  if (k < 0 && std::abs(a.v) < kDivFloor) throw DivisionByZero(a.v);
  double v = std::pow(a.v, k);
  if (!a.on_tape()) return n_const(v);
  double partial = static_cast<double>(k) * std::pow(a.v, k - 1);
  return Slot{v, tp->unary(Op::pow_int, a.node, partial, v)};
}

Slot n_exp(Tape* tp, Slot a) {
  double v = std::exp(a.v);
  if (!a.on_tape()) return n_const(v);
  return Slot{v, tp->unary(Op::exp, a.node, v, v)};
}

Slot n_tanh(Tape* tp, Slot a) {
  double v = std::tanh(a.v);
  if (!a.on_tape()) return n_const(v);
  return Slot{v, tp->unary(Op::tanh, a.node, 1.0 - v * v, v)};
}

Slot n_sin(Tape* tp, Slot a) {
  double v = std::sin(a.v);
  if (!a.on_tape()) return n_const(v);
  return Slot{v, tp->unary(Op::sin, a.node, std::cos(a.v), v)};
}

Slot n_cos(Tape* tp, Slot a) {
  double v = std::cos(a.v);
  if (!a.on_tape()) return n_const(v);
  return Slot{v, tp->unary(Op::cos, a.node, -std::sin(a.v), v)};
}

Tape* pick_tape(const TScalar& a, const TScalar& b) {
  return a.tape() ? a.tape() : b.tape();
}

}  // namespace

TScalar lift_leaf(Tape& tape, double value, double tangent) {
  return TScalar(Slot{value, tape.leaf(value)}, Slot{tangent, kNoNode}, &tape);
}

TScalar operator+(const TScalar& a, const TScalar& b) {
  Tape* tp = pick_tape(a, b);
  return TScalar(n_add(tp, a.val_slot(), b.val_slot()), n_add(tp, a.tan_slot(), b.tan_slot()), tp);
}

TScalar operator-(const TScalar& a, const TScalar& b) {
  Tape* tp = pick_tape(a, b);
  return TScalar(n_sub(tp, a.val_slot(), b.val_slot()), n_sub(tp, a.tan_slot(), b.tan_slot()), tp);
}

TScalar operator-(const TScalar& a) {
  Tape* tp = a.tape();
  return TScalar(n_neg(tp, a.val_slot()), n_neg(tp, a.tan_slot()), tp);
}

TScalar operator*(const TScalar& a, const TScalar& b) {
  Tape* tp = pick_tape(a, b);
  Slot v = n_mul(tp, a.val_slot(), b.val_slot());
  // d(uv) = du*v + u*dv
  Slot t = n_add(tp, n_mul(tp, a.tan_slot(), b.val_slot()), n_mul(tp, a.val_slot(), b.tan_slot()));
  return TScalar(v, t, tp);
}

TScalar operator/(const TScalar& a, const TScalar& b) {
  Tape* tp = pick_tape(a, b);
  Slot v = n_div(tp, a.val_slot(), b.val_slot());
  // d(u/v) = du/v - (u/v)*dv/v  (avoids forming v^2)
  Slot t = n_sub(tp, n_div(tp, a.tan_slot(), b.val_slot()),
                 n_div(tp, n_mul(tp, v, b.tan_slot()), b.val_slot()));
  return TScalar(v, t, tp);
}

TScalar pow_int(const TScalar& a, int k) {
  Tape* tp = a.tape();
  Slot v = n_pow_int(tp, a.val_slot(), k);
  if (k == 0) return TScalar(v, Slot{0.0, kNoNode}, tp);
  // d(u^k) = k*u^(k-1)*du
  Slot t{0.0, kNoNode};
  if (a.tan_slot().on_tape() || a.tan_slot().v != 0.0) {
    Slot p = n_pow_int(tp, a.val_slot(), k - 1);
    t = n_mul(tp, a.tan_slot(), n_mul(tp, n_const(static_cast<double>(k)), p));
  }
  return TScalar(v, t, tp);
}

TScalar exp(const TScalar& a) {
  Tape* tp = a.tape();
  Slot v = n_exp(tp, a.val_slot());
  Slot t = n_mul(tp, a.tan_slot(), v);
  return TScalar(v, t, tp);
}

TScalar tanh(const TScalar& a) {
  Tape* tp = a.tape();
  Slot v = n_tanh(tp, a.val_slot());
  Slot t{0.0, kNoNode};
  if (a.tan_slot().on_tape() || a.tan_slot().v != 0.0) {
    Slot d = n_sub(tp, n_const(1.0), n_mul(tp, v, v));
    t = n_mul(tp, a.tan_slot(), d);
  }
  return TScalar(v, t, tp);
}

TScalar sin(const TScalar& a) {
  Tape* tp = a.tape();
  Slot v = n_sin(tp, a.val_slot());
  Slot t{0.0, kNoNode};
  if (a.tan_slot().on_tape() || a.tan_slot().v != 0.0) {
    t = n_mul(tp, a.tan_slot(), n_cos(tp, a.val_slot()));
  }
  return TScalar(v, t, tp);
}

TScalar cos(const TScalar& a) {
  Tape* tp = a.tape();
  Slot v = n_cos(tp, a.val_slot());
  Slot t{0.0, kNoNode};
  if (a.tan_slot().on_tape() || a.tan_slot().v != 0.0) {
    t = n_mul(tp, a.tan_slot(), n_neg(tp, n_sin(tp, a.val_slot())));
  }
  return TScalar(v, t, tp);
}

TScalar apply(Op op, const TScalar& a) {
  switch (op) {
    case Op::neg: return -a;
    case Op::exp: return exp(a);
    case Op::tanh: return tanh(a);
    case Op::sin: return sin(a);
    case Op::cos: return cos(a);
    default: throw NddeError("apply: not a unary op");
  }
}

TScalar apply(Op op, const TScalar& a, const TScalar& b) {
  switch (op) {
    case Op::add: return a + b;
    case Op::sub: return a - b;
    case Op::mul: return a * b;
    case Op::div: return a / b;
    default: throw NddeError("apply: not a binary op");
  }
}

GradientMap reverse_gradient(const Tape& tape, const TScalar& root) {
  std::vector<double> adj(tape.size(), 0.0);
  NodeId r = root.value_node();
  if (r == kNoNode) return GradientMap(std::move(adj));  // constant root: all zeros
  adj[static_cast<std::size_t>(r)] = 1.0;
  for (std::int64_t i = r; i >= 0; --i) {
    double a = adj[static_cast<std::size_t>(i)];
    if (a == 0.0) continue;
    const Tape::Node& n = tape.node(static_cast<NodeId>(i));
    if (n.p0 != kNoNode) adj[static_cast<std::size_t>(n.p0)] += a * n.d0;
    if (n.p1 != kNoNode) adj[static_cast<std::size_t>(n.p1)] += a * n.d1;
  }
  return GradientMap(std::move(adj));
}

}  // namespace ndde::ad
