#pragma once

#include <cstdint>
#include <vector>

#include "ndde/errors.hpp"

namespace ndde::ad {

using NodeId = std::int32_t;
inline constexpr NodeId kNoNode = -1;

enum class Op : std::uint8_t {
  leaf,
  add,
  sub,
  mul,
  div,
  neg,
  scale,    // multiply/shift by a compile-time constant (folded binary op)
  pow_int,
  exp,
  tanh,
  sin,
  cos,
};

/// Append-only record of a scalar computation. Each node stores its parents
/// and the local partial derivatives evaluated at record time, which is all
/// the reverse pass needs. Nodes are created in topological order by
/// construction.
class Tape {
 public:
  NodeId leaf(double value) {
    nodes_.push_back(Node{kNoNode, kNoNode, 0.0, 0.0, value, Op::leaf});
    return static_cast<NodeId>(nodes_.size()) - 1;
  }

  NodeId unary(Op op, NodeId parent, double partial, double value) {
    nodes_.push_back(Node{parent, kNoNode, partial, 0.0, value, op});
    return static_cast<NodeId>(nodes_.size()) - 1;
  }

  NodeId binary(Op op, NodeId p0, double d0, NodeId p1, double d1, double value) {
    nodes_.push_back(Node{p0, p1, d0, d1, value, op});
    return static_cast<NodeId>(nodes_.size()) - 1;
  }

  std::size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }
  void reserve(std::size_t n) { nodes_.reserve(n); }

  double value(NodeId id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  Op op(NodeId id) const { return nodes_[static_cast<std::size_t>(id)].op; }
  bool is_leaf(NodeId id) const { return nodes_[static_cast<std::size_t>(id)].op == Op::leaf; }

  struct Node {
    NodeId p0, p1;
    double d0, d1;
    double value;
    Op op;
  };
  const Node& node(NodeId id) const { return nodes_[static_cast<std::size_t>(id)]; }

 private:
  std::vector<Node> nodes_;
};

/// One channel of a TScalar: a runtime value plus (optionally) the tape node
/// that produced it. node == kNoNode marks a constant.
struct Slot {
  double v = 0.0;
  NodeId node = kNoNode;
  bool on_tape() const { return node != kNoNode; }
  bool is_const(double c) const { return node == kNoNode && v == c; }
};

/// Differentiable scalar carrying a value and its derivative with respect to
/// the collocation time t (the tangent). The tangent is itself assembled from
/// taped primitives, so a single reverse pass differentiates both y and dy/dt
/// with respect to every leaf.
class TScalar {
 public:
  TScalar() = default;
  TScalar(Slot val, Slot tan, Tape* tape) : val_(val), tan_(tan), tape_(tape) {}

  static TScalar constant(double v) { return TScalar(Slot{v, kNoNode}, Slot{0.0, kNoNode}, nullptr); }

  double value() const { return val_.v; }
  double tangent() const { return tan_.v; }
  NodeId value_node() const { return val_.node; }
  NodeId tangent_node() const { return tan_.node; }
  bool is_constant() const { return !val_.on_tape() && !tan_.on_tape(); }
  Tape* tape() const { return tape_; }

  const Slot& val_slot() const { return val_; }
  const Slot& tan_slot() const { return tan_; }

  /// The tangent channel viewed as a plain value (for differentiating dy/dt).
  TScalar tangent_scalar() const { return TScalar(tan_, Slot{0.0, kNoNode}, tape_); }

 private:
  Slot val_{};
  Slot tan_{};
  Tape* tape_ = nullptr;
};

/// Registers a differentiable leaf. `tangent` is the derivative of the leaf
/// with respect to time; parameters use 0, the time input itself uses 1.
TScalar lift_leaf(Tape& tape, double value, double tangent = 0.0);

/// Convenience: the time input (tangent exactly 1).
inline TScalar lift_time(Tape& tape, double t) { return lift_leaf(tape, t, 1.0); }

/// Time input as a constant (tangent 1, no leaf node). Gradients with respect
/// to t itself are not retrievable, which the losses never need; everything
/// downstream still lands on the tape through the parameters.
inline TScalar time_constant(double t) {
  return TScalar(Slot{t, kNoNode}, Slot{1.0, kNoNode}, nullptr);
}

TScalar operator+(const TScalar& a, const TScalar& b);
TScalar operator-(const TScalar& a, const TScalar& b);
TScalar operator*(const TScalar& a, const TScalar& b);
TScalar operator/(const TScalar& a, const TScalar& b);
TScalar operator-(const TScalar& a);

inline TScalar operator+(const TScalar& a, double b) { return a + TScalar::constant(b); }
inline TScalar operator+(double a, const TScalar& b) { return TScalar::constant(a) + b; }
inline TScalar operator-(const TScalar& a, double b) { return a - TScalar::constant(b); }
inline TScalar operator-(double a, const TScalar& b) { return TScalar::constant(a) - b; }
inline TScalar operator*(const TScalar& a, double b) { return a * TScalar::constant(b); }
inline TScalar operator*(double a, const TScalar& b) { return TScalar::constant(a) * b; }
inline TScalar operator/(const TScalar& a, double b) { return a / TScalar::constant(b); }
inline TScalar operator/(double a, const TScalar& b) { return TScalar::constant(a) / b; }

TScalar pow_int(const TScalar& a, int k);
TScalar exp(const TScalar& a);
TScalar tanh(const TScalar& a);
TScalar sin(const TScalar& a);
TScalar cos(const TScalar& a);

/// Generic dispatcher over the primitive op set (handy for generated tests).
TScalar apply(Op op, const TScalar& a);
TScalar apply(Op op, const TScalar& a, const TScalar& b);

/// Adjoints of every tape node with respect to a root value. Produced by
/// reverse_gradient; query with the leaf's node id or the TScalar itself.
class GradientMap {
 public:
  explicit GradientMap(std::vector<double> adj) : adj_(std::move(adj)) {}

  double at(NodeId id) const { return id == kNoNode ? 0.0 : adj_[static_cast<std::size_t>(id)]; }
  double at(const TScalar& leaf) const { return at(leaf.value_node()); }
  std::size_t size() const { return adj_.size(); }

 private:
  std::vector<double> adj_;
};

/// Single reverse sweep from `root` (its value channel). Covers every path,
/// including leaves that reach the root only through tangent-channel nodes.
GradientMap reverse_gradient(const Tape& tape, const TScalar& root);

}  // namespace ndde::ad
