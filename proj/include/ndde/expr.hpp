#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "ndde/autodiff.hpp"
#include "ndde/errors.hpp"

namespace ndde {

struct DdeProblemSpec;

namespace expr {

enum class NodeKind : std::uint8_t {
  constant,
  time_var,   // t
  state_var,  // y(k)
  lag_var,    // ylag(k) / ylag(k, delay_name)
  param_ref,  // named system parameter
  neg,
  add,
  sub,
  mul,
  div,
  pow_int,
  call,
};

enum class FnKind : std::uint8_t { sin, cos, exp, tanh };

struct ExprNode {
  NodeKind kind;
  FnKind fn = FnKind::sin;
  int a = -1;         // first child
  int b = -1;         // second child
  double num = 0.0;   // constant value
  int index = 0;      // component k (1-based) or integer exponent
  std::string name;   // param_ref name, or optional delay label on lag_var
};

/// Expression tree stored as a flat arena; children always precede parents,
/// so nodes can be evaluated in index order.
struct ExprAst {
  std::vector<ExprNode> nodes;
  int root = -1;
  bool empty() const { return root < 0; }
};

/// Recursive-descent parser for the RHS grammar:
///   expr   := term (('+'|'-') term)*
///   term   := factor (('*'|'/') factor)*
///   factor := ['-'] atom ['^' integer]
///   atom   := number | 't' | 'y(' k ')' | 'ylag(' k [',' name] ')'
///           | identifier | fn '(' expr ')' | '(' expr ')'
///   fn     := sin | cos | exp | tanh
ExprAst parse(const std::string& source);

/// Canonical fully-parenthesized form; parse(print(ast)) is structurally
/// identical to ast.
std::string print(const ExprAst& ast);

bool structurally_equal(const ExprAst& a, const ExprAst& b);

/// One lagged-state usage y_k(t - tau_d), deduplicated per equation.
struct LagSlot {
  int component;    // 1-based k
  int delay_index;  // index into DdeProblemSpec::delays
};

/// Expression resolved against a problem: parameter names mapped to system
/// parameter indices and lag usages mapped to delay slots.
struct BoundExpr {
  ExprAst ast;
  int equation = 0;  // 1-based j
  std::vector<LagSlot> lag_slots;
  std::vector<int> param_index;       // per node; -1 unless param_ref
  std::vector<int> lag_slot_of_node;  // per node; -1 unless lag_var
};

BoundExpr bind(const ExprAst& ast, const DdeProblemSpec& spec, int equation);

/// State snapshot consumed by eval: current values plus the lagged values
/// y_k(t - tau) laid out by the BoundExpr's lag slots.
template <class S>
struct DelayedState {
  S t{};
  std::vector<S> y;    // size n, index k-1
  std::vector<S> lag;  // size lag_slots.size()
};

namespace detail {
inline double pow_int_s(double x, int k) {
  if (k < 0 && std::abs(x) < 1e-300) throw DivisionByZero(x);
  return std::pow(x, k);
}
inline ad::TScalar pow_int_s(const ad::TScalar& x, int k) { return ad::pow_int(x, k); }
inline double checked_div(double a, double b) {
  if (std::abs(b) < 1e-300) throw DivisionByZero(b);
  return a / b;
}
inline ad::TScalar checked_div(const ad::TScalar& a, const ad::TScalar& b) { return a / b; }

template <class S>
S make_constant(double v);
template <>
inline double make_constant<double>(double v) {
  return v;
}
template <>
inline ad::TScalar make_constant<ad::TScalar>(double v) {
  return ad::TScalar::constant(v);
}
}  // namespace detail

/// Evaluates a bound expression over plain doubles or taped TScalars.
template <class S>
S eval(const BoundExpr& be, const DelayedState<S>& state, std::span<const S> system_params) {
  using std::cos;
  using std::exp;
  using std::sin;
  using std::tanh;
  std::vector<S> vals(be.ast.nodes.size());
  for (std::size_t i = 0; i < be.ast.nodes.size(); ++i) {
    const ExprNode& n = be.ast.nodes[i];
    switch (n.kind) {
      case NodeKind::constant: vals[i] = detail::make_constant<S>(n.num); break;
      case NodeKind::time_var: vals[i] = state.t; break;
      case NodeKind::state_var: vals[i] = state.y[static_cast<std::size_t>(n.index - 1)]; break;
      case NodeKind::lag_var:
        vals[i] = state.lag[static_cast<std::size_t>(be.lag_slot_of_node[i])];
        break;
      case NodeKind::param_ref:
        vals[i] = system_params[static_cast<std::size_t>(be.param_index[i])];
        break;
      case NodeKind::neg: vals[i] = -vals[n.a]; break;
      case NodeKind::add: vals[i] = vals[n.a] + vals[n.b]; break;
      case NodeKind::sub: vals[i] = vals[n.a] - vals[n.b]; break;
      case NodeKind::mul: vals[i] = vals[n.a] * vals[n.b]; break;
      case NodeKind::div: vals[i] = detail::checked_div(vals[n.a], vals[n.b]); break;
      case NodeKind::pow_int: vals[i] = detail::pow_int_s(vals[n.a], n.index); break;
      case NodeKind::call:
        switch (n.fn) {
          case FnKind::sin: vals[i] = sin(vals[n.a]); break;
          case FnKind::cos: vals[i] = cos(vals[n.a]); break;
          case FnKind::exp: vals[i] = exp(vals[n.a]); break;
          case FnKind::tanh: vals[i] = tanh(vals[n.a]); break;
        }
        break;
    }
  }
  return vals[static_cast<std::size_t>(be.ast.root)];
}

/// Evaluates an expression of t only (histories) along with d/dt, via a local
/// dual number. Throws UnboundIdentifier if the expression references state,
/// lags, or parameters.
std::pair<double, double> eval_time_expr(const ExprAst& ast, double t);

}  // namespace expr
}  // namespace ndde
