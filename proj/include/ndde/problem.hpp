#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "ndde/autodiff.hpp"
#include "ndde/expr.hpp"

namespace ndde {

/// A named delay tau appearing as y_k(t - tau) somewhere in the system.
struct DelayParam {
  std::string name;
  double value = 0.0;      // the true/declared value
  bool trainable = false;  // estimated from data in inverse mode
};

struct SystemParam {
  std::string name;
  double value = 0.0;
  bool trainable = false;
};

/// History function phi_j on [-history_bound, 0]: a constant or an
/// expression of t.
struct HistoryFn {
  static HistoryFn constant(double c);
  static HistoryFn expression(const std::string& source);

  bool is_constant = true;
  double c = 0.0;
  std::string source;  // original DSL text (empty for constants)
  expr::ExprAst ast;

  double value(double s) const;
  double derivative(double s) const;
};

/// Declarative statement of a DDE system on [0, horizon]:
///   y_j'(t) = f_j(t, y_1..y_n, lagged values),  y_j(s) = phi_j(s) for s <= 0.
/// Lag usages in equation j resolve through lag_matrix (the default delay for
/// component k in equation j) or through an explicit delay name in the DSL.
struct DdeProblemSpec {
  std::string name;
  int n = 0;
  std::vector<std::string> rhs_source;
  std::vector<expr::ExprAst> rhs;
  std::vector<DelayParam> delays;
  std::vector<int> lag_matrix;  // n*n entries, delay index or -1; slot (k,j) at (k-1)*n + (j-1)
  std::vector<HistoryFn> history;
  std::vector<SystemParam> system_params;
  double horizon = 0.0;
  double history_bound = 0.0;  // bound on how far back histories are evaluable; defaults to horizon

  int lag_matrix_at(int k, int j) const { return lag_matrix[static_cast<std::size_t>((k - 1) * n + (j - 1))]; }
  int delay_index(const std::string& dname) const;
  int system_param_index(const std::string& pname) const;
  double max_used_delay() const;

  /// Checks every structural invariant (delays >= 0, histories evaluable,
  /// expressions bindable); throws ConfigError on violation.
  void validate() const;
};

struct RegistryOptions {
  std::optional<double> tau;                    // linear_decay / hutchinson delay override
  std::optional<std::vector<double>> delays;    // triple_system delay overrides (4 values)
};

/// The benchmark problems: linear_decay, hutchinson, triple_system,
/// sir_delay. Throws UnknownProblem otherwise.
DdeProblemSpec registry_get(const std::string& name, const RegistryOptions& opt = {});

std::vector<std::string> registry_names();

/// Problem description from a JSON document; fields mirror DdeProblemSpec
/// with RHS and non-constant histories given as DSL strings.
DdeProblemSpec load_problem_json_text(const std::string& text);
DdeProblemSpec load_problem_json_file(const std::string& path);

/// phi_j(s) for s in [-history_bound, 0]; j is 1-based.
double history_eval(const DdeProblemSpec& spec, int j, double s);

/// Evaluates component k at a time (already on the tape); used for the
/// network branch of delayed lookups and injectable in tests.
using ComponentEvaluator = std::function<ad::TScalar(int component, const ad::TScalar& s)>;

/// y_k(t - tau) with gradients: network branch for t - tau > 0, history
/// branch for t - tau <= 0. In the history branch a constant phi contributes
/// no gradient; an expression phi keeps the chain through s = t - tau.
ad::TScalar delayed_lookup(const DdeProblemSpec& spec, const ComponentEvaluator& evaluator, int k,
                           const ad::TScalar& t, const ad::TScalar& tau, ad::Tape& tape);

}  // namespace ndde
