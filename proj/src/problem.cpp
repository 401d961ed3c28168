#include "ndde/problem.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace ndde {

using nlohmann::json;

HistoryFn HistoryFn::constant(double c) {
  HistoryFn h;
  h.is_constant = true;
  h.c = c;
  return h;
}

HistoryFn HistoryFn::expression(const std::string& source) {
  HistoryFn h;
  h.is_constant = false;
  h.source = source;
  h.ast = expr::parse(source);
  return h;
}

double HistoryFn::value(double s) const {
  return is_constant ? c : expr::eval_time_expr(ast, s).first;
}

double HistoryFn::derivative(double s) const {
  return is_constant ? 0.0 : expr::eval_time_expr(ast, s).second;
}

int DdeProblemSpec::delay_index(const std::string& dname) const {
  for (std::size_t i = 0; i < delays.size(); ++i)
    if (delays[i].name == dname) return static_cast<int>(i);
  return -1;
}

int DdeProblemSpec::system_param_index(const std::string& pname) const {
  for (std::size_t i = 0; i < system_params.size(); ++i)
    if (system_params[i].name == pname) return static_cast<int>(i);
  return -1;
}

double DdeProblemSpec::max_used_delay() const {
  double m = 0.0;
  for (const auto& d : delays) m = std::max(m, d.value);
  return m;
}

void DdeProblemSpec::validate() const {
  if (n < 1) throw ConfigError("n must be >= 1");
  if (horizon <= 0.0) throw ConfigError("horizon must be > 0");
  if (history_bound <= 0.0) throw ConfigError("history_bound must be > 0");
  if (static_cast<int>(rhs.size()) != n) throw ConfigError("need one RHS per component");
  if (static_cast<int>(history.size()) != n) throw ConfigError("need one history per component");
  if (static_cast<int>(lag_matrix.size()) != n * n) throw ConfigError("lag matrix must be n*n");
  for (const auto& d : delays) {
    if (d.value < 0.0) throw ConfigError("delay " + d.name + " must be >= 0");
  }
  if (max_used_delay() > history_bound)
    throw ConfigError("history_bound smaller than the largest delay");
  for (int idx : lag_matrix) {
    if (idx < -1 || idx >= static_cast<int>(delays.size()))
      throw ConfigError("lag matrix references an unknown delay");
  }
  // Every equation must bind, and histories must be evaluable on the interval.
  for (int j = 1; j <= n; ++j) {
    expr::bind(rhs[static_cast<std::size_t>(j - 1)], *this, j);
    for (double s : {-history_bound, -0.5 * history_bound, 0.0}) {
      double v = history[static_cast<std::size_t>(j - 1)].value(s);
      if (!std::isfinite(v))
        throw ConfigError("history " + std::to_string(j) + " not finite at s=" + std::to_string(s));
    }
  }
}

namespace {

DdeProblemSpec make_linear_decay(double tau) {
  DdeProblemSpec p;
  p.name = "linear_decay";
  p.n = 1;
  p.rhs_source = {"-ylag(1)"};
  p.delays = {{"tau", tau, true}};
  p.lag_matrix = {0};
  p.history = {HistoryFn::constant(1.0)};
  p.horizon = 10.0;
  p.history_bound = 10.0;
  return p;
}

DdeProblemSpec make_hutchinson(double tau) {
  DdeProblemSpec p;
  p.name = "hutchinson";
  p.n = 1;
  p.rhs_source = {"a*y(1) - b*y(1)*ylag(1)"};
  p.delays = {{"tau", tau, true}};
  p.system_params = {{"a", 0.6, true}, {"b", 0.006, true}};
  p.lag_matrix = {0};
  p.history = {HistoryFn::constant(1.0)};
  // Horizon covers the paper's data points up to t = 20.
  p.horizon = 20.0;
  p.history_bound = 20.0;
  return p;
}

DdeProblemSpec make_triple_system(const std::vector<double>& taus) {
  DdeProblemSpec p;
  p.name = "triple_system";
  p.n = 3;
  p.rhs_source = {"ylag(1)", "ylag(1)*ylag(2)", "ylag(2)"};
  p.delays = {{"tau1", taus[0], true}, {"tau2", taus[1], true}, {"tau3", taus[2], true},
              {"tau4", taus[3], true}};
  // (k,j) defaults: tau1 lags y1 in eq 1, tau2 lags y1 in eq 2,
  // tau3 lags y2 in eq 2, tau4 lags y2 in eq 3.
  p.lag_matrix.assign(9, -1);
  p.lag_matrix[(1 - 1) * 3 + (1 - 1)] = 0;
  p.lag_matrix[(1 - 1) * 3 + (2 - 1)] = 1;
  p.lag_matrix[(2 - 1) * 3 + (2 - 1)] = 2;
  p.lag_matrix[(2 - 1) * 3 + (3 - 1)] = 3;
  p.history = {HistoryFn::constant(1.0), HistoryFn::constant(1.0), HistoryFn::constant(1.0)};
  p.horizon = 1.0;
  p.history_bound = 1.0;
  return p;
}

DdeProblemSpec make_sir_delay() {
  DdeProblemSpec p;
  p.name = "sir_delay";
  p.n = 3;  // components: 1 = S, 2 = I, 3 = R
  p.rhs_source = {"-beta*y(1)*ylag(2, tau2) + gamma*ylag(2, tau1)",
                  "beta*y(1)*ylag(2, tau2) - alpha*y(2)",
                  "alpha*y(2) - gamma*ylag(2, tau1)"};
  p.delays = {{"tau1", 4.0, true}, {"tau2", 2.0, true}};
  p.system_params = {{"alpha", 0.7, false}, {"beta", 0.3, false}, {"gamma", 0.1, false}};
  // Equation 1 lags component 2 with two different delays, so there is no
  // unambiguous matrix default; the RHS names its delays explicitly.
  p.lag_matrix.assign(9, -1);
  p.lag_matrix[(2 - 1) * 3 + (2 - 1)] = 1;  // I(t - tau2) in the I equation
  p.lag_matrix[(2 - 1) * 3 + (3 - 1)] = 0;  // I(t - tau1) in the R equation
  p.history = {HistoryFn::constant(5.0), HistoryFn::constant(1.0), HistoryFn::constant(0.0)};
  p.horizon = 10.0;
  p.history_bound = 10.0;
  return p;
}

void finalize(DdeProblemSpec& p) {
  p.rhs.clear();
  p.rhs.reserve(p.rhs_source.size());
  for (const auto& s : p.rhs_source) p.rhs.push_back(expr::parse(s));
  p.validate();
}

}  // namespace

std::vector<std::string> registry_names() {
  return {"linear_decay", "hutchinson", "triple_system", "sir_delay"};
}

DdeProblemSpec registry_get(const std::string& name, const RegistryOptions& opt) {
  DdeProblemSpec p;
  if (name == "linear_decay") {
    p = make_linear_decay(opt.tau.value_or(1.0));
  } else if (name == "hutchinson") {
    p = make_hutchinson(opt.tau.value_or(0.5));
  } else if (name == "triple_system") {
    std::vector<double> taus = opt.delays.value_or(std::vector<double>{0.2, 0.3, 0.4, 0.5});
    if (taus.size() != 4) throw ConfigError("triple_system takes exactly 4 delays");
    p = make_triple_system(taus);
  } else if (name == "sir_delay") {
    p = make_sir_delay();
  } else {
    throw UnknownProblem(name);
  }
  finalize(p);
  return p;
}

double history_eval(const DdeProblemSpec& spec, int j, double s) {
  if (s > 0.0 || s < -spec.history_bound) throw OutOfHistoryRange(s, spec.history_bound);
  return spec.history[static_cast<std::size_t>(j - 1)].value(s);
}

ad::TScalar delayed_lookup(const DdeProblemSpec& spec, const ComponentEvaluator& evaluator, int k,
                           const ad::TScalar& t, const ad::TScalar& tau, ad::Tape& tape) {
  ad::TScalar s = t - tau;
  if (s.value() > 0.0) return evaluator(k, s);

  if (s.value() < -spec.history_bound) throw OutOfHistoryRange(s.value(), spec.history_bound);
  const HistoryFn& phi = spec.history[static_cast<std::size_t>(k - 1)];
  if (phi.is_constant) return ad::TScalar::constant(phi.c);

  // Non-constant history: evaluate phi over the taped s so the tangent and
  // the gradient through s = t - tau survive.
  expr::BoundExpr be;
  be.ast = phi.ast;
  be.param_index.assign(phi.ast.nodes.size(), -1);
  be.lag_slot_of_node.assign(phi.ast.nodes.size(), -1);
  expr::DelayedState<ad::TScalar> st;
  st.t = s;
  return expr::eval<ad::TScalar>(be, st, {});
}

DdeProblemSpec load_problem_json_text(const std::string& text) {
  json doc = json::parse(text);
  DdeProblemSpec p;
  p.name = doc.value("name", "custom");
  p.n = doc.at("n").get<int>();
  p.horizon = doc.at("horizon").get<double>();
  p.history_bound = doc.value("history_bound", p.horizon);

  for (const auto& r : doc.at("rhs")) p.rhs_source.push_back(r.get<std::string>());

  if (doc.contains("delays")) {
    for (const auto& d : doc.at("delays")) {
      DelayParam dp;
      dp.name = d.at("name").get<std::string>();
      dp.value = d.at("value").get<double>();
      dp.trainable = d.value("trainable", false);
      p.delays.push_back(dp);
    }
  }

  p.lag_matrix.assign(static_cast<std::size_t>(p.n) * static_cast<std::size_t>(p.n), -1);
  if (doc.contains("lag_defaults")) {
    for (const auto& e : doc.at("lag_defaults")) {
      int k = e.at("component").get<int>();
      int j = e.at("equation").get<int>();
      std::string dname = e.at("delay").get<std::string>();
      int idx = p.delay_index(dname);
      if (idx < 0) throw ConfigError("lag_defaults references unknown delay " + dname);
      if (k < 1 || k > p.n || j < 1 || j > p.n) throw ConfigError("lag_defaults index out of range");
      p.lag_matrix[static_cast<std::size_t>((k - 1) * p.n + (j - 1))] = idx;
    }
  }

  for (const auto& h : doc.at("history")) {
    if (h.is_number()) {
      p.history.push_back(HistoryFn::constant(h.get<double>()));
    } else {
      p.history.push_back(HistoryFn::expression(h.get<std::string>()));
    }
  }

  if (doc.contains("system_params")) {
    for (const auto& sp : doc.at("system_params")) {
      SystemParam s;
      s.name = sp.at("name").get<std::string>();
      s.value = sp.at("value").get<double>();
      s.trainable = sp.value("trainable", false);
      p.system_params.push_back(s);
    }
  }

  p.rhs.reserve(p.rhs_source.size());
  for (const auto& s : p.rhs_source) p.rhs.push_back(expr::parse(s));
  p.validate();
  return p;
}

DdeProblemSpec load_problem_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open problem file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return load_problem_json_text(ss.str());
}

}  // namespace ndde
