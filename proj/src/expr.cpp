#include "ndde/expr.hpp"

#include <cctype>
#include <charconv>
#include <cstdio>
#include <set>

#include "ndde/problem.hpp"

namespace ndde::expr {

namespace {

struct Parser {
  const std::string& src;
  std::size_t pos = 0;
  ExprAst ast;

  explicit Parser(const std::string& s) : src(s) {}

  void skip_ws() {
    while (pos < src.size() && std::isspace(static_cast<unsigned char>(src[pos]))) ++pos;
  }

  bool eof() {
    skip_ws();
    return pos >= src.size();
  }

  char peek() {
    skip_ws();
    return pos < src.size() ? src[pos] : '\0';
  }

  bool accept(char c) {
    if (peek() == c) {
      ++pos;
      return true;
    }
    return false;
  }

  void expect(char c, const char* what) {
    if (!accept(c)) throw SyntaxError(std::string("expected '") + c + "' " + what, pos);
  }

  int push(ExprNode n) {
    ast.nodes.push_back(std::move(n));
    return static_cast<int>(ast.nodes.size()) - 1;
  }

  int parse_expr() {
    int lhs = parse_term();
    while (true) {
      if (accept('+')) {
        int rhs = parse_term();
        lhs = push({.kind = NodeKind::add, .a = lhs, .b = rhs});
      } else if (accept('-')) {
        int rhs = parse_term();
        lhs = push({.kind = NodeKind::sub, .a = lhs, .b = rhs});
      } else {
        return lhs;
      }
    }
  }

  int parse_term() {
    int lhs = parse_factor();
    while (true) {
      if (accept('*')) {
        int rhs = parse_factor();
        lhs = push({.kind = NodeKind::mul, .a = lhs, .b = rhs});
      } else if (accept('/')) {
        int rhs = parse_factor();
        lhs = push({.kind = NodeKind::div, .a = lhs, .b = rhs});
      } else {
        return lhs;
      }
    }
  }

  // factor := ['-'] atom ['^' integer]; '^' binds tighter than the minus.
  int parse_factor() {
    bool negated = accept('-');
    int a = parse_atom();
    if (accept('^')) {
      int k = parse_signed_integer();
      a = push({.kind = NodeKind::pow_int, .a = a, .index = k});
    }
    if (negated) a = push({.kind = NodeKind::neg, .a = a});
    return a;
  }

  int parse_signed_integer() {
    skip_ws();
    std::size_t start = pos;
    if (pos < src.size() && (src[pos] == '-' || src[pos] == '+')) ++pos;
    std::size_t digits = pos;
    while (pos < src.size() && std::isdigit(static_cast<unsigned char>(src[pos]))) ++pos;
    if (pos == digits) throw NonIntegerExponent();
    if (pos < src.size() && (src[pos] == '.' || src[pos] == 'e' || src[pos] == 'E'))
      throw NonIntegerExponent();
    int value = 0;
    auto res = std::from_chars(src.data() + start, src.data() + pos, value);
    if (res.ec != std::errc{}) throw SyntaxError("bad integer exponent", start);
    return value;
  }

  int parse_component_index() {
    skip_ws();
    std::size_t start = pos;
    while (pos < src.size() && std::isdigit(static_cast<unsigned char>(src[pos]))) ++pos;
    if (pos == start) throw SyntaxError("expected component index", pos);
    int value = 0;
    std::from_chars(src.data() + start, src.data() + pos, value);
    if (value < 1) throw SyntaxError("component indices are 1-based", start);
    return value;
  }

  int parse_atom() {
    skip_ws();
    if (pos >= src.size()) throw SyntaxError("unexpected end of input", pos);
    char c = src[pos];

    if (c == '(') {
      ++pos;
      int e = parse_expr();
      expect(')', "to close group");
      return e;
    }

    if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') return parse_number();

    if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
      std::size_t start = pos;
      while (pos < src.size() && (std::isalnum(static_cast<unsigned char>(src[pos])) || src[pos] == '_'))
        ++pos;
      std::string id = src.substr(start, pos - start);

      if (id == "t") return push({.kind = NodeKind::time_var});

      if (id == "y") {
        expect('(', "after 'y'");
        int k = parse_component_index();
        expect(')', "to close y(k)");
        return push({.kind = NodeKind::state_var, .index = k});
      }

      if (id == "ylag") {
        expect('(', "after 'ylag'");
        int k = parse_component_index();
        std::string label;
        if (accept(',')) {
          skip_ws();
          std::size_t lstart = pos;
          while (pos < src.size() &&
                 (std::isalnum(static_cast<unsigned char>(src[pos])) || src[pos] == '_'))
            ++pos;
          if (pos == lstart) throw SyntaxError("expected delay name after ','", pos);
          label = src.substr(lstart, pos - lstart);
        }
        expect(')', "to close ylag(...)");
        return push({.kind = NodeKind::lag_var, .index = k, .name = label});
      }

      if (peek() == '(') {
        FnKind fn;
        if (id == "sin") fn = FnKind::sin;
        else if (id == "cos") fn = FnKind::cos;
        else if (id == "exp") fn = FnKind::exp;
        else if (id == "tanh") fn = FnKind::tanh;
        else throw UnknownFunction(id);
        expect('(', "after function name");
        int e = parse_expr();
        expect(')', "to close call");
        return push({.kind = NodeKind::call, .fn = fn, .a = e});
      }

      return push({.kind = NodeKind::param_ref, .name = id});
    }

    throw SyntaxError(std::string("unexpected character '") + c + "'", pos);
  }

  int parse_number() {
    std::size_t start = pos;
    while (pos < src.size() && std::isdigit(static_cast<unsigned char>(src[pos]))) ++pos;
    if (pos < src.size() && src[pos] == '.') {
      ++pos;
      while (pos < src.size() && std::isdigit(static_cast<unsigned char>(src[pos]))) ++pos;
    }
    if (pos < src.size() && (src[pos] == 'e' || src[pos] == 'E')) {
      std::size_t mark = pos;
      ++pos;
      if (pos < src.size() && (src[pos] == '+' || src[pos] == '-')) ++pos;
      if (pos < src.size() && std::isdigit(static_cast<unsigned char>(src[pos]))) {
        while (pos < src.size() && std::isdigit(static_cast<unsigned char>(src[pos]))) ++pos;
      } else {
        pos = mark;  // 'e' belongs to something else
      }
    }
    double value = 0.0;
    auto res = std::from_chars(src.data() + start, src.data() + pos, value);
    if (res.ec != std::errc{} || res.ptr != src.data() + pos)
      throw SyntaxError("bad number literal", start);
    return push({.kind = NodeKind::constant, .num = value});
  }
};

void print_node(const ExprAst& ast, int id, std::string& out) {
  const ExprNode& n = ast.nodes[static_cast<std::size_t>(id)];
  char buf[32];
  switch (n.kind) {
    case NodeKind::constant:
      std::snprintf(buf, sizeof buf, "%.17g", n.num);
      out += buf;
      break;
    case NodeKind::time_var: out += "t"; break;
    case NodeKind::state_var: out += "y(" + std::to_string(n.index) + ")"; break;
    case NodeKind::lag_var:
      out += "ylag(" + std::to_string(n.index);
      if (!n.name.empty()) out += ", " + n.name;
      out += ")";
      break;
    case NodeKind::param_ref: out += n.name; break;
    case NodeKind::neg:
      out += "(-";
      print_node(ast, n.a, out);
      out += ")";
      break;
    case NodeKind::add:
    case NodeKind::sub:
    case NodeKind::mul:
    case NodeKind::div: {
      const char* op = n.kind == NodeKind::add   ? " + "
                       : n.kind == NodeKind::sub ? " - "
                       : n.kind == NodeKind::mul ? "*"
                                                 : "/";
      out += "(";
      print_node(ast, n.a, out);
      out += op;
      print_node(ast, n.b, out);
      out += ")";
      break;
    }
    case NodeKind::pow_int:
      out += "(";
      print_node(ast, n.a, out);
      out += "^" + std::to_string(n.index);
      out += ")";
      break;
    case NodeKind::call: {
      static const char* names[] = {"sin", "cos", "exp", "tanh"};
      out += names[static_cast<int>(n.fn)];
      out += "(";
      print_node(ast, n.a, out);
      out += ")";
      break;
    }
  }
}

}  // namespace

ExprAst parse(const std::string& source) {
  Parser p(source);
  int root = p.parse_expr();
  if (!p.eof()) throw SyntaxError("trailing input", p.pos);
  p.ast.root = root;
  return std::move(p.ast);
}

std::string print(const ExprAst& ast) {
  std::string out;
  if (!ast.empty()) print_node(ast, ast.root, out);
  return out;
}

bool structurally_equal(const ExprAst& a, const ExprAst& b) {
  std::function<bool(int, int)> eq = [&](int ia, int ib) {
    const ExprNode& x = a.nodes[static_cast<std::size_t>(ia)];
    const ExprNode& y = b.nodes[static_cast<std::size_t>(ib)];
    if (x.kind != y.kind) return false;
    switch (x.kind) {
      case NodeKind::constant:
        if (x.num != y.num) return false;
        break;
      case NodeKind::state_var:
        if (x.index != y.index) return false;
        break;
      case NodeKind::lag_var:
        if (x.index != y.index || x.name != y.name) return false;
        break;
      case NodeKind::param_ref:
        if (x.name != y.name) return false;
        break;
      case NodeKind::pow_int:
        if (x.index != y.index) return false;
        break;
      case NodeKind::call:
        if (x.fn != y.fn) return false;
        break;
      default: break;
    }
    if ((x.a >= 0) != (y.a >= 0) || (x.b >= 0) != (y.b >= 0)) return false;
    if (x.a >= 0 && !eq(x.a, y.a)) return false;
    if (x.b >= 0 && !eq(x.b, y.b)) return false;
    return true;
  };
  if (a.empty() || b.empty()) return a.empty() == b.empty();
  return eq(a.root, b.root);
}

BoundExpr bind(const ExprAst& ast, const DdeProblemSpec& spec, int equation) {
  BoundExpr be;
  be.ast = ast;
  be.equation = equation;
  be.param_index.assign(ast.nodes.size(), -1);
  be.lag_slot_of_node.assign(ast.nodes.size(), -1);

  std::set<std::string> unresolved;

  auto slot_for = [&](int component, int delay_index) {
    for (std::size_t s = 0; s < be.lag_slots.size(); ++s) {
      if (be.lag_slots[s].component == component && be.lag_slots[s].delay_index == delay_index)
        return static_cast<int>(s);
    }
    be.lag_slots.push_back(LagSlot{component, delay_index});
    return static_cast<int>(be.lag_slots.size()) - 1;
  };

  for (std::size_t i = 0; i < ast.nodes.size(); ++i) {
    const ExprNode& n = ast.nodes[i];
    switch (n.kind) {
      case NodeKind::param_ref: {
        int idx = spec.system_param_index(n.name);
        if (idx < 0) {
          unresolved.insert(n.name);
        } else {
          be.param_index[i] = idx;
        }
        break;
      }
      case NodeKind::state_var:
        if (n.index > spec.n) unresolved.insert("y(" + std::to_string(n.index) + ")");
        break;
      case NodeKind::lag_var: {
        if (n.index > spec.n) {
          unresolved.insert("ylag(" + std::to_string(n.index) + ")");
          break;
        }
        int delay_index;
        if (!n.name.empty()) {
          delay_index = spec.delay_index(n.name);
          if (delay_index < 0) {
            unresolved.insert(n.name);
            break;
          }
        } else {
          delay_index = spec.lag_matrix_at(n.index, equation);
          if (delay_index < 0) throw LagWithoutDelay(n.index, equation);
        }
        be.lag_slot_of_node[i] = slot_for(n.index, delay_index);
        break;
      }
      default: break;
    }
  }

  if (!unresolved.empty())
    throw UnboundIdentifier(std::vector<std::string>(unresolved.begin(), unresolved.end()));
  return be;
}

std::pair<double, double> eval_time_expr(const ExprAst& ast, double t) {
  std::vector<std::pair<double, double>> vals(ast.nodes.size());
  for (std::size_t i = 0; i < ast.nodes.size(); ++i) {
    const ExprNode& n = ast.nodes[i];
    auto& [v, d] = vals[i];
    switch (n.kind) {
      case NodeKind::constant: v = n.num; d = 0.0; break;
      case NodeKind::time_var: v = t; d = 1.0; break;
      case NodeKind::neg: v = -vals[n.a].first; d = -vals[n.a].second; break;
      case NodeKind::add:
        v = vals[n.a].first + vals[n.b].first;
        d = vals[n.a].second + vals[n.b].second;
        break;
      case NodeKind::sub:
        v = vals[n.a].first - vals[n.b].first;
        d = vals[n.a].second - vals[n.b].second;
        break;
      case NodeKind::mul:
        v = vals[n.a].first * vals[n.b].first;
        d = vals[n.a].second * vals[n.b].first + vals[n.a].first * vals[n.b].second;
        break;
      case NodeKind::div: {
        double bv = vals[n.b].first;
        v = detail::checked_div(vals[n.a].first, bv);
        d = (vals[n.a].second - v * vals[n.b].second) / bv;
        break;
      }
      case NodeKind::pow_int:
        v = detail::pow_int_s(vals[n.a].first, n.index);
        d = n.index == 0 ? 0.0
                         : static_cast<double>(n.index) *
                               detail::pow_int_s(vals[n.a].first, n.index - 1) * vals[n.a].second;
        break;
      case NodeKind::call: {
        double av = vals[n.a].first, ad_ = vals[n.a].second;
        switch (n.fn) {
          case FnKind::sin: v = std::sin(av); d = std::cos(av) * ad_; break;
          case FnKind::cos: v = std::cos(av); d = -std::sin(av) * ad_; break;
          case FnKind::exp: v = std::exp(av); d = v * ad_; break;
          case FnKind::tanh: v = std::tanh(av); d = (1.0 - v * v) * ad_; break;
        }
        break;
      }
      default:
        throw UnboundIdentifier({"history expressions may only reference t"});
    }
  }
  return vals[static_cast<std::size_t>(ast.root)];
}

}  // namespace ndde::expr
