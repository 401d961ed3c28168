#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace ndde {

/// Base class for every error thrown by this library.
class NddeError : public std::runtime_error {
 public:
  explicit NddeError(const std::string& what) : std::runtime_error(what) {}
};

class DivisionByZero : public NddeError {
 public:
  explicit DivisionByZero(double denom)
      : NddeError("division by zero (|denominator| = " + std::to_string(denom) + " < 1e-300)") {}
};

class UnknownProblem : public NddeError {
 public:
  explicit UnknownProblem(const std::string& name) : NddeError("unknown problem: " + name) {}
};

class OutOfHistoryRange : public NddeError {
 public:
  OutOfHistoryRange(double s, double bound)
      : NddeError("history query at t = " + std::to_string(s) + " outside [-" +
                  std::to_string(bound) + ", 0]") {}
};

class SyntaxError : public NddeError {
 public:
  SyntaxError(const std::string& msg, std::size_t offset)
      : NddeError(msg + " (at byte " + std::to_string(offset) + ")"), offset(offset) {}
  std::size_t offset;
};

class UnknownFunction : public NddeError {
 public:
  explicit UnknownFunction(const std::string& name) : NddeError("unknown function: " + name) {}
};

class NonIntegerExponent : public NddeError {
 public:
  NonIntegerExponent() : NddeError("exponent must be an integer literal") {}
};

class UnboundIdentifier : public NddeError {
 public:
  explicit UnboundIdentifier(std::vector<std::string> names_)
      : NddeError(format(names_)), names(std::move(names_)) {}
  std::vector<std::string> names;

 private:
  static std::string format(const std::vector<std::string>& ns) {
    std::string s = "unbound identifier(s):";
    for (const auto& n : ns) s += " " + n;
    return s;
  }
};

class LagWithoutDelay : public NddeError {
 public:
  LagWithoutDelay(int k, int j)
      : NddeError("ylag(" + std::to_string(k) + ") in equation " + std::to_string(j) +
                  " has no associated delay"),
        component(k),
        equation(j) {}
  int component;
  int equation;
};

class NonFiniteGradient : public NddeError {
 public:
  explicit NonFiniteGradient(const std::string& where)
      : NddeError("non-finite gradient detected: " + where) {}
};

class StepSizeUnderflow : public NddeError {
 public:
  explicit StepSizeUnderflow(double t)
      : NddeError("integrator step size underflow near t = " + std::to_string(t)) {}
};

class NonFiniteState : public NddeError {
 public:
  explicit NonFiniteState(double t)
      : NddeError("non-finite state during integration near t = " + std::to_string(t)) {}
};

class OutOfRange : public NddeError {
 public:
  OutOfRange(double s, double lo, double hi)
      : NddeError("evaluation point " + std::to_string(s) + " outside [" + std::to_string(lo) +
                  ", " + std::to_string(hi) + "]") {}
};

class ZeroReferenceNorm : public NddeError {
 public:
  ZeroReferenceNorm() : NddeError("reference values have zero norm") {}
};

class InvalidGrid : public NddeError {
 public:
  explicit InvalidGrid(const std::string& msg) : NddeError("invalid grid: " + msg) {}
};

class GridMismatch : public NddeError {
 public:
  explicit GridMismatch(const std::string& msg) : NddeError("grid mismatch: " + msg) {}
};

class ConfigError : public NddeError {
 public:
  explicit ConfigError(const std::string& msg) : NddeError("config error: " + msg) {}
};

}  // namespace ndde
