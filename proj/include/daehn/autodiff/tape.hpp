#pragma once

// Scalar reverse-mode tape.
//
// Every arithmetic operation on a tape-backed Var appends one node holding at
// most two operand indices together with the local partial derivatives. The
// tape is append-only, so operand indices are always smaller than the node's
// own index and a single backward sweep visits each node once.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace daehn::ad {

/// Raised when a traced computation leaves the domain of a primitive
/// (sqrt/log of a negative argument, division by zero).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

class Tape;

class Var {
 public:
  Var() = default;
  Var(double constant) : value_(constant) {}  // NOLINT: implicit constants

  double value() const { return value_; }
  int index() const { return index_; }
  Tape* tape() const { return tape_; }
  bool is_constant() const { return tape_ == nullptr; }

 private:
  friend class Tape;
  Var(double v, int index, Tape* tape) : value_(v), index_(index), tape_(tape) {}

  double value_ = 0.0;
  int index_ = -1;
  Tape* tape_ = nullptr;
};

struct TapeNode {
  int lhs = -1;
  int rhs = -1;
  double d_lhs = 0.0;
  double d_rhs = 0.0;
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// New independent leaf.
  Var variable(double value) {
    nodes_.push_back({});
    values_.push_back(value);
    return Var(value, static_cast<int>(nodes_.size() - 1), this);
  }

  Var unary(const Var& a, double value, double da) {
    if (a.is_constant()) return Var(value);
    nodes_.push_back({a.index_, -1, da, 0.0});
    values_.push_back(value);
    return Var(value, static_cast<int>(nodes_.size() - 1), this);
  }

  Var binary(const Var& a, const Var& b, double value, double da, double db) {
    if (a.is_constant()) return unary(b, value, db);
    if (b.is_constant()) return unary(a, value, da);
    nodes_.push_back({a.index_, b.index_, da, db});
    values_.push_back(value);
    return Var(value, static_cast<int>(nodes_.size() - 1), this);
  }

  std::size_t size() const { return nodes_.size(); }
  double value(std::size_t node) const { return values_[node]; }
  const TapeNode& node(std::size_t i) const { return nodes_[i]; }

  /// Adjoint of `output` with respect to every node on the tape.
  std::vector<double> adjoints(const Var& output) const {
    std::vector<double> adj(nodes_.size(), 0.0);
    if (output.is_constant()) return adj;
    sweep(output.index_, 1.0, adj);
    return adj;
  }

  /// Reverse sweep seeded with `seed` at node `output`, accumulating into
  /// `adj` (which must be tape-sized). Nodes above `output` are untouched.
  void sweep(int output, double seed, std::vector<double>& adj) const {
    if (output < 0) return;
    adj[static_cast<std::size_t>(output)] += seed;
    for (int i = output; i >= 0; --i) {
      const double a = adj[static_cast<std::size_t>(i)];
      if (a == 0.0) continue;
      const TapeNode& n = nodes_[static_cast<std::size_t>(i)];
      if (n.lhs >= 0) adj[static_cast<std::size_t>(n.lhs)] += a * n.d_lhs;
      if (n.rhs >= 0) adj[static_cast<std::size_t>(n.rhs)] += a * n.d_rhs;
    }
  }

  /// Sweep seeded at several outputs at once; `seeds[i]` pairs with `outputs[i]`.
  std::vector<double> adjoints(std::span<const Var> outputs, std::span<const double> seeds) const {
    std::vector<double> adj(nodes_.size(), 0.0);
    int top = -1;
    for (std::size_t i = 0; i < outputs.size(); ++i) {
      if (outputs[i].is_constant()) continue;
      adj[static_cast<std::size_t>(outputs[i].index_)] += seeds[i];
      top = std::max(top, outputs[i].index_);
    }
    for (int i = top; i >= 0; --i) {
      const double a = adj[static_cast<std::size_t>(i)];
      if (a == 0.0) continue;
      const TapeNode& n = nodes_[static_cast<std::size_t>(i)];
      if (n.lhs >= 0) adj[static_cast<std::size_t>(n.lhs)] += a * n.d_lhs;
      if (n.rhs >= 0) adj[static_cast<std::size_t>(n.rhs)] += a * n.d_rhs;
    }
    return adj;
  }

  /// Drops all nodes but keeps the allocation, so per-point tapes can be reused.
  void clear() {
    nodes_.clear();
    values_.clear();
  }

 private:
  std::vector<TapeNode> nodes_;
  std::vector<double> values_;
};

namespace detail {
inline Tape* tape_of(const Var& a, const Var& b) { return a.tape() ? a.tape() : b.tape(); }
}  // namespace detail

inline Var operator+(const Var& a, const Var& b) {
  Tape* t = detail::tape_of(a, b);
  if (!t) return Var(a.value() + b.value());
  return t->binary(a, b, a.value() + b.value(), 1.0, 1.0);
}
inline Var operator-(const Var& a, const Var& b) {
  Tape* t = detail::tape_of(a, b);
  if (!t) return Var(a.value() - b.value());
  return t->binary(a, b, a.value() - b.value(), 1.0, -1.0);
}
inline Var operator*(const Var& a, const Var& b) {
  Tape* t = detail::tape_of(a, b);
  if (!t) return Var(a.value() * b.value());
  return t->binary(a, b, a.value() * b.value(), b.value(), a.value());
}
inline Var operator/(const Var& a, const Var& b) {
  if (b.value() == 0.0) throw DomainError("division by zero");
  Tape* t = detail::tape_of(a, b);
  const double q = a.value() / b.value();
  if (!t) return Var(q);
  return t->binary(a, b, q, 1.0 / b.value(), -q / b.value());
}
inline Var operator-(const Var& a) {
  if (a.is_constant()) return Var(-a.value());
  return a.tape()->unary(a, -a.value(), -1.0);
}

inline Var operator+(const Var& a, double b) { return a + Var(b); }
inline Var operator+(double a, const Var& b) { return Var(a) + b; }
inline Var operator-(const Var& a, double b) { return a - Var(b); }
inline Var operator-(double a, const Var& b) { return Var(a) - b; }
inline Var operator*(const Var& a, double b) { return a * Var(b); }
inline Var operator*(double a, const Var& b) { return Var(a) * b; }
inline Var operator/(const Var& a, double b) { return a / Var(b); }
inline Var operator/(double a, const Var& b) { return Var(a) / b; }

inline Var& operator+=(Var& a, const Var& b) { return a = a + b; }
inline Var& operator-=(Var& a, const Var& b) { return a = a - b; }
inline Var& operator*=(Var& a, const Var& b) { return a = a * b; }
inline Var& operator/=(Var& a, const Var& b) { return a = a / b; }

inline bool operator<(const Var& a, const Var& b) { return a.value() < b.value(); }
inline bool operator>(const Var& a, const Var& b) { return a.value() > b.value(); }

namespace detail {
inline Var apply(const Var& a, double value, double da) {
  if (a.is_constant()) return Var(value);
  return a.tape()->unary(a, value, da);
}
}  // namespace detail

inline Var exp(const Var& a) {
  const double e = std::exp(a.value());
  return detail::apply(a, e, e);
}
inline Var log(const Var& a) {
  if (!(a.value() > 0.0)) throw DomainError("log of non-positive argument");
  return detail::apply(a, std::log(a.value()), 1.0 / a.value());
}
inline Var sin(const Var& a) { return detail::apply(a, std::sin(a.value()), std::cos(a.value())); }
inline Var cos(const Var& a) { return detail::apply(a, std::cos(a.value()), -std::sin(a.value())); }
inline Var sqrt(const Var& a) {
  if (a.value() < 0.0) throw DomainError("sqrt of negative argument");
  const double s = std::sqrt(a.value());
  if (s == 0.0) {
    if (a.is_constant()) return Var(0.0);
    throw DomainError("sqrt derivative undefined at zero");
  }
  return detail::apply(a, s, 0.5 / s);
}
inline Var tanh(const Var& a) {
  const double t = std::tanh(a.value());
  return detail::apply(a, t, 1.0 - t * t);
}
inline Var pow(const Var& a, int n) {
  if (n == 0) return Var(1.0);
  if (n < 0 && a.value() == 0.0) throw DomainError("negative power of zero");
  const double v = std::pow(a.value(), n);
  return detail::apply(a, v, n * std::pow(a.value(), n - 1));
}
inline Var softplus(const Var& a) {
  const double x = a.value();
  const double v = x > 30.0 ? x : std::log1p(std::exp(x));
  return detail::apply(a, v, 1.0 / (1.0 + std::exp(-x)));
}

inline double value_of(double x) { return x; }
inline double value_of(const Var& x) { return x.value(); }

/// Result of tracing a program: the tape plus the leaf and result handles.
struct Trace {
  std::unique_ptr<Tape> tape;
  std::vector<Var> inputs;
  std::vector<Var> outputs;

  /// d outputs[k] / d inputs, zero for inputs the output never reached.
  std::vector<double> gradient(std::size_t k) const {
    const auto adj = tape->adjoints(outputs.at(k));
    std::vector<double> g(inputs.size(), 0.0);
    for (std::size_t i = 0; i < inputs.size(); ++i) g[i] = adj[static_cast<std::size_t>(inputs[i].index())];
    return g;
  }
};

/// Runs `program(std::span<const Var>) -> std::vector<Var>` on a fresh tape.
template <class Program>
Trace trace(Program&& program, std::span<const double> inputs) {
  Trace t;
  t.tape = std::make_unique<Tape>();
  t.inputs.reserve(inputs.size());
  for (double x : inputs) t.inputs.push_back(t.tape->variable(x));
  t.outputs = program(std::span<const Var>(t.inputs));
  return t;
}

}  // namespace daehn::ad
