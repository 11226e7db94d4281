#pragma once

// Immutable expression trees for constraint residuals.
//
// Expressions are built with ordinary C++ operators over leaf handles
// (input(i), output(p), deriv(q), ...). Construction folds constants and drops
// additive/multiplicative identities; nothing else is simplified.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "daehn/autodiff/dual2.hpp"
#include "daehn/autodiff/tape.hpp"

namespace daehn::sym {

enum class LeafKind : std::uint8_t {
  Input,     // x_i and t
  Output,    // y_p
  Deriv,     // algebraized derivative variable d_q
  Mult,      // multipliers and slacks
  Param,     // learnable physical parameter
  Neighbor,  // backbone evaluation y_p([x,t] + delta e_axis), index p * num_axes + axis
  Backbone,  // unconstrained backbone prediction yhat_p
};

const char* leaf_name(LeafKind kind);

struct LeafId {
  LeafKind kind;
  std::size_t index;
  friend bool operator==(const LeafId&, const LeafId&) = default;
};

enum class Op : std::uint8_t {
  Const, Leaf, Add, Sub, Mul, Div, Neg, Pow, Exp, Log, Sin, Cos, Sqrt, Tanh,
  Fb,    // Fischer-Burmeister a + b - sqrt(a^2 + b^2)
  FbDa,  // d Fb / d a
  FbDb,  // d Fb / d b
};

struct Node;

class Expr {
 public:
  Expr() : Expr(0.0) {}
  Expr(double constant);  // NOLINT: implicit constants keep builder code readable

  Op op() const;
  bool is_constant() const { return op() == Op::Const; }
  bool is_zero() const;
  double constant_value() const;
  const Node& node() const { return *node_; }

  static Expr make(Node node);

 private:
  explicit Expr(std::shared_ptr<const Node> n) : node_(std::move(n)) {}
  std::shared_ptr<const Node> node_;
};

struct Node {
  Op op = Op::Const;
  double value = 0.0;
  LeafKind leaf = LeafKind::Input;
  std::size_t index = 0;
  int exponent = 0;
  std::vector<Expr> args;
};

Expr constant(double c);
Expr leaf(LeafKind kind, std::size_t index);
inline Expr input(std::size_t i) { return leaf(LeafKind::Input, i); }
inline Expr output(std::size_t p) { return leaf(LeafKind::Output, p); }
inline Expr deriv(std::size_t q) { return leaf(LeafKind::Deriv, q); }
inline Expr mult(std::size_t k) { return leaf(LeafKind::Mult, k); }
inline Expr param(std::size_t r) { return leaf(LeafKind::Param, r); }
inline Expr neighbor(std::size_t i) { return leaf(LeafKind::Neighbor, i); }
inline Expr backbone(std::size_t p) { return leaf(LeafKind::Backbone, p); }

Expr operator+(const Expr& a, const Expr& b);
Expr operator-(const Expr& a, const Expr& b);
Expr operator*(const Expr& a, const Expr& b);
Expr operator/(const Expr& a, const Expr& b);
Expr operator-(const Expr& a);
inline Expr operator+(const Expr& a, double b) { return a + Expr(b); }
inline Expr operator+(double a, const Expr& b) { return Expr(a) + b; }
inline Expr operator-(const Expr& a, double b) { return a - Expr(b); }
inline Expr operator-(double a, const Expr& b) { return Expr(a) - b; }
inline Expr operator*(const Expr& a, double b) { return a * Expr(b); }
inline Expr operator*(double a, const Expr& b) { return Expr(a) * b; }
inline Expr operator/(const Expr& a, double b) { return a / Expr(b); }
inline Expr operator/(double a, const Expr& b) { return Expr(a) / b; }
inline Expr& operator+=(Expr& a, const Expr& b) { return a = a + b; }
inline Expr& operator-=(Expr& a, const Expr& b) { return a = a - b; }

Expr pow(const Expr& a, int n);
Expr exp(const Expr& a);
Expr log(const Expr& a);
Expr sin(const Expr& a);
Expr cos(const Expr& a);
Expr sqrt(const Expr& a);
Expr tanh(const Expr& a);
Expr fischer_burmeister(const Expr& a, const Expr& b);

/// Symbolic partial derivative with respect to one leaf.
Expr differentiate(const Expr& e, LeafId wrt);

/// Every distinct leaf referenced by `e`, in first-visit order.
std::vector<LeafId> leaves(const Expr& e);

std::string to_string(const Expr& e);

/// Scalar Fischer-Burmeister function a + b - sqrt(a^2 + b^2).
double fischer_burmeister(double a, double b);

/// Leaf values for evaluation. Spans left empty mean "not bound".
template <class T>
struct Bindings {
  std::span<const T> inputs;
  std::span<const T> outputs;
  std::span<const T> derivs;
  std::span<const T> mults;
  std::span<const T> params;
  std::span<const T> neighbors;
  std::span<const T> backbone;

  const T& get(LeafKind kind, std::size_t index) const {
    std::span<const T> s;
    switch (kind) {
      case LeafKind::Input: s = inputs; break;
      case LeafKind::Output: s = outputs; break;
      case LeafKind::Deriv: s = derivs; break;
      case LeafKind::Mult: s = mults; break;
      case LeafKind::Param: s = params; break;
      case LeafKind::Neighbor: s = neighbors; break;
      case LeafKind::Backbone: s = backbone; break;
    }
    if (index >= s.size())
      throw std::out_of_range(std::string("unbound leaf ") + leaf_name(kind) + "[" + std::to_string(index) + "]");
    return s[index];
  }
};

namespace detail {

inline constexpr double kFbOriginSlope = 1.0 - 0.70710678118654752440;

template <class T>
T checked_div(const T& a, const T& b) {
  using ad::value_of;
  if (value_of(b) == 0.0) throw ad::DomainError("division by zero");
  return a / b;
}
template <class T>
T checked_sqrt(const T& a) {
  using ad::value_of;
  using std::sqrt;
  if (value_of(a) < 0.0) throw ad::DomainError("sqrt of negative argument");
  return sqrt(a);
}
template <class T>
T checked_log(const T& a) {
  using ad::value_of;
  using std::log;
  if (!(value_of(a) > 0.0)) throw ad::DomainError("log of non-positive argument");
  return log(a);
}
template <class T>
T int_pow(const T& a, int n) {
  using ad::value_of;
  if (n < 0) {
    if (value_of(a) == 0.0) throw ad::DomainError("negative power of zero");
    return T(1.0) / int_pow(a, -n);
  }
  T r(1.0);
  for (int i = 0; i < n; ++i) r = r * a;
  return r;
}

// The generalized gradient at the origin is taken as (1 - 1/sqrt2, 1 - 1/sqrt2).
template <class T>
T fb(const T& a, const T& b) {
  using ad::value_of;
  using std::sqrt;
  const double va = value_of(a), vb = value_of(b);
  if (va * va + vb * vb == 0.0) return kFbOriginSlope * a + kFbOriginSlope * b;
  return a + b - sqrt(a * a + b * b);
}
template <class T>
T fb_da(const T& a, const T& b) {
  using ad::value_of;
  using std::sqrt;
  const double va = value_of(a), vb = value_of(b);
  if (va * va + vb * vb == 0.0) return T(kFbOriginSlope);
  return 1.0 - a / sqrt(a * a + b * b);
}

template <class T>
T apply_unary(Op op, const T& a, int exponent) {
  using std::cos;
  using std::exp;
  using std::sin;
  using std::tanh;
  switch (op) {
    case Op::Neg: return -a;
    case Op::Pow: return int_pow(a, exponent);
    case Op::Exp: return exp(a);
    case Op::Log: return checked_log(a);
    case Op::Sin: return sin(a);
    case Op::Cos: return cos(a);
    case Op::Sqrt: return checked_sqrt(a);
    case Op::Tanh: return tanh(a);
    default: throw std::logic_error("not a unary op");
  }
}

template <class T>
T apply_binary(Op op, const T& a, const T& b) {
  switch (op) {
    case Op::Add: return a + b;
    case Op::Sub: return a - b;
    case Op::Mul: return a * b;
    case Op::Div: return checked_div(a, b);
    case Op::Fb: return fb(a, b);
    case Op::FbDa: return fb_da(a, b);
    case Op::FbDb: return fb_da(b, a);
    default: throw std::logic_error("not a binary op");
  }
}

}  // namespace detail

/// Direct recursive evaluation.
template <class T>
T eval(const Expr& e, const Bindings<T>& b) {
  const Node& n = e.node();
  switch (n.op) {
    case Op::Const: return T(n.value);
    case Op::Leaf: return b.get(n.leaf, n.index);
    case Op::Add:
    case Op::Sub:
    case Op::Mul:
    case Op::Div:
    case Op::Fb:
    case Op::FbDa:
    case Op::FbDb:
      return detail::apply_binary(n.op, eval(n.args[0], b), eval(n.args[1], b));
    default:
      return detail::apply_unary(n.op, eval(n.args[0], b), n.exponent);
  }
}

/// Flattened postfix form of an expression for repeated evaluation.
class Program {
 public:
  Program() = default;
  explicit Program(const Expr& e);

  template <class T>
  T eval(const Bindings<T>& b, std::vector<T>& stack) const {
    stack.clear();
    for (const Instr& in : code_) {
      switch (in.op) {
        case Op::Const: stack.push_back(T(in.value)); break;
        case Op::Leaf: stack.push_back(b.get(in.leaf, in.index)); break;
        case Op::Add:
        case Op::Sub:
        case Op::Mul:
        case Op::Div:
        case Op::Fb:
        case Op::FbDa:
        case Op::FbDb: {
          T rhs = std::move(stack.back());
          stack.pop_back();
          stack.back() = detail::apply_binary(in.op, stack.back(), rhs);
          break;
        }
        default: stack.back() = detail::apply_unary(in.op, stack.back(), in.exponent); break;
      }
    }
    return stack.back();
  }

  template <class T>
  T eval(const Bindings<T>& b) const {
    std::vector<T> stack;
    stack.reserve(max_depth_);
    return eval(b, stack);
  }

  std::size_t size() const { return code_.size(); }

 private:
  struct Instr {
    Op op;
    LeafKind leaf;
    int exponent;
    std::size_t index;
    double value;
  };
  void emit(const Expr& e, std::size_t depth);

  std::vector<Instr> code_;
  std::size_t max_depth_ = 0;
};

}  // namespace daehn::sym
