#include "daehn/symbolic/expr.hpp"

#include <algorithm>
#include <sstream>

namespace daehn::sym {

namespace {

Expr make_unary(Op op, const Expr& a, int exponent = 0) {
  Node n;
  n.op = op;
  n.exponent = exponent;
  n.args = {a};
  return Expr::make(std::move(n));
}

Expr make_binary(Op op, const Expr& a, const Expr& b) {
  Node n;
  n.op = op;
  n.args = {a, b};
  return Expr::make(std::move(n));
}

bool is_const(const Expr& e, double v) { return e.is_constant() && e.constant_value() == v; }

}  // namespace

const char* leaf_name(LeafKind kind) {
  switch (kind) {
    case LeafKind::Input: return "input";
    case LeafKind::Output: return "output";
    case LeafKind::Deriv: return "deriv";
    case LeafKind::Mult: return "mult";
    case LeafKind::Param: return "param";
    case LeafKind::Neighbor: return "neighbor";
    case LeafKind::Backbone: return "backbone";
  }
  return "?";
}

Expr::Expr(double c) {
  Node n;
  n.op = Op::Const;
  n.value = c;
  node_ = std::make_shared<const Node>(std::move(n));
}

Expr Expr::make(Node node) { return Expr(std::make_shared<const Node>(std::move(node))); }

Op Expr::op() const { return node_->op; }
bool Expr::is_zero() const { return is_const(*this, 0.0); }
double Expr::constant_value() const {
  if (!is_constant()) throw std::logic_error("expression is not a constant");
  return node_->value;
}

Expr constant(double c) { return Expr(c); }

Expr leaf(LeafKind kind, std::size_t index) {
  Node n;
  n.op = Op::Leaf;
  n.leaf = kind;
  n.index = index;
  return Expr::make(std::move(n));
}

Expr operator+(const Expr& a, const Expr& b) {
  if (a.is_constant() && b.is_constant()) return a.constant_value() + b.constant_value();
  if (a.is_zero()) return b;
  if (b.is_zero()) return a;
  return make_binary(Op::Add, a, b);
}

Expr operator-(const Expr& a, const Expr& b) {
  if (a.is_constant() && b.is_constant()) return a.constant_value() - b.constant_value();
  if (b.is_zero()) return a;
  if (a.is_zero()) return -b;
  return make_binary(Op::Sub, a, b);
}

Expr operator*(const Expr& a, const Expr& b) {
  if (a.is_constant() && b.is_constant()) return a.constant_value() * b.constant_value();
  if (a.is_zero() || b.is_zero()) return 0.0;
  if (is_const(a, 1.0)) return b;
  if (is_const(b, 1.0)) return a;
  if (is_const(a, -1.0)) return -b;
  if (is_const(b, -1.0)) return -a;
  return make_binary(Op::Mul, a, b);
}

Expr operator/(const Expr& a, const Expr& b) {
  if (a.is_constant() && b.is_constant() && b.constant_value() != 0.0)
    return a.constant_value() / b.constant_value();
  if (a.is_zero() && !b.is_zero()) return 0.0;
  if (is_const(b, 1.0)) return a;
  return make_binary(Op::Div, a, b);
}

Expr operator-(const Expr& a) {
  if (a.is_constant()) return -a.constant_value();
  if (a.op() == Op::Neg) return a.node().args[0];
  return make_unary(Op::Neg, a);
}

Expr pow(const Expr& a, int n) {
  if (n == 0) return 1.0;
  if (n == 1) return a;
  if (a.is_constant() && (n > 0 || a.constant_value() != 0.0)) return std::pow(a.constant_value(), n);
  return make_unary(Op::Pow, a, n);
}

Expr exp(const Expr& a) {
  if (a.is_constant()) return std::exp(a.constant_value());
  return make_unary(Op::Exp, a);
}
Expr log(const Expr& a) {
  if (a.is_constant() && a.constant_value() > 0.0) return std::log(a.constant_value());
  return make_unary(Op::Log, a);
}
Expr sin(const Expr& a) {
  if (a.is_constant()) return std::sin(a.constant_value());
  return make_unary(Op::Sin, a);
}
Expr cos(const Expr& a) {
  if (a.is_constant()) return std::cos(a.constant_value());
  return make_unary(Op::Cos, a);
}
Expr sqrt(const Expr& a) {
  if (a.is_constant() && a.constant_value() >= 0.0) return std::sqrt(a.constant_value());
  return make_unary(Op::Sqrt, a);
}
Expr tanh(const Expr& a) {
  if (a.is_constant()) return std::tanh(a.constant_value());
  return make_unary(Op::Tanh, a);
}

Expr fischer_burmeister(const Expr& a, const Expr& b) {
  if (a.is_constant() && b.is_constant()) return fischer_burmeister(a.constant_value(), b.constant_value());
  return make_binary(Op::Fb, a, b);
}

double fischer_burmeister(double a, double b) { return detail::fb(a, b); }

Expr differentiate(const Expr& e, LeafId wrt) {
  const Node& n = e.node();
  switch (n.op) {
    case Op::Const: return 0.0;
    case Op::Leaf: return (n.leaf == wrt.kind && n.index == wrt.index) ? 1.0 : 0.0;
    default: break;
  }
  const Expr& a = n.args[0];
  const Expr da = differentiate(a, wrt);
  switch (n.op) {
    case Op::Neg: return -da;
    case Op::Pow: return double(n.exponent) * pow(a, n.exponent - 1) * da;
    case Op::Exp: return e * da;
    case Op::Log: return da / a;
    case Op::Sin: return cos(a) * da;
    case Op::Cos: return -(sin(a) * da);
    case Op::Sqrt: return da.is_zero() ? Expr(0.0) : da / (2.0 * e);
    case Op::Tanh: return (1.0 - e * e) * da;
    default: break;
  }
  const Expr& b = n.args[1];
  const Expr db = differentiate(b, wrt);
  switch (n.op) {
    case Op::Add: return da + db;
    case Op::Sub: return da - db;
    case Op::Mul: return da * b + a * db;
    case Op::Div: return da / b - a * db / (b * b);
    case Op::Fb:
      return (da.is_zero() ? Expr(0.0) : make_binary(Op::FbDa, a, b) * da) +
             (db.is_zero() ? Expr(0.0) : make_binary(Op::FbDb, a, b) * db);
    case Op::FbDa:
    case Op::FbDb: {
      if (da.is_zero() && db.is_zero()) return 0.0;
      // FbDa = 1 - a/r: d/da = -b^2/r^3, d/db = a b / r^3 (FbDb symmetric).
      const Expr r3 = pow(sqrt(a * a + b * b), 3);
      if (n.op == Op::FbDa) return (-(b * b) * da + a * b * db) / r3;
      return (a * b * da - (a * a) * db) / r3;
    }
    default: throw std::logic_error("differentiate: unhandled op");
  }
}

namespace {
void collect(const Expr& e, std::vector<LeafId>& out) {
  const Node& n = e.node();
  if (n.op == Op::Leaf) {
    const LeafId id{n.leaf, n.index};
    if (std::find(out.begin(), out.end(), id) == out.end()) out.push_back(id);
    return;
  }
  for (const Expr& a : n.args) collect(a, out);
}

void print(const Expr& e, std::ostream& os) {
  const Node& n = e.node();
  switch (n.op) {
    case Op::Const: os << n.value; return;
    case Op::Leaf: os << leaf_name(n.leaf) << '[' << n.index << ']'; return;
    case Op::Neg: os << "-("; print(n.args[0], os); os << ')'; return;
    case Op::Pow: os << '('; print(n.args[0], os); os << ")^" << n.exponent; return;
    default: break;
  }
  const char* fn = nullptr;
  switch (n.op) {
    case Op::Exp: fn = "exp"; break;
    case Op::Log: fn = "log"; break;
    case Op::Sin: fn = "sin"; break;
    case Op::Cos: fn = "cos"; break;
    case Op::Sqrt: fn = "sqrt"; break;
    case Op::Tanh: fn = "tanh"; break;
    case Op::Fb: fn = "fb"; break;
    case Op::FbDa: fn = "fb_da"; break;
    case Op::FbDb: fn = "fb_db"; break;
    default: break;
  }
  if (fn) {
    os << fn << '(';
    print(n.args[0], os);
    if (n.args.size() > 1) {
      os << ", ";
      print(n.args[1], os);
    }
    os << ')';
    return;
  }
  const char sym = n.op == Op::Add ? '+' : n.op == Op::Sub ? '-' : n.op == Op::Mul ? '*' : '/';
  os << '(';
  print(n.args[0], os);
  os << ' ' << sym << ' ';
  print(n.args[1], os);
  os << ')';
}
}  // namespace

std::vector<LeafId> leaves(const Expr& e) {
  std::vector<LeafId> out;
  collect(e, out);
  return out;
}

std::string to_string(const Expr& e) {
  std::ostringstream os;
  os.precision(17);
  print(e, os);
  return os.str();
}

Program::Program(const Expr& e) { emit(e, 1); }

void Program::emit(const Expr& e, std::size_t depth) {
  const Node& n = e.node();
  max_depth_ = std::max(max_depth_, depth);
  for (std::size_t i = 0; i < n.args.size(); ++i) emit(n.args[i], depth + i);
  code_.push_back({n.op, n.leaf, n.exponent, n.index, n.value});
}

}  // namespace daehn::sym
