#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "daehn/symbolic/expr.hpp"

namespace daehn::sym {

class AssemblyError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Derivative variable d_q = d^order y_output / d input[axis]^order.
struct DerivVar {
  std::size_t output = 0;
  std::size_t axis = 0;
  int order = 1;
  friend bool operator==(const DerivVar&, const DerivVar&) = default;
};

struct ConstraintSet {
  std::size_t num_inputs = 0;
  std::size_t num_outputs = 0;
  std::size_t num_params = 0;
  std::vector<Expr> differential;
  std::vector<Expr> equalities;
  std::vector<Expr> inequalities;  // g <= 0
  std::vector<DerivVar> deriv_vars;

  ConstraintSet() = default;
  ConstraintSet(std::size_t inputs, std::size_t outputs, std::size_t params = 0)
      : num_inputs(inputs), num_outputs(outputs), num_params(params) {}

  /// Registry index of `v`, appending it if new.
  std::size_t register_deriv(DerivVar v);
  /// Leaf for the derivative of output p along axis, registering it.
  Expr d(std::size_t output, std::size_t axis, int order = 1) { return deriv(register_deriv({output, axis, order})); }

  std::optional<std::size_t> find_deriv(DerivVar v) const;
  std::size_t num_constraints() const { return differential.size() + equalities.size() + inequalities.size(); }
};

struct TaylorCoupling {
  double delta = 0.1;
  int order = 1;
};

/// Neighbor leaf index of output p evaluated at the point shifted along axis.
inline std::size_t neighbor_index(std::size_t p, std::size_t axis, std::size_t num_axes) { return p * num_axes + axis; }

/// Registers every derivative the coupling needs (first order on each axis,
/// plus the diagonal second order terms when order == 2).
void register_coupling_derivs(ConstraintSet& cs, const TaylorCoupling& coupling);

/// y_p - M_p for one output; the derivatives must already be registered.
Expr coupling_residual(const ConstraintSet& cs, const TaylorCoupling& coupling, std::size_t p);

/// Unknown vector layout z = [y, d, lambda_D, lambda_E, lambda_I, lambda_p, s].
struct KktLayout {
  std::size_t n_y = 0, n_d = 0, n_diff = 0, n_eq = 0, n_ineq = 0, n_coupling = 0;

  std::size_t size() const { return n_y + n_d + num_mults(); }
  std::size_t num_mults() const { return n_diff + n_eq + n_ineq + n_coupling + n_ineq; }
  std::size_t y_offset() const { return 0; }
  std::size_t d_offset() const { return n_y; }
  std::size_t mult_offset() const { return n_y + n_d; }
  std::size_t lambda_d_offset() const { return mult_offset(); }
  std::size_t lambda_e_offset() const { return lambda_d_offset() + n_diff; }
  std::size_t lambda_i_offset() const { return lambda_e_offset() + n_eq; }
  std::size_t lambda_p_offset() const { return lambda_i_offset() + n_ineq; }
  std::size_t slack_offset() const { return lambda_p_offset() + n_coupling; }
  /// Leaf that unknown c binds to.
  LeafId unknown_leaf(std::size_t c) const;
};

struct KktSystem {
  KktLayout layout;
  ConstraintSet constraints;  // registry includes coupling derivatives
  std::optional<TaylorCoupling> coupling;
  std::size_t num_extra_equalities = 0;
  std::vector<Expr> residual;
  std::vector<std::vector<Expr>> jacobian;

  struct Entry {
    std::size_t row, col;
    Program program;
  };
  std::vector<Program> residual_programs;
  std::vector<Entry> jacobian_entries;  // structurally nonzero only
  std::vector<Program> primal_programs;  // base U, h, g (for violation)

  std::size_t size() const { return layout.size(); }
};

/// Builds the square first-order optimality system of
///   min 1/2 |y - yhat|^2  s.t. U = 0, h = 0, g <= 0, y_p = M_p.
/// extra_equalities are appended to the h block with their own multipliers.
KktSystem assemble_kkt(ConstraintSet constraints, std::optional<TaylorCoupling> coupling,
                       std::vector<Expr> extra_equalities = {});

/// Raw residuals [U..., h..., g...] of the base constraints.
template <class T>
std::vector<T> smallest_signed_violation(const ConstraintSet& cs, const Bindings<T>& b) {
  std::vector<T> r;
  r.reserve(cs.num_constraints());
  for (const Expr& e : cs.differential) r.push_back(eval(e, b));
  for (const Expr& e : cs.equalities) r.push_back(eval(e, b));
  for (const Expr& e : cs.inequalities) r.push_back(eval(e, b));
  return r;
}

/// Sum of |U| + |h| + ReLU(g) for a residual vector laid out as above.
double absolute_violation_sum(const ConstraintSet& cs, const std::vector<double>& residuals);

/// Checks that every leaf of `e` is bound by the layout of `cs`.
void validate_leaves(const ConstraintSet& cs, const Expr& e, bool allow_kkt_leaves);

}  // namespace daehn::sym
