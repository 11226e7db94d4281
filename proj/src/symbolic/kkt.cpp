#include "daehn/symbolic/kkt.hpp"

#include <algorithm>
#include <cmath>

namespace daehn::sym {

std::size_t ConstraintSet::register_deriv(DerivVar v) {
  if (v.order != 1 && v.order != 2) throw AssemblyError("derivative order must be 1 or 2");
  if (v.output >= num_outputs) throw AssemblyError("derivative of unknown output " + std::to_string(v.output));
  if (v.axis >= num_inputs) throw AssemblyError("derivative along unknown axis " + std::to_string(v.axis));
  if (auto q = find_deriv(v)) return *q;
  deriv_vars.push_back(v);
  return deriv_vars.size() - 1;
}

std::optional<std::size_t> ConstraintSet::find_deriv(DerivVar v) const {
  auto it = std::find(deriv_vars.begin(), deriv_vars.end(), v);
  if (it == deriv_vars.end()) return std::nullopt;
  return static_cast<std::size_t>(it - deriv_vars.begin());
}

void register_coupling_derivs(ConstraintSet& cs, const TaylorCoupling& coupling) {
  if (coupling.order != 1 && coupling.order != 2) throw AssemblyError("taylor order must be 1 or 2");
  for (std::size_t p = 0; p < cs.num_outputs; ++p) {
    for (std::size_t a = 0; a < cs.num_inputs; ++a) cs.register_deriv({p, a, 1});
    if (coupling.order == 2)
      for (std::size_t a = 0; a < cs.num_inputs; ++a) cs.register_deriv({p, a, 2});
  }
}

Expr coupling_residual(const ConstraintSet& cs, const TaylorCoupling& coupling, std::size_t p) {
  const std::size_t n_axes = cs.num_inputs;
  const double delta = coupling.delta;
  Expr neighbors = 0.0, first = 0.0, second = 0.0;
  auto need = [&](DerivVar v) {
    auto q = cs.find_deriv(v);
    if (!q) throw AssemblyError("coupling derivative of output " + std::to_string(v.output) + " along axis " +
                                std::to_string(v.axis) + " is not registered");
    return deriv(*q);
  };
  for (std::size_t a = 0; a < n_axes; ++a) {
    neighbors += neighbor(neighbor_index(p, a, n_axes));
    first += need({p, a, 1});
    if (coupling.order == 2) second += need({p, a, 2});
  }
  const Expr m = (neighbors - delta * first - 0.5 * delta * delta * second) / double(n_axes);
  return output(p) - m;
}

LeafId KktLayout::unknown_leaf(std::size_t c) const {
  if (c < n_y) return {LeafKind::Output, c};
  if (c < n_y + n_d) return {LeafKind::Deriv, c - n_y};
  return {LeafKind::Mult, c - n_y - n_d};
}

void validate_leaves(const ConstraintSet& cs, const Expr& e, bool allow_kkt_leaves) {
  for (const LeafId& id : leaves(e)) {
    std::size_t bound = 0;
    switch (id.kind) {
      case LeafKind::Input: bound = cs.num_inputs; break;
      case LeafKind::Output: bound = cs.num_outputs; break;
      case LeafKind::Deriv: bound = cs.deriv_vars.size(); break;
      case LeafKind::Param: bound = cs.num_params; break;
      case LeafKind::Neighbor: bound = cs.num_outputs * cs.num_inputs; break;
      case LeafKind::Mult:
      case LeafKind::Backbone: bound = allow_kkt_leaves ? std::size_t(-1) : 0; break;
    }
    if (id.index >= bound)
      throw AssemblyError(std::string("unregistered leaf ") + leaf_name(id.kind) + "[" + std::to_string(id.index) + "]");
  }
}

KktSystem assemble_kkt(ConstraintSet constraints, std::optional<TaylorCoupling> coupling,
                       std::vector<Expr> extra_equalities) {
  KktSystem sys;
  for (const auto* block : {&constraints.differential, &constraints.equalities, &constraints.inequalities})
    for (const Expr& e : *block) validate_leaves(constraints, e, false);
  for (const Expr& e : extra_equalities) validate_leaves(constraints, e, false);

  if (coupling) register_coupling_derivs(constraints, *coupling);

  KktLayout& L = sys.layout;
  L.n_y = constraints.num_outputs;
  L.n_d = constraints.deriv_vars.size();
  L.n_diff = constraints.differential.size();
  L.n_eq = constraints.equalities.size() + extra_equalities.size();
  L.n_ineq = constraints.inequalities.size();
  L.n_coupling = coupling ? L.n_y : 0;

  std::vector<Expr> equalities = constraints.equalities;
  equalities.insert(equalities.end(), extra_equalities.begin(), extra_equalities.end());
  std::vector<Expr> couplings;
  for (std::size_t p = 0; p < L.n_coupling; ++p) couplings.push_back(coupling_residual(constraints, *coupling, p));

  auto lambda = [&](std::size_t offset, std::size_t k) { return mult(offset - L.mult_offset() + k); };

  Expr lagrangian = 0.0;
  for (std::size_t p = 0; p < L.n_y; ++p) lagrangian += 0.5 * pow(output(p) - backbone(p), 2);
  for (std::size_t i = 0; i < L.n_diff; ++i)
    lagrangian += lambda(L.lambda_d_offset(), i) * constraints.differential[i];
  for (std::size_t j = 0; j < L.n_eq; ++j) lagrangian += lambda(L.lambda_e_offset(), j) * equalities[j];
  for (std::size_t k = 0; k < L.n_ineq; ++k)
    lagrangian += lambda(L.lambda_i_offset(), k) * constraints.inequalities[k];
  for (std::size_t p = 0; p < L.n_coupling; ++p) lagrangian += lambda(L.lambda_p_offset(), p) * couplings[p];

  for (std::size_t c = 0; c < L.n_y + L.n_d; ++c) sys.residual.push_back(differentiate(lagrangian, L.unknown_leaf(c)));
  for (const Expr& u : constraints.differential) sys.residual.push_back(u);
  for (const Expr& h : equalities) sys.residual.push_back(h);
  for (std::size_t k = 0; k < L.n_ineq; ++k)
    sys.residual.push_back(constraints.inequalities[k] + lambda(L.slack_offset(), k));
  for (const Expr& m : couplings) sys.residual.push_back(m);
  for (std::size_t k = 0; k < L.n_ineq; ++k)
    sys.residual.push_back(fischer_burmeister(lambda(L.lambda_i_offset(), k), lambda(L.slack_offset(), k)));

  const std::size_t n = L.size();
  if (sys.residual.size() != n) throw std::logic_error("assemble_kkt: system is not square");

  sys.jacobian.assign(n, std::vector<Expr>(n, Expr(0.0)));
  for (std::size_t r = 0; r < n; ++r) {
    sys.residual_programs.emplace_back(sys.residual[r]);
    for (std::size_t c = 0; c < n; ++c) {
      Expr j = differentiate(sys.residual[r], L.unknown_leaf(c));
      if (!j.is_zero()) sys.jacobian_entries.push_back({r, c, Program(j)});
      sys.jacobian[r][c] = std::move(j);
    }
  }
  for (const auto* block : {&constraints.differential, &constraints.equalities, &constraints.inequalities})
    for (const Expr& e : *block) sys.primal_programs.emplace_back(e);

  sys.num_extra_equalities = extra_equalities.size();
  sys.constraints = std::move(constraints);
  sys.coupling = coupling;
  return sys;
}

double absolute_violation_sum(const ConstraintSet& cs, const std::vector<double>& residuals) {
  const std::size_t n_abs = cs.differential.size() + cs.equalities.size();
  double s = 0.0;
  for (std::size_t i = 0; i < residuals.size(); ++i)
    s += i < n_abs ? std::abs(residuals[i]) : std::max(residuals[i], 0.0);
  return s;
}

}  // namespace daehn::sym
