#pragma once

// Damped Newton on the KKT square system.
//
// newton_solve is generic over the scalar: double for plain projection,
// ad::Var to unroll the iterations on a tape, ad::Dual2<double> to push input
// derivatives through the solve.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <stdexcept>
#include <type_traits>
#include <vector>

#include "daehn/autodiff/dual2.hpp"
#include "daehn/autodiff/tape.hpp"
#include "daehn/symbolic/kkt.hpp"

namespace daehn::proj {

struct ProjectionConfig {
  double newton_step_length = 1.0;
  int max_newton_iter = 10;
  double residual_tol = 1e-10;
  double jacobian_regularization = 1e-10;

  /// Throws std::invalid_argument naming the offending field.
  void validate() const;
};

template <class T>
struct ProjectionResultT {
  std::vector<T> z;
  std::vector<T> y_proj;
  std::vector<T> d_proj;
  std::vector<T> multipliers;  // lambda_D, lambda_E, lambda_I, lambda_p, s
  bool converged = false;
  double residual_norm = 0.0;
  int iterations = 0;
  bool regularized = false;
};
using ProjectionResult = ProjectionResultT<double>;

/// Per-point backbone quantities in registry order.
template <class T>
struct BackboneBundle {
  std::vector<T> inputs;
  std::vector<T> y_hat;
  std::vector<T> lambda_hat;
  std::vector<T> d_hat;
  std::vector<T> neighbor_evals;  // p * num_axes + axis
};

/// Leaves that stay fixed during the solve.
template <class T>
struct FixedBindings {
  std::span<const T> inputs;
  std::span<const T> params;
  std::span<const T> neighbors;
  std::span<const T> backbone;
};

namespace detail {

using ad::value_of;

/// Solves A x = b in place (A row-major n x n, b overwritten with x) by LU with
/// partial pivoting. Returns false when a pivot magnitude is <= pivot_floor.
template <class T>
bool lu_solve(std::vector<T>& A, std::vector<T>& b, std::size_t n, double pivot_floor) {
  for (std::size_t k = 0; k < n; ++k) {
    std::size_t piv = k;
    double best = std::abs(value_of(A[k * n + k]));
    for (std::size_t i = k + 1; i < n; ++i) {
      const double v = std::abs(value_of(A[i * n + k]));
      if (v > best) {
        best = v;
        piv = i;
      }
    }
    if (!(best > pivot_floor)) return false;
    if (piv != k) {
      for (std::size_t j = 0; j < n; ++j) std::swap(A[k * n + j], A[piv * n + j]);
      std::swap(b[k], b[piv]);
    }
    const T inv = 1.0 / A[k * n + k];
    for (std::size_t i = k + 1; i < n; ++i) {
      if (value_of(A[i * n + k]) == 0.0 && std::is_same_v<T, double>) continue;
      const T f = A[i * n + k] * inv;
      for (std::size_t j = k + 1; j < n; ++j) A[i * n + j] -= f * A[k * n + j];
      b[i] -= f * b[k];
    }
  }
  for (std::size_t k = n; k-- > 0;) {
    T s = b[k];
    for (std::size_t j = k + 1; j < n; ++j) s -= A[k * n + j] * b[j];
    b[k] = s / A[k * n + k];
  }
  return true;
}

template <class T>
sym::Bindings<T> bind(const sym::KktSystem& sys, const std::vector<T>& z, const FixedBindings<T>& fixed) {
  const auto& L = sys.layout;
  sym::Bindings<T> b;
  b.inputs = fixed.inputs;
  b.params = fixed.params;
  b.neighbors = fixed.neighbors;
  b.backbone = fixed.backbone;
  std::span<const T> zs(z);
  b.outputs = zs.subspan(L.y_offset(), L.n_y);
  b.derivs = zs.subspan(L.d_offset(), L.n_d);
  b.mults = zs.subspan(L.mult_offset(), L.num_mults());
  return b;
}

}  // namespace detail

template <class T>
void evaluate_residual(const sym::KktSystem& sys, const std::vector<T>& z, const FixedBindings<T>& fixed,
                       std::vector<T>& F, std::vector<T>& stack) {
  const auto b = detail::bind(sys, z, fixed);
  F.resize(sys.size());
  for (std::size_t r = 0; r < sys.size(); ++r) F[r] = sys.residual_programs[r].eval(b, stack);
}

template <class T>
void evaluate_jacobian(const sym::KktSystem& sys, const std::vector<T>& z, const FixedBindings<T>& fixed,
                       std::vector<T>& J, std::vector<T>& stack) {
  const auto b = detail::bind(sys, z, fixed);
  const std::size_t n = sys.size();
  J.assign(n * n, T(0.0));
  for (const auto& e : sys.jacobian_entries) J[e.row * n + e.col] = e.program.eval(b, stack);
}

template <class T>
ProjectionResultT<T> newton_solve(const sym::KktSystem& sys, std::vector<T> init, const FixedBindings<T>& fixed,
                                  const ProjectionConfig& config) {
  using ad::value_of;
  const std::size_t n = sys.size();
  if (init.size() != n) throw std::invalid_argument("newton_solve: init has wrong length");

  ProjectionResultT<T> res;
  std::vector<T>& z = res.z;
  z = std::move(init);
  std::vector<T> F, J, step, stack;
  stack.reserve(64);

  for (int it = 0;; ++it) {
    try {
      evaluate_residual(sys, z, fixed, F, stack);
    } catch (const ad::DomainError&) {
      res.residual_norm = std::numeric_limits<double>::infinity();
      break;
    }
    double norm = 0.0;
    bool finite = true;
    for (const T& f : F) {
      const double v = value_of(f);
      if (!std::isfinite(v)) finite = false;
      norm = std::max(norm, std::abs(v));
    }
    res.residual_norm = finite ? norm : std::numeric_limits<double>::infinity();
    if (!finite) break;
    if (norm <= config.residual_tol) {
      res.converged = true;
      break;
    }
    if (it >= config.max_newton_iter) break;

    try {
      evaluate_jacobian(sys, z, fixed, J, stack);
    } catch (const ad::DomainError&) {
      res.residual_norm = std::numeric_limits<double>::infinity();
      break;
    }
    double jmax = 0.0;
    for (const T& v : J) jmax = std::max(jmax, std::abs(value_of(v)));
    const double floor = 1e-14 * std::max(jmax, 1.0);

    std::vector<T> A = J;
    step.resize(n);
    for (std::size_t i = 0; i < n; ++i) step[i] = -F[i];
    if (!detail::lu_solve(A, step, n, floor)) {
      res.regularized = true;
      A = J;
      for (std::size_t i = 0; i < n; ++i) {
        A[i * n + i] += config.jacobian_regularization;
        step[i] = -F[i];
      }
      if (!detail::lu_solve(A, step, n, 0.0)) break;
    }
    for (std::size_t i = 0; i < n; ++i) z[i] += config.newton_step_length * step[i];
    res.iterations = it + 1;
  }

  const auto& L = sys.layout;
  res.y_proj.assign(z.begin() + L.y_offset(), z.begin() + L.y_offset() + L.n_y);
  res.d_proj.assign(z.begin() + L.d_offset(), z.begin() + L.d_offset() + L.n_d);
  res.multipliers.assign(z.begin() + L.mult_offset(), z.end());
  return res;
}

/// Initial iterate: y <- yhat, d <- dhat, multipliers <- lambda_hat, slacks <-
/// max(-g(yhat), 0). lambda_hat follows the base (training) system layout;
/// multipliers of appended boundary/initial equalities start at zero.
template <class T>
std::vector<T> warm_start(const sym::KktSystem& sys, const BackboneBundle<T>& bundle, std::span<const T> params) {
  using ad::value_of;
  const auto& L = sys.layout;
  const std::size_t n_eq_base = L.n_eq - sys.num_extra_equalities;
  const std::size_t base_mults = L.n_diff + n_eq_base + 2 * L.n_ineq + L.n_coupling;
  if (bundle.y_hat.size() != L.n_y || bundle.d_hat.size() != L.n_d)
    throw std::invalid_argument("warm_start: bundle does not match the system layout");
  if (bundle.lambda_hat.size() != base_mults && !bundle.lambda_hat.empty())
    throw std::invalid_argument("warm_start: multiplier head has wrong length");

  std::vector<T> z(L.size(), T(0.0));
  std::copy(bundle.y_hat.begin(), bundle.y_hat.end(), z.begin() + L.y_offset());
  std::copy(bundle.d_hat.begin(), bundle.d_hat.end(), z.begin() + L.d_offset());
  if (!bundle.lambda_hat.empty()) {
    std::size_t src = 0;
    auto take = [&](std::size_t dst, std::size_t count) {
      for (std::size_t k = 0; k < count; ++k) z[dst + k] = bundle.lambda_hat[src++];
    };
    take(L.lambda_d_offset(), L.n_diff);
    take(L.lambda_e_offset(), n_eq_base);
    take(L.lambda_i_offset(), L.n_ineq);
    take(L.lambda_p_offset(), L.n_coupling);
  }
  if (L.n_ineq > 0) {
    sym::Bindings<T> b;
    b.inputs = bundle.inputs;
    b.outputs = bundle.y_hat;
    b.derivs = bundle.d_hat;
    b.params = params;
    b.neighbors = bundle.neighbor_evals;
    for (std::size_t k = 0; k < L.n_ineq; ++k) {
      const T g = sym::eval(sys.constraints.inequalities[k], b);
      z[L.slack_offset() + k] = value_of(g) < 0.0 ? T(-g) : T(0.0);
    }
  }
  return z;
}

template <class T>
ProjectionResultT<T> project(const sym::KktSystem& sys, const BackboneBundle<T>& bundle, std::span<const T> params,
                             const ProjectionConfig& config) {
  FixedBindings<T> fixed{bundle.inputs, params, bundle.neighbor_evals, bundle.y_hat};
  return newton_solve(sys, warm_start(sys, bundle, params), fixed, config);
}

std::vector<ProjectionResult> project_batch(const std::vector<BackboneBundle<double>>& bundles,
                                            const sym::KktSystem& sys, std::span<const double> params,
                                            const ProjectionConfig& config);

/// Same iteration with every operation recorded on the bundle's tape.
inline ProjectionResultT<ad::Var> project_differentiable(const BackboneBundle<ad::Var>& bundle,
                                                         const sym::KktSystem& sys, std::span<const ad::Var> params,
                                                         const ProjectionConfig& config) {
  return project(sys, bundle, params, config);
}

}  // namespace daehn::proj
