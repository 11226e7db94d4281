#pragma once

// Losses, Adam, the epoch loop with dynamic projection activation, and metric
// evaluation for the mlp / pinn / daehn models.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "daehn/network/mlp.hpp"
#include "daehn/problems/problems.hpp"
#include "daehn/projection/newton.hpp"

namespace daehn::train {

enum class Model { mlp, pinn, daehn };
std::string to_string(Model m);
std::optional<Model> parse_model(const std::string& s);

/// How gradients pass through the Newton layer. implicit differentiates the
/// converged KKT point (adjoint solve with the final Jacobian); unrolled
/// records every iteration on the tape. Non-converged points always unroll.
enum class ProjectionGradient { implicit, unrolled };

struct TrainConfig {
  Model model = Model::daehn;
  std::string problem;
  std::size_t num_epochs = 5000;
  std::size_t model_depth = 4;
  std::size_t hidden_dim = 32;
  double lr = 1e-3;
  std::size_t num_points = 0;
  double pinn_reg_factor = 1.0;
  double hardnet_reg_factor = 1.0;
  double taylor_offset = 0.1;
  int taylor_order = 1;
  double eta = 0.01;
  double newton_step_length = 1.0;
  int max_newton_iter = 10;
  double noise_std = 1.0;
  double noise_mean = 0.0;
  double noise_scale = 0.0;
  std::uint64_t seed = 0;
  std::size_t eval_every = 10;
  std::size_t batch_size = 0;  // 0: full training split
  bool detach_projected_targets = false;
  std::vector<std::pair<std::string, double>> estimate_params;
  double residual_tol = 1e-10;
  double jacobian_regularization = 1e-10;
  ProjectionGradient projection_gradient = ProjectionGradient::implicit;

  proj::ProjectionConfig projection() const {
    return {newton_step_length, max_newton_iter, residual_tol, jacobian_regularization};
  }
};

struct Metrics {
  double mse_data = 0.0;
  double rmse = 0.0;
  std::optional<double> mse_derivative;
  std::optional<double> abs_violation;
  double nonconverged_fraction = 0.0;
  std::optional<double> projection_gap;  // mean inf-norm |yhat - ytilde|
};

// ---------------------------------------------------------------- losses

template <class T>
T mse(std::span<const T> a, std::span<const T> b) {
  if (a.empty()) return T(0.0);
  T s(0.0);
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s / double(a.size());
}

template <class T>
T loss_mlp(std::span<const T> predictions, std::span<const double> targets) {
  std::vector<T> t(targets.begin(), targets.end());
  return mse(predictions, std::span<const T>(t));
}

/// residuals: num_points rows of [U..., h..., g...] as laid out by `cs`.
template <class T>
T loss_pinn(std::span<const T> predictions, std::span<const double> targets, std::span<const T> residuals,
            const sym::ConstraintSet& cs, double weight) {
  T loss = loss_mlp(predictions, targets);
  const std::size_t m = cs.num_constraints();
  if (m == 0 || residuals.empty() || weight == 0.0) return loss;
  const std::size_t first_ineq = cs.differential.size() + cs.equalities.size();
  T phys(0.0);
  for (std::size_t i = 0; i < residuals.size(); ++i) {
    const T& r = residuals[i];
    if (i % m >= first_ineq && ad::value_of(r) <= 0.0) continue;
    phys += r * r;
  }
  return loss + weight * phys / double(residuals.size());
}

template <class T>
T loss_daehn(std::span<const T> y_proj, std::span<const double> targets, std::span<const T> d_proj,
             std::span<const T> d_ad, double omega) {
  T loss = loss_mlp(y_proj, targets);
  if (!d_proj.empty() && omega != 0.0) loss += omega * mse(d_proj, d_ad);
  return loss;
}

// ---------------------------------------------------------------- Adam

struct AdamState {
  std::vector<double> m, v;
  long step = 0;
};

void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state, double lr,
               double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

// ---------------------------------------------------------------- data

problems::Dataset add_noise(problems::Dataset data, double mean, double std, double scale, std::uint64_t seed);

// ---------------------------------------------------------------- setup

/// Problem plus the training-time projection system and fixed parameters.
struct Experiment {
  problems::ProblemSpec spec;
  std::optional<sym::TaylorCoupling> coupling;
  sym::KktSystem system;  // no BC/IC rows
  std::vector<double> fixed_params;  // constraint parameters when not estimated
  bool estimate = false;

  const sym::ConstraintSet& registry() const { return system.constraints; }
  std::size_t multiplier_dim() const { return system.layout.num_mults(); }
  net::JetRequest request(bool neighbors) const;
  net::BackboneConfig backbone(const TrainConfig& config) const;
  net::NetworkParams init_params(const TrainConfig& config) const;
  /// Parameter values bound into the constraints.
  std::span<const double> constraint_params(const net::NetworkParams& params) const {
    return estimate ? std::span<const double>(params.phys_params) : std::span<const double>(fixed_params);
  }
};

Experiment make_experiment(const TrainConfig& config);

// ---------------------------------------------------------------- inference

struct PointEval {
  std::vector<double> y_hat, lambda_hat, d_hat, neighbors;
  std::vector<double> y, d;  // reported outputs and derivatives
  bool projected = false;
  bool converged = true;
  double gap = 0.0;
};

/// Backbone pass over a set of points, optionally followed by projection.
/// With a pool, each point uses the system matching its BC/IC membership.
std::vector<PointEval> infer(const Experiment& ex, const net::NetworkParams& params, std::span<const double> inputs,
                             bool project, const proj::ProjectionConfig& config,
                             const std::map<problems::PoolKey, sym::KktSystem>* pool = nullptr);

/// Metrics over evaluated points. Violation uses the reported derivatives.
Metrics evaluate_metrics(const Experiment& ex, const std::vector<PointEval>& points, std::span<const double> inputs,
                         std::span<const double> targets, std::span<const double> constraint_params,
                         bool with_derivative_mse);

// ---------------------------------------------------------------- gradients

struct StepTiming {
  double backbone_ad = 0.0, projection = 0.0, backprop = 0.0, optimizer = 0.0;
};

struct StepResult {
  double loss = 0.0;
  std::size_t nonconverged = 0;
};

/// Loss of one batch (rows of the dataset) and its gradient in flatten()
/// order. `active` selects the projected loss for model daehn.
StepResult loss_and_gradient(const Experiment& ex, const TrainConfig& config, const net::NetworkParams& params,
                             std::span<const double> inputs, std::span<const double> targets, bool active,
                             std::vector<double>& grad, StepTiming* timing = nullptr);

/// Same loss assembled point by point from the single-point backbone and the
/// batch loss functions; used as a finite-difference oracle.
double reference_loss(const Experiment& ex, const TrainConfig& config, const net::NetworkParams& params,
                      std::span<const double> inputs, std::span<const double> targets, bool active);

// ---------------------------------------------------------------- training

struct CurveRow {
  std::size_t epoch = 0;
  bool train_split = true;
  bool active = false;
  Metrics metrics;
};

struct TrainReport {
  std::vector<CurveRow> curve;
  std::size_t best_epoch = 0;
  Metrics best_train, best_val;
  net::NetworkParams best_params, final_params;
  std::optional<std::size_t> activation_epoch;
  bool diverged = false;
  std::string diagnostic;
  std::vector<std::pair<std::size_t, std::vector<double>>> phys_trajectory;
  StepTiming timing;
  std::size_t steps = 0;
};

using ProgressFn = std::function<void(const CurveRow&)>;

/// initial replaces the seeded initialization (input standardization is kept
/// from the checkpoint).
TrainReport train(const TrainConfig& config, const Experiment& ex, const problems::Dataset& data,
                  const ProgressFn& progress = {}, const std::optional<net::NetworkParams>& initial = std::nullopt);

}  // namespace daehn::train
