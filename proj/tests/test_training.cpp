#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <limits>
#include <random>

#include "daehn/training/train.hpp"

using namespace daehn;
using namespace daehn::train;

namespace {

TrainConfig small_config(Model model, const std::string& problem) {
  TrainConfig c;
  c.model = model;
  c.problem = problem;
  c.hidden_dim = 6;
  c.model_depth = 2;
  c.seed = 11;
  c.max_newton_iter = 40;
  c.residual_tol = 1e-12;
  return c;
}

struct Batch {
  std::vector<double> x, y;
};

Batch batch_of(const Experiment& ex, std::size_t n, std::uint64_t seed) {
  const auto d = problems::generate_dataset(ex.spec, n, seed);
  return {d.inputs, d.targets};
}

// Central differences of reference_loss over a spread of parameters.
void check_gradient(const Experiment& ex, const TrainConfig& cfg, net::NetworkParams params, const Batch& b,
                    bool active, std::size_t probes = 10) {
  std::vector<double> grad;
  loss_and_gradient(ex, cfg, params, b.x, b.y, active, grad);
  const double l0 = reference_loss(ex, cfg, params, b.x, b.y, active);
  std::vector<double> g2;
  CHECK(loss_and_gradient(ex, cfg, params, b.x, b.y, active, g2).loss == Catch::Approx(l0).epsilon(1e-9));

  auto flat = params.flatten();
  REQUIRE(grad.size() == flat.size());
  std::vector<std::size_t> idx;
  for (std::size_t k = 0; k < probes; ++k) idx.push_back(k * (params.weight_count() - 1) / (probes - 1));
  for (std::size_t r = params.weight_count(); r < flat.size(); ++r) idx.push_back(r);
  for (std::size_t i : idx) {
    const double h = 1e-5 * std::max(1.0, std::abs(flat[i]));
    auto probe = [&](double v) {
      auto f = flat;
      f[i] = v;
      net::NetworkParams p = params;
      p.unflatten(f);
      return reference_loss(ex, cfg, p, b.x, b.y, active);
    };
    const double fd = (probe(flat[i] + h) - probe(flat[i] - h)) / (2.0 * h);
    INFO("parameter " << i << " analytic " << grad[i] << " fd " << fd);
    CHECK(std::abs(grad[i] - fd) <= 1e-4 * std::max(1.0, std::abs(fd)));
  }
}

net::NetworkParams fitted_params(const Experiment& ex, const TrainConfig& cfg, const Batch& b) {
  auto p = ex.init_params(cfg);
  net::fit_standardization(p, b.x);
  return p;
}

}  // namespace

TEST_CASE("model names round-trip") {
  for (Model m : {Model::mlp, Model::pinn, Model::daehn}) CHECK(parse_model(to_string(m)) == m);
  CHECK_FALSE(parse_model("hardnet").has_value());
}

TEST_CASE("data loss") {
  std::vector<double> p{1.0, 1.0}, t{0.0, 0.0};
  CHECK(loss_mlp<double>(p, t) == 1.0);
  std::vector<double> p2{2.0, 2.0};
  CHECK(loss_mlp<double>(p2, t) == 4.0 * loss_mlp<double>(p, t));
}

TEST_CASE("pinn loss adds the weighted squared residual") {
  sym::ConstraintSet cs;
  cs.equalities.push_back(sym::output(0));
  std::vector<double> p{1.0}, t{1.0}, r{2.0};
  CHECK(loss_pinn<double>(p, t, r, cs, 1.0) == 4.0);
  std::vector<double> p2{3.0};
  CHECK(loss_pinn<double>(p2, t, r, cs, 0.0) == loss_mlp<double>(p2, t));

  sym::ConstraintSet ineq;
  ineq.inequalities.push_back(sym::output(0));
  std::vector<double> slack{-5.0}, hit{3.0};
  CHECK(loss_pinn<double>(p, t, slack, ineq, 1.0) == 0.0);
  CHECK(loss_pinn<double>(p, t, hit, ineq, 1.0) == 9.0);
}

TEST_CASE("daehn loss weights the derivative mismatch") {
  std::vector<double> y{1.0}, t{0.0}, d{2.0}, dad{1.0};
  CHECK(loss_daehn<double>(y, t, d, dad, 1.0) == 2.0);
  CHECK(loss_daehn<double>(y, t, d, dad, 0.0) == 1.0);
}

TEST_CASE("adam") {
  std::vector<double> p{1.0, -2.0}, g{0.0, 0.0};
  AdamState s;
  adam_step(p, g, s, 1e-3);
  CHECK(p == std::vector<double>{1.0, -2.0});

  std::vector<double> q{0.0, 0.0}, gq{3.0, -0.01};
  AdamState s2;
  adam_step(q, gq, s2, 1e-3);
  CHECK(q[0] == Catch::Approx(-1e-3).epsilon(1e-6));
  CHECK(q[1] == Catch::Approx(1e-3).epsilon(1e-4));
  const double first = std::abs(q[0]);
  const double before = q[0];
  adam_step(q, gq, s2, 1e-3);
  CHECK(std::abs(q[0] - before) <= first * (1.0 + 1e-12));

  std::vector<double> bad(3);
  CHECK_THROWS_AS(adam_step(bad, gq, s2, 1e-3), std::invalid_argument);
}

TEST_CASE("noise") {
  problems::Dataset d;
  d.input_dim = 1;
  d.output_dim = 1;
  d.inputs.assign(20000, 0.0);
  d.targets.assign(20000, 1.0);
  d.train.assign(20000, 1);
  CHECK(add_noise(d, 0.0, 1.0, 0.0, 3).targets == d.targets);
  const auto n = add_noise(d, 0.5, 2.0, 0.1, 3);
  double mean = 0.0, var = 0.0;
  for (double y : n.targets) mean += y - 1.0;
  mean /= double(n.targets.size());
  for (double y : n.targets) var += (y - 1.0 - mean) * (y - 1.0 - mean);
  var /= double(n.targets.size());
  const double se = 0.2 / std::sqrt(double(n.targets.size()));
  CHECK(std::abs(mean - 0.05) <= 5.0 * se);
  CHECK(var == Catch::Approx(0.04).epsilon(0.05));
  CHECK(add_noise(d, 0.5, 2.0, 0.1, 3).targets == n.targets);
  CHECK(add_noise(d, 0.5, 2.0, 0.1, 4).targets != n.targets);
}

TEST_CASE("experiment setup") {
  auto ex = make_experiment(small_config(Model::daehn, "lotka_volterra"));
  CHECK(ex.coupling.has_value());
  CHECK_FALSE(ex.estimate);
  CHECK(ex.multiplier_dim() == ex.system.layout.num_mults());

  auto inv = make_experiment(small_config(Model::daehn, "lv_inverse"));
  CHECK(inv.estimate);
  const auto p = inv.init_params(small_config(Model::daehn, "lv_inverse"));
  CHECK(p.phys_params == inv.spec.estimate_init);

  auto q = make_experiment(small_config(Model::daehn, "quadratic"));
  CHECK_FALSE(q.coupling.has_value());

  auto cfg = small_config(Model::pinn, "co_oxidation");
  cfg.estimate_params = {{"k1", 0.01}};
  CHECK_THROWS_AS(make_experiment(cfg), std::invalid_argument);
  cfg.estimate_params = {{"k1", 0.01}, {"k_prime", 0.1}, {"bogus", 1.0}};
  CHECK_THROWS_AS(make_experiment(cfg), std::invalid_argument);
}

TEST_CASE("mlp gradient matches finite differences") {
  const auto cfg = small_config(Model::mlp, "ode_system");
  const auto ex = make_experiment(cfg);
  const auto b = batch_of(ex, 12, 1);
  check_gradient(ex, cfg, fitted_params(ex, cfg, b), b, false);
}

TEST_CASE("pinn gradient matches finite differences") {
  for (const char* name : {"ode_system", "pde_multisol", "lv_inverse"}) {
    INFO(name);
    auto cfg = small_config(Model::pinn, name);
    cfg.pinn_reg_factor = 0.7;
    const auto ex = make_experiment(cfg);
    const auto b = batch_of(ex, 10, 2);
    check_gradient(ex, cfg, fitted_params(ex, cfg, b), b, false);
  }
}

TEST_CASE("projected gradient matches finite differences") {
  for (auto pg : {ProjectionGradient::implicit, ProjectionGradient::unrolled}) {
    for (const char* name : {"quadratic", "lotka_volterra", "lv_inverse", "heat_1d"}) {
      INFO(name << (pg == ProjectionGradient::implicit ? " implicit" : " unrolled"));
      auto cfg = small_config(Model::daehn, name);
      cfg.projection_gradient = pg;
      cfg.hardnet_reg_factor = 0.5;
      const auto ex = make_experiment(cfg);
      const auto b = batch_of(ex, 6, 3);
      auto params = fitted_params(ex, cfg, b);
      std::vector<double> grad;
      const auto r = loss_and_gradient(ex, cfg, params, b.x, b.y, true, grad);
      CHECK(r.nonconverged == 0);
      check_gradient(ex, cfg, params, b, true);
      if (ex.estimate) {
        double g = 0.0;
        for (std::size_t i = params.weight_count(); i < grad.size(); ++i) g += std::abs(grad[i]);
        CHECK(g > 0.0);
      }
    }
  }
}

TEST_CASE("implicit and unrolled gradients agree at convergence") {
  auto cfg = small_config(Model::daehn, "lotka_volterra");
  const auto ex = make_experiment(cfg);
  const auto b = batch_of(ex, 8, 5);
  const auto params = fitted_params(ex, cfg, b);
  std::vector<double> gi, gu;
  loss_and_gradient(ex, cfg, params, b.x, b.y, true, gi);
  cfg.projection_gradient = ProjectionGradient::unrolled;
  loss_and_gradient(ex, cfg, params, b.x, b.y, true, gu);
  for (std::size_t i = 0; i < gi.size(); ++i) CHECK(gi[i] == Catch::Approx(gu[i]).margin(1e-8).epsilon(1e-6));
}

TEST_CASE("metrics on the exact solution") {
  for (const auto& name : problems::problem_names()) {
    INFO(name);
    const auto ex = make_experiment(small_config(Model::daehn, name));
    const auto d = problems::generate_dataset(ex.spec, 50, 7);
    std::vector<PointEval> pts(d.size());
    for (std::size_t i = 0; i < d.size(); ++i) {
      const auto y = d.y(i);
      pts[i].y.assign(y.begin(), y.end());
      for (const auto& v : ex.registry().deriv_vars) pts[i].d.push_back(ex.spec.oracle_derivative(d.x(i), v));
      pts[i].y_hat = pts[i].y;
      pts[i].d_hat = pts[i].d;
    }
    const auto m = evaluate_metrics(ex, pts, d.inputs, d.targets, ex.spec.true_params, true);
    CHECK(m.mse_data == 0.0);
    CHECK(*m.mse_derivative == 0.0);
    REQUIRE(m.abs_violation.has_value());
    CHECK(*m.abs_violation <= 1e-6);
  }
}

TEST_CASE("projection drives the violation to the Newton tolerance") {
  auto cfg = small_config(Model::daehn, "lotka_volterra");
  const auto ex = make_experiment(cfg);
  const auto d = problems::generate_dataset(ex.spec, 30, 8);
  auto params = fitted_params(ex, cfg, {d.inputs, d.targets});
  const auto raw = infer(ex, params, d.inputs, false, cfg.projection());
  const auto pts = infer(ex, params, d.inputs, true, cfg.projection());
  const auto m0 = evaluate_metrics(ex, raw, d.inputs, d.targets, ex.fixed_params, false);
  const auto m = evaluate_metrics(ex, pts, d.inputs, d.targets, ex.fixed_params, true);
  CHECK(m.nonconverged_fraction == 0.0);
  CHECK(*m.abs_violation <= 10.0 * cfg.residual_tol);
  CHECK(*m0.abs_violation > 1e-3);
  CHECK(m.rmse * m.rmse == Catch::Approx(m.mse_data).epsilon(1e-14));
  CHECK(m.projection_gap.has_value());
}

TEST_CASE("activation threshold") {
  auto cfg = small_config(Model::daehn, "ode_system");
  cfg.num_epochs = 20;
  cfg.eval_every = 5;
  const auto ex = make_experiment(cfg);
  const auto data = problems::generate_dataset(ex.spec, 40, 1);

  cfg.eta = 0.0;
  const auto never = train::train(cfg, ex, data);
  CHECK_FALSE(never.activation_epoch.has_value());
  auto pinn_cfg = cfg;
  pinn_cfg.model = Model::pinn;
  const auto pinn = train::train(pinn_cfg, ex, data);
  REQUIRE(never.curve.size() == pinn.curve.size());
  for (std::size_t i = 0; i < pinn.curve.size(); ++i) {
    CHECK(never.curve[i].metrics.mse_data == pinn.curve[i].metrics.mse_data);
    CHECK_FALSE(never.curve[i].active);
  }

  cfg.eta = std::numeric_limits<double>::infinity();
  const auto always = train::train(cfg, ex, data);
  REQUIRE(always.activation_epoch.has_value());
  CHECK(*always.activation_epoch == 0);
  for (const auto& row : always.curve) {
    CHECK(row.active);
    CHECK(row.metrics.mse_derivative.has_value());
  }
  CHECK(always.curve.size() == 8);
  CHECK(always.steps == 20);
}

TEST_CASE("training reduces the loss and is reproducible") {
  auto cfg = small_config(Model::mlp, "quadratic");
  cfg.hidden_dim = 16;
  cfg.num_epochs = 200;
  cfg.lr = 1e-2;
  cfg.eval_every = 50;
  const auto ex = make_experiment(cfg);
  const auto data = problems::generate_dataset(ex.spec, 100, 2);
  const auto a = train::train(cfg, ex, data);
  const auto b = train::train(cfg, ex, data);
  REQUIRE(a.curve.size() == 8);
  CHECK(a.curve.back().metrics.mse_data < a.curve.front().metrics.mse_data);
  CHECK(a.final_params.flatten() == b.final_params.flatten());
  CHECK(a.best_val.mse_data == b.best_val.mse_data);
  CHECK_FALSE(a.diverged);
}

TEST_CASE("divergence is reported") {
  auto cfg = small_config(Model::mlp, "ode_system");
  cfg.num_epochs = 5;
  const auto ex = make_experiment(cfg);
  auto data = problems::generate_dataset(ex.spec, 20, 1);
  data.targets[0] = std::numeric_limits<double>::quiet_NaN();
  const auto r = train::train(cfg, ex, data);
  CHECK(r.diverged);
  CHECK(r.diagnostic.find("epoch 1") != std::string::npos);
}

TEST_CASE("inverse mode records the parameter trajectory") {
  auto cfg = small_config(Model::daehn, "lv_inverse");
  cfg.num_epochs = 10;
  cfg.eval_every = 5;
  cfg.eta = 1e9;
  const auto ex = make_experiment(cfg);
  const auto data = problems::generate_dataset(ex.spec, 40, 1);
  const auto r = train::train(cfg, ex, data);
  REQUIRE(r.phys_trajectory.size() == 2);
  CHECK(r.phys_trajectory.back().second != ex.spec.estimate_init);
}
