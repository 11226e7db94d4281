#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <numbers>
#include <set>

#include "daehn/problems/problems.hpp"
#include "daehn/projection/newton.hpp"

using namespace daehn;
using namespace daehn::problems;

namespace {

// Substitutes oracle values and derivatives into every base constraint.
double max_constraint_residual(const ProblemSpec& spec, const Dataset& d) {
  auto cs = spec.constraints();
  if (spec.coupling) sym::register_coupling_derivs(cs, *spec.coupling);
  const auto& params = spec.true_params;
  double worst = 0.0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    const auto x = d.x(i);
    std::vector<double> derivs;
    for (const auto& v : cs.deriv_vars) derivs.push_back(spec.oracle_derivative(x, v));
    sym::Bindings<double> b;
    b.inputs = x;
    b.outputs = d.y(i);
    b.derivs = derivs;
    b.params = params;
    const auto r = sym::smallest_signed_violation(cs, b);
    for (std::size_t k = 0; k < r.size(); ++k) {
      const bool ineq = k >= cs.differential.size() + cs.equalities.size();
      worst = std::max(worst, ineq ? std::max(r[k], 0.0) : std::abs(r[k]));
    }
  }
  return worst;
}

}  // namespace

TEST_CASE("rk4 constant and exponential") {
  Rhs zero = [](double, const std::vector<double>& y) { return std::vector<double>(y.size(), 0.0); };
  const auto c = rk4_integrate(zero, {3.5}, 0.0, 2.0, 0.1);
  for (const auto& y : c.y) CHECK(y[0] == 3.5);
  CHECK(c.t.back() == 2.0);

  Rhs grow = [](double, const std::vector<double>& y) { return y; };
  const auto e = rk4_integrate(grow, {1.0}, 0.0, 1.0, 0.01);
  CHECK(std::abs(e.y.back()[0] - std::exp(1.0)) <= 1e-8);
}

TEST_CASE("rk4 converges at fourth order") {
  Rhs grow = [](double, const std::vector<double>& y) { return y; };
  const double e1 = std::abs(rk4_integrate(grow, {1.0}, 0.0, 1.0, 0.1).y.back()[0] - std::exp(1.0));
  const double e2 = std::abs(rk4_integrate(grow, {1.0}, 0.0, 1.0, 0.05).y.back()[0] - std::exp(1.0));
  const double ratio = e1 / e2;
  CHECK(ratio >= 12.0);
  CHECK(ratio <= 20.0);
}

TEST_CASE("rk4 names the blow-up time") {
  Rhs blow = [](double, const std::vector<double>& y) { return std::vector<double>{y[0] * y[0]}; };
  try {
    rk4_integrate(blow, {1.0}, 0.0, 2.0, 0.01);
    FAIL("expected blow-up");
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()).find("t = ") != std::string::npos);
  }
}

TEST_CASE("Lotka-Volterra equilibrium is stationary") {
  const double a = 0.1, b = 0.02, g = 0.4, d = 0.02;
  Rhs lv = [&](double, const std::vector<double>& y) {
    return std::vector<double>{a * y[0] - b * y[0] * y[1], -g * y[1] + d * y[0] * y[1]};
  };
  const auto tr = rk4_integrate(lv, {20.0, 5.0}, 0.0, 50.0, 0.01);
  for (const auto& y : tr.y) {
    CHECK(std::abs(y[0] - 20.0) <= 1e-10);
    CHECK(std::abs(y[1] - 5.0) <= 1e-10);
  }
}

TEST_CASE("registry knows every problem and rejects others") {
  for (const auto& n : problem_names()) CHECK(build_problem(n).name == n);
  CHECK_THROWS_AS(build_problem("nope"), std::invalid_argument);
}

TEST_CASE("oracle point values") {
  const auto ode = build_problem("ode_system");
  std::vector<double> zero{0.0};
  const auto y = oracle_solution(ode, zero);
  CHECK(y[0] == Catch::Approx(-35.0 / 27.0).epsilon(1e-14));
  // Particular solution 11/27 in the second component plus 2B + C.
  CHECK(y[1] == Catch::Approx(11.0 / 27.0 - 4.0 + 0.5).epsilon(1e-14));

  const auto pde = build_problem("pde_multisol");
  std::vector<double> origin{0.0, 0.0};
  CHECK(oracle_solution(pde, origin)[0] == Catch::Approx(6.0).epsilon(1e-15));

  const auto heat = build_problem("heat_1d");
  std::vector<double> p1{0.5, 0.0}, p2{2.5, 0.0};
  CHECK(oracle_solution(heat, p1)[0] == Catch::Approx(1.0).epsilon(1e-14));
  CHECK(oracle_solution(heat, p2)[0] == Catch::Approx(1.0).epsilon(1e-14));

  const auto lv = build_problem("lotka_volterra");
  std::vector<double> t0{0.0};
  const auto y0 = oracle_solution(lv, t0);
  CHECK(y0[0] == 10.0);
  CHECK(y0[1] == 10.0);

  std::vector<double> outside{5.0};
  CHECK_THROWS_AS(oracle_solution(ode, outside), std::out_of_range);
}

TEST_CASE("oracle trajectory agrees with an independent RK4 run") {
  const auto lv = build_problem("lotka_volterra");
  Rhs rhs = [](double, const std::vector<double>& y) {
    return std::vector<double>{0.1 * y[0] - 0.02 * y[0] * y[1], -0.4 * y[1] + 0.02 * y[0] * y[1]};
  };
  const auto ref = rk4_integrate(rhs, {10.0, 10.0}, 0.0, 37.3, 0.001);
  std::vector<double> t{37.3};
  const auto y = oracle_solution(lv, t);
  CHECK(std::abs(y[0] - ref.y.back()[0]) <= 1e-7);
  CHECK(std::abs(y[1] - ref.y.back()[1]) <= 1e-7);
}

TEST_CASE("generated data satisfies its constraints") {
  for (const auto& name : problem_names()) {
    const auto spec = build_problem(name);
    const std::size_t n = std::min<std::size_t>(spec.default_points, 400);
    const auto d = generate_dataset(spec, n, 1);
    INFO(name);
    CHECK(d.size() == n);
    CHECK(max_constraint_residual(spec, d) <= 1e-6);
  }
}

TEST_CASE("co-oxidation site balance holds exactly") {
  const auto spec = build_problem("co_oxidation");
  const auto d = generate_dataset(spec, 200, 3);
  for (std::size_t i = 0; i < d.size(); ++i) CHECK(d.y(i)[1] + d.y(i)[2] == 1.0);
}

TEST_CASE("dataset sizes, ranges and split") {
  const auto ode = build_problem("ode_system");
  const auto d = generate_dataset(ode, 1500, 4);
  CHECK(d.size() == 1500);
  double lo = 1e9, hi = -1e9;
  for (std::size_t i = 0; i < d.size(); ++i) {
    lo = std::min(lo, d.x(i)[0]);
    hi = std::max(hi, d.x(i)[0]);
  }
  CHECK(lo == -4.0);
  CHECK(hi == 4.0);
  std::size_t train = 0;
  for (auto t : d.train) train += t;
  CHECK(train == 1200);

  const auto heat = build_problem("heat_1d");
  CHECK(heat.grid_size() == 10000);
  const auto h1 = generate_dataset(heat, 5000, 9), h2 = generate_dataset(heat, 5000, 9);
  CHECK(h1.size() == 5000);
  CHECK(h1.inputs == h2.inputs);
  CHECK(h1.train == h2.train);
  CHECK(generate_dataset(heat, 5000, 10).inputs != h1.inputs);

  for (bool split : {true, false}) {
    const auto s = h1.subset(split);
    std::set<std::pair<double, double>> seen;
    for (std::size_t i = 0; i < s.size(); ++i) seen.insert({s.x(i)[0], s.x(i)[1]});
    CHECK(seen.size() == s.size());
  }
  CHECK_THROWS_AS(generate_dataset(heat, 10001, 1), std::invalid_argument);
}

TEST_CASE("kkt pools") {
  CHECK(kkt_pool(build_problem("quadratic"), std::nullopt).size() == 1);
  const auto heat = build_problem("heat_1d");
  const auto pool = kkt_pool(heat, heat.coupling);
  REQUIRE(pool.size() == 4);
  const auto& base = pool.at({false, false});
  for (const auto& [key, sys] : pool) {
    const std::size_t extra = (key.bc ? 1 : 0) + (key.ic ? 1 : 0);
    CHECK(sys.num_extra_equalities == extra);
    CHECK(sys.size() == base.size() + extra);
    CHECK(sys.layout.n_d == base.layout.n_d);
    CHECK(sys.layout.n_eq == base.layout.n_eq + extra);
  }

  std::vector<double> left{0.0, 3.0}, right{5.0, 3.0}, start{2.0, 0.0}, corner{0.0, 0.0}, inside{2.0, 3.0};
  CHECK(select_pool(heat, left) == PoolKey{true, false});
  CHECK(select_pool(heat, right) == PoolKey{true, false});
  CHECK(select_pool(heat, start) == PoolKey{false, true});
  CHECK(select_pool(heat, corner) == PoolKey{true, true});
  CHECK(select_pool(heat, inside) == PoolKey{false, false});
  std::vector<double> near{1e-10, 3.0};
  CHECK(select_pool(heat, near).bc);
}

TEST_CASE("boundary projection pins the boundary value") {
  const auto heat = build_problem("heat_1d");
  const auto pool = kkt_pool(heat, heat.coupling);
  const auto& sys = pool.at({true, false});
  // Arbitrary backbone guesses at x = 0.
  proj::BackboneBundle<double> b;
  b.inputs = {0.0, 0.7};
  b.y_hat = {0.3};
  b.d_hat.assign(sys.layout.n_d, 0.1);
  b.neighbor_evals = {0.25, 0.2};
  const auto r = proj::project<double>(sys, b, {}, proj::ProjectionConfig{});
  REQUIRE(r.converged);
  CHECK(std::abs(r.y_proj[0]) <= 1e-10);
}
