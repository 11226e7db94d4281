#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>
#include <sstream>
#include <vector>

#include "daehn/network/mlp.hpp"

using namespace daehn;
using net::BackboneConfig;
using net::NetworkParams;

namespace {

BackboneConfig small_config(std::size_t in, std::size_t out, std::size_t mult, std::uint64_t seed = 3) {
  BackboneConfig c;
  c.input_dim = in;
  c.output_dim = out;
  c.multiplier_dim = mult;
  c.hidden_dim = 8;
  c.model_depth = 3;
  c.seed = seed;
  return c;
}

double rel(double a, double b) { return std::abs(a - b) / std::max(1.0, std::abs(b)); }

std::vector<double> y_at(const NetworkParams& p, std::vector<double> x) {
  return net::forward<double>(p, std::span<const double>(x)).y_hat;
}

}  // namespace

TEST_CASE("init is deterministic per seed and has the layer-count size") {
  BackboneConfig c;
  c.input_dim = 1;
  c.output_dim = 2;
  c.multiplier_dim = 4;
  c.hidden_dim = 32;
  c.model_depth = 4;
  c.seed = 11;
  const auto a = net::init(c), b = net::init(c);
  CHECK(a.flatten() == b.flatten());
  // (1*32+32) + 3*(32*32+32) + (32*6+6)
  CHECK(a.weight_count() == 64 + 3 * 1056 + 198);
  CHECK(net::layer_parameter_count(c) == a.weight_count());
  c.seed = 12;
  CHECK(net::init(c).flatten() != a.flatten());

  for (const auto& L : a.layers) {
    const double bound = std::sqrt(6.0 / double(L.in + L.out));
    for (double w : L.weight) CHECK(std::abs(w) <= bound);
    for (double v : L.bias) CHECK(v == 0.0);
  }
}

TEST_CASE("zero network outputs zero on both heads") {
  const auto p = net::init_zero(small_config(2, 2, 3));
  std::vector<double> x{0.3, -4.0};
  const auto h = net::forward<double>(p, std::span<const double>(x));
  for (double v : h.y_hat) CHECK(v == 0.0);
  for (double v : h.lambda_hat) CHECK(v == 0.0);
}

TEST_CASE("softplus slots are non-negative") {
  auto c = small_config(1, 1, 3);
  c.num_softplus = 2;
  const auto p = net::init(c);
  for (double t = -5; t <= 5; t += 0.5) {
    std::vector<double> x{t};
    const auto h = net::forward<double>(p, std::span<const double>(x));
    CHECK(h.lambda_hat[1] > 0.0);
    CHECK(h.lambda_hat[2] > 0.0);
  }
}

TEST_CASE("outputs stay finite and bounded on [-10,10]") {
  BackboneConfig c = small_config(2, 2, 2);
  c.hidden_dim = 32;
  c.model_depth = 4;
  const auto p = net::init(c);
  const auto& last = p.layers.back();
  std::vector<double> bound(last.out, 0.0);
  for (std::size_t r = 0; r < last.out; ++r) {
    for (std::size_t k = 0; k < last.in; ++k) bound[r] += std::abs(last.weight[r * last.in + k]);
    bound[r] += std::abs(last.bias[r]);
  }
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-10.0, 10.0);
  for (int i = 0; i < 200; ++i) {
    std::vector<double> x{u(rng), u(rng)};
    const auto h = net::forward<double>(p, std::span<const double>(x));
    for (std::size_t r = 0; r < 2; ++r) {
      CHECK(std::isfinite(h.y_hat[r]));
      CHECK(std::abs(h.y_hat[r]) <= bound[r] + 1e-12);
    }
  }
}

TEST_CASE("linear net derivative and neighbor evaluation") {
  BackboneConfig c;
  c.input_dim = 1;
  c.output_dim = 1;
  c.model_depth = 0;
  c.activation = net::Activation::identity;
  auto p = net::init(c);
  p.layers[0].weight = {2.0};
  sym::ConstraintSet cs(1, 1);
  cs.d(0, 0, 1);
  std::vector<double> x{0.7};
  const auto b = net::forward_with_derivatives<double>(p, std::span<const double>(x), cs, sym::TaylorCoupling{0.1, 1});
  REQUIRE(b.d_hat.size() == 1);
  CHECK(b.d_hat[0] == Catch::Approx(2.0).epsilon(1e-15));
  REQUIRE(b.neighbor_evals.size() == 1);
  CHECK(b.neighbor_evals[0] == Catch::Approx(b.y_hat[0] + 0.2).epsilon(1e-14));
}

TEST_CASE("single-axis two-output bundle sizes") {
  const auto p = net::init(small_config(1, 2, 4));
  sym::ConstraintSet cs(1, 2);
  sym::register_coupling_derivs(cs, {0.1, 1});
  cs.d(0, 0, 2);
  cs.d(1, 0, 2);
  std::vector<double> x{1.5};
  const auto b = net::forward_with_derivatives<double>(p, std::span<const double>(x), cs, sym::TaylorCoupling{});
  CHECK(b.d_hat.size() == 4);
  CHECK(b.neighbor_evals.size() == 2);
  CHECK(b.lambda_hat.size() == 4);
}

TEST_CASE("bundle derivatives agree with central differences") {
  auto p = net::init(small_config(2, 2, 1, 21));
  p.input_shift = {0.5, -1.0};
  p.input_scale = {2.0, 0.5};
  sym::ConstraintSet cs(2, 2);
  for (std::size_t out = 0; out < 2; ++out)
    for (std::size_t a = 0; a < 2; ++a)
      for (int o = 1; o <= 2; ++o) cs.register_deriv({out, a, o});
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> x{u(rng), u(rng)};
    const auto b = net::forward_with_derivatives<double>(p, std::span<const double>(x), cs, std::nullopt);
    for (std::size_t q = 0; q < cs.deriv_vars.size(); ++q) {
      const auto v = cs.deriv_vars[q];
      double fd;
      auto shifted = [&](double h) {
        auto xs = x;
        xs[v.axis] += h;
        return y_at(p, xs)[v.output];
      };
      // Five-point stencils.
      if (v.order == 1) {
        const double h = 1e-3;
        fd = (-shifted(2 * h) + 8 * shifted(h) - 8 * shifted(-h) + shifted(-2 * h)) / (12 * h);
      } else {
        const double h = 1e-2;
        fd = (-shifted(2 * h) + 16 * shifted(h) - 30 * shifted(0) + 16 * shifted(-h) - shifted(-2 * h)) / (12 * h * h);
      }
      CHECK(rel(b.d_hat[q], fd) <= 1e-6);
    }
  }
}

TEST_CASE("bundle on the tape: gradient with respect to the input") {
  const auto p = net::init(small_config(1, 1, 0, 4));
  sym::ConstraintSet cs(1, 1);
  cs.d(0, 0, 1);
  ad::Tape tape;
  ad::Var x = tape.variable(0.3);
  std::vector<ad::Var> pt{x};
  const auto b = net::forward_with_derivatives<ad::Var>(p, std::span<const ad::Var>(pt), cs, std::nullopt);
  const auto g = tape.adjoints(b.d_hat[0]);
  // d/dx of dy/dx is the second derivative.
  cs.d(0, 0, 2);
  std::vector<double> xd{0.3};
  const auto ref = net::forward_with_derivatives<double>(p, std::span<const double>(xd), cs, std::nullopt);
  CHECK(rel(g[x.index()], ref.d_hat[1]) <= 1e-12);
}

TEST_CASE("batched jets match the single-point bundle") {
  auto p = net::init(small_config(2, 2, 2, 8));
  p.input_shift = {0.1, 2.0};
  p.input_scale = {1.5, 4.0};
  const std::size_t B = 9;
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  std::vector<double> inputs(2 * B);
  for (auto& v : inputs) v = u(rng);

  sym::ConstraintSet cs(2, 2);
  for (std::size_t out = 0; out < 2; ++out)
    for (std::size_t a = 0; a < 2; ++a)
      for (int o = 1; o <= 2; ++o) cs.register_deriv({out, a, o});
  const double delta = 0.05;

  net::JetCache cache;
  net::jet_forward(p, inputs, {true, true, true, delta}, cache);
  CHECK(cache.channels == 7);
  for (std::size_t b = 0; b < B; ++b) {
    std::span<const double> x(inputs.data() + 2 * b, 2);
    const auto ref = net::forward_with_derivatives<double>(p, x, cs, sym::TaylorCoupling{delta, 2});
    for (std::size_t r = 0; r < 2; ++r) CHECK(rel(cache.out(r, 0, b), ref.y_hat[r]) <= 1e-13);
    for (std::size_t k = 0; k < 2; ++k) CHECK(rel(cache.out(2 + k, 0, b), ref.lambda_hat[k]) <= 1e-13);
    for (std::size_t q = 0; q < cs.deriv_vars.size(); ++q) {
      const auto v = cs.deriv_vars[q];
      const std::size_t ch = v.order == 1 ? cache.ch_first(v.axis) : cache.ch_second(v.axis);
      CHECK(rel(cache.out(v.output, ch, b), ref.d_hat[q]) <= 1e-12);
    }
    for (std::size_t r = 0; r < 2; ++r)
      for (std::size_t a = 0; a < 2; ++a)
        CHECK(rel(cache.out(r, cache.ch_neighbor(a), b), ref.neighbor_evals[sym::neighbor_index(r, a, 2)]) <= 1e-13);
  }
}

TEST_CASE("batched backward matches finite differences of the weights") {
  for (int variant = 0; variant < 3; ++variant) {
    net::JetRequest req;
    req.first = variant >= 1;
    req.second = variant >= 2;
    req.neighbors = variant >= 1;
    auto p = net::init(small_config(2, 2, 1, 30 + variant));
    p.input_scale = {0.7, 1.3};
    const std::size_t B = 6;
    std::mt19937_64 rng(40 + variant);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::vector<double> inputs(2 * B);
    for (auto& v : inputs) v = u(rng);

    net::JetCache cache;
    net::jet_forward(p, inputs, req, cache);
    std::vector<double> w(cache.Z.back().size());
    for (auto& v : w) v = u(rng);
    auto objective = [&](const NetworkParams& q) {
      net::JetCache c;
      net::jet_forward(q, inputs, req, c);
      double s = 0.0;
      for (std::size_t i = 0; i < w.size(); ++i) s += w[i] * c.Z.back()[i];
      return s;
    };
    std::vector<double> grad(p.weight_count(), 0.0);
    net::jet_backward(p, cache, w, grad);

    const auto flat = p.flatten();
    std::uniform_int_distribution<std::size_t> pick(0, flat.size() - 1);
    for (int t = 0; t < 25; ++t) {
      const std::size_t i = pick(rng);
      auto hi = flat, lo = flat;
      const double h = 1e-6;
      hi[i] += h;
      lo[i] -= h;
      NetworkParams ph = p, pl = p;
      ph.unflatten(hi);
      pl.unflatten(lo);
      const double fd = (objective(ph) - objective(pl)) / (2 * h);
      CHECK(std::abs(grad[i] - fd) <= 1e-5 * std::max(1.0, std::abs(fd)));
    }
  }
}

TEST_CASE("checkpoint round trip is exact") {
  auto p = net::init(small_config(2, 1, 2, 77), {{"alpha", 0.1}, {"beta", 1.0 / 3.0}});
  p.input_shift = {0.125, -3.0};
  p.input_scale = {std::sqrt(2.0), 7.0};
  std::stringstream ss;
  net::save_checkpoint(p, ss);
  const auto q = net::load_checkpoint(ss);
  CHECK(q.flatten() == p.flatten());
  CHECK(q.phys_names == p.phys_names);
  CHECK(q.input_shift == p.input_shift);
  CHECK(q.input_scale == p.input_scale);
  CHECK(q.config.hidden_dim == p.config.hidden_dim);

  std::stringstream bad("not a checkpoint\n");
  CHECK_THROWS_AS(net::load_checkpoint(bad), std::runtime_error);
}
