#include <catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "daehn/autodiff/dual2.hpp"
#include "daehn/autodiff/tape.hpp"

using namespace daehn::ad;
using Catch::Approx;

namespace {

template <class F>
double central_diff(F&& f, std::vector<double> x, std::size_t i, double h = 1e-5) {
  x[i] += h;
  const double fp = f(x);
  x[i] -= 2 * h;
  const double fm = f(x);
  return (fp - fm) / (2 * h);
}

// Small tanh MLP used as a test function; weights shared by every scalar type.
struct TinyMlp {
  std::vector<std::vector<double>> W, b;
  std::vector<std::size_t> dims;

  TinyMlp(std::size_t in, std::size_t hidden, std::size_t depth, std::size_t out, unsigned seed) {
    std::mt19937 rng(seed);
    std::uniform_real_distribution<double> u(-0.5, 0.5);
    dims.push_back(in);
    for (std::size_t l = 0; l < depth; ++l) dims.push_back(hidden);
    dims.push_back(out);
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
      W.emplace_back(dims[l] * dims[l + 1]);
      b.emplace_back(dims[l + 1]);
      for (auto& w : W.back()) w = u(rng);
      for (auto& v : b.back()) v = u(rng);
    }
  }

  template <class T, class P>
  std::vector<T> run(std::span<const T> x, const P& weight) const {
    using std::tanh;
    std::vector<T> a(x.begin(), x.end());
    std::size_t k = 0;
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
      std::vector<T> z(dims[l + 1]);
      for (std::size_t o = 0; o < dims[l + 1]; ++o) {
        T s = weight(k + dims[l] * dims[l + 1] + o, b[l][o]);
        for (std::size_t i = 0; i < dims[l]; ++i) s = s + weight(k + o * dims[l] + i, W[l][o * dims[l] + i]) * a[i];
        z[o] = (l + 2 < dims.size()) ? T(tanh(s)) : s;
      }
      k += dims[l] * dims[l + 1] + dims[l + 1];
      a = std::move(z);
    }
    return a;
  }

  template <class T>
  std::vector<T> operator()(std::span<const T> x) const {
    return run<T>(x, [](std::size_t, double w) { return T(w); });
  }
};

}  // namespace

TEST_CASE("trace evaluates programs directly") {
  const std::vector<double> x7{7.0};
  auto t = trace([](std::span<const Var> v) { return std::vector<Var>{v[0]}; }, x7);
  CHECK(t.outputs[0].value() == 7.0);

  const std::vector<double> xy{3.0, 4.0};
  auto p = trace([](std::span<const Var> v) { return std::vector<Var>{v[0] * v[1]}; }, xy);
  CHECK(p.outputs[0].value() == 12.0);

  const std::vector<double> z{0.0};
  auto th = trace([](std::span<const Var> v) { return std::vector<Var>{tanh(v[0])}; }, z);
  CHECK(th.outputs[0].value() == 0.0);
}

TEST_CASE("trace reports domain errors") {
  const std::vector<double> neg{-1.0};
  CHECK_THROWS_AS(trace([](std::span<const Var> v) { return std::vector<Var>{sqrt(v[0])}; }, neg), DomainError);
  CHECK_THROWS_AS(trace([](std::span<const Var> v) { return std::vector<Var>{log(v[0])}; }, neg), DomainError);
}

TEST_CASE("reverse gradients match finite differences") {
  const std::vector<double> x3{3.0};
  auto sq = trace([](std::span<const Var> v) { return std::vector<Var>{v[0] * v[0]}; }, x3);
  const double fd = central_diff([](const std::vector<double>& x) { return x[0] * x[0]; }, x3, 0);
  CHECK(sq.gradient(0)[0] == Approx(fd).epsilon(1e-8));
  CHECK(sq.gradient(0)[0] == Approx(6.0));

  auto c = trace([](std::span<const Var>) { return std::vector<Var>{Var(5.0)}; }, x3);
  CHECK(c.gradient(0)[0] == 0.0);

  const std::vector<double> xy{3.0, 4.0};
  auto p = trace([](std::span<const Var> v) { return std::vector<Var>{v[0] * v[1]}; }, xy);
  const auto g = p.gradient(0);
  CHECK(g[0] == Approx(central_diff([](const std::vector<double>& x) { return x[0] * x[1]; }, xy, 0)));
  CHECK(g[1] == Approx(central_diff([](const std::vector<double>& x) { return x[0] * x[1]; }, xy, 1)));
}

TEST_CASE("property: reverse gradients of mixed primitives agree with central differences") {
  auto f = [](auto x0, auto x1, auto x2) {
    using std::cos;
    using std::exp;
    using std::log;
    using std::sin;
    using std::sqrt;
    using std::tanh;
    return exp(sin(x0) * x1) / (1.0 + x2 * x2) + sqrt(x1 * x1 + 1.0) * log(x2 + 3.0) - tanh(x0 - x2) * cos(x1) +
           x0 * x0 * x0 / (2.0 + x1 * x1);
  };
  std::mt19937 rng(11);
  std::uniform_real_distribution<double> u(-1.5, 1.5);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> x{u(rng), u(rng), u(rng)};
    auto t = trace([&](std::span<const Var> v) { return std::vector<Var>{f(v[0], v[1], v[2])}; }, x);
    const auto g = t.gradient(0);
    for (std::size_t i = 0; i < 3; ++i) {
      const double fd = central_diff([&](const std::vector<double>& y) { return f(y[0], y[1], y[2]); }, x, i);
      CHECK(std::abs(g[i] - fd) <= 1e-5 * std::abs(fd) + 1e-8);
    }
  }
}

TEST_CASE("forward first derivatives") {
  const std::vector<double> x{1.3};
  auto lin = [](std::span<const Dual2<double>> v) { return std::vector<Dual2<double>>{2.0 * v[0]}; };
  CHECK(forward_first(lin, x, 0)[0] == 2.0);
  auto id = [](std::span<const Dual2<double>> v) { return std::vector<Dual2<double>>{v[0]}; };
  CHECK(forward_first(id, x, 0)[0] == 1.0);
}

TEST_CASE("forward first derivative of a 4x32 MLP matches central differences and the reverse gradient") {
  const TinyMlp net(3, 32, 4, 2, 5);
  const std::vector<double> x{0.3, -0.7, 1.1};
  auto rev = trace([&](std::span<const Var> v) { return net(v); }, x);
  for (std::size_t axis = 0; axis < 3; ++axis) {
    const auto d1 = forward_first([&](std::span<const Dual2<double>> v) { return net(v); }, x, axis);
    for (std::size_t k = 0; k < 2; ++k) {
      const double fd = central_diff(
          [&](const std::vector<double>& y) { return net(std::span<const double>(y))[k]; }, x, axis, 1e-6);
      CHECK(std::abs(d1[k] - fd) <= 1e-6 * std::abs(fd) + 1e-9);
      const double r = rev.gradient(k)[axis];
      CHECK(std::abs(d1[k] - r) <= 1e-10 * std::abs(r) + 1e-14);
    }
  }
}

TEST_CASE("forward second derivatives") {
  const std::vector<double> x{2.0, -1.0};
  auto affine = [](std::span<const Dual2<double>> v) {
    return std::vector<Dual2<double>>{3.0 * v[0] - 2.0 * v[1] + 1.0, (v[0] + v[1]) * 0.5};
  };
  for (std::size_t a = 0; a < 2; ++a)
    for (double d2 : forward_second(affine, x, a)) CHECK(d2 == 0.0);

  const std::vector<double> zero{0.0};
  auto th = [](std::span<const Dual2<double>> v) { return std::vector<Dual2<double>>{tanh(v[0])}; };
  CHECK(forward_second(th, zero, 0)[0] == 0.0);

  const std::vector<double> two{2.0};
  auto cube = [](std::span<const Dual2<double>> v) { return std::vector<Dual2<double>>{v[0] * v[0] * v[0]}; };
  CHECK(forward_second(cube, two, 0)[0] == Approx(12.0).epsilon(1e-14));
  auto cube_pow = [](std::span<const Dual2<double>> v) { return std::vector<Dual2<double>>{pow(v[0], 3)}; };
  CHECK(forward_second(cube_pow, two, 0)[0] == Approx(12.0).epsilon(1e-14));
}

TEST_CASE("second-order chain rule on primitives matches closed forms") {
  const double x = 0.37;
  auto jet = [&](auto f) { return f(Dual2<double>::variable(x)); };
  auto e = jet([](auto v) { return exp(v * v); });
  CHECK(e.d2 == Approx((2 + 4 * x * x) * std::exp(x * x)));
  auto s = jet([](auto v) { return sin(3.0 * v); });
  CHECK(s.d2 == Approx(-9 * std::sin(3 * x)));
  auto l = jet([](auto v) { return log(v); });
  CHECK(l.d2 == Approx(-1 / (x * x)));
  auto r = jet([](auto v) { return sqrt(v); });
  CHECK(r.d2 == Approx(-0.25 * std::pow(x, -1.5)));
  auto q = jet([](auto v) { return 1.0 / v; });
  CHECK(q.d2 == Approx(2 / (x * x * x)));
  auto t = jet([](auto v) { return tanh(v); });
  const double th = std::tanh(x);
  CHECK(t.d2 == Approx(-2 * th * (1 - th * th)));
  auto sp = jet([](auto v) { return softplus(v); });
  const double sg = 1 / (1 + std::exp(-x));
  CHECK(sp.d1 == Approx(sg));
  CHECK(sp.d2 == Approx(sg * (1 - sg)));
}

TEST_CASE("forward derivatives nested on the tape are parameter-differentiable") {
  SECTION("y = theta x") {
    Tape tape;
    const Var theta = tape.variable(1.7);
    const Dual2<Var> x = Dual2<Var>::variable(Var(0.4));
    const Dual2<Var> y = Dual2<Var>::constant(theta) * x;
    CHECK(tape.adjoints(y.d1)[static_cast<std::size_t>(theta.index())] == 1.0);
  }
  SECTION("y = theta x^2") {
    Tape tape;
    const Var theta = tape.variable(-0.3);
    const Dual2<Var> x = Dual2<Var>::variable(Var(0.9));
    const Dual2<Var> y = Dual2<Var>::constant(theta) * x * x;
    CHECK(tape.adjoints(y.d2)[static_cast<std::size_t>(theta.index())] == Approx(2.0));
  }
  SECTION("4x32 MLP input derivative versus finite differences over parameters") {
    TinyMlp net(2, 32, 4, 1, 9);
    const std::vector<double> x{0.2, -0.4};
    std::size_t count = 0;
    for (std::size_t l = 0; l < net.W.size(); ++l) count += net.W[l].size() + net.b[l].size();

    auto flat = [&](std::size_t idx) -> double& {
      for (std::size_t l = 0; l < net.W.size(); ++l) {
        if (idx < net.W[l].size()) return net.W[l][idx];
        idx -= net.W[l].size();
        if (idx < net.b[l].size()) return net.b[l][idx];
        idx -= net.b[l].size();
      }
      throw std::out_of_range("param");
    };
    auto dydx = [&]() {
      return forward_first([&](std::span<const Dual2<double>> v) { return net(v); }, x, 0)[0];
    };

    Tape tape;
    std::vector<Var> theta;
    for (std::size_t i = 0; i < count; ++i) theta.push_back(tape.variable(flat(i)));
    // Flat index order in run(): per layer W (o*in+i) then b, which matches flat().
    std::vector<Dual2<Var>> xin{Dual2<Var>::variable(Var(x[0])), Dual2<Var>::constant(Var(x[1]))};
    const auto y = net.run<Dual2<Var>>(std::span<const Dual2<Var>>(xin),
                                       [&](std::size_t k, double) { return Dual2<Var>::constant(theta[k]); });
    const auto adj = tape.adjoints(y[0].d1);

    std::mt19937 rng(3);
    std::uniform_int_distribution<std::size_t> pick(0, count - 1);
    for (int trial = 0; trial < 10; ++trial) {
      const std::size_t k = pick(rng);
      const double keep = flat(k), h = 1e-5;
      flat(k) = keep + h;
      const double fp = dydx();
      flat(k) = keep - h;
      const double fm = dydx();
      flat(k) = keep;
      const double fd = (fp - fm) / (2 * h);
      CHECK(std::abs(adj[static_cast<std::size_t>(theta[k].index())] - fd) <= 1e-4 * std::abs(fd) + 1e-8);
    }
  }
}

TEST_CASE("tape replay is bitwise deterministic") {
  const TinyMlp net(2, 16, 3, 2, 1);
  const std::vector<double> x{0.5, 0.25};
  auto a = trace([&](std::span<const Var> v) { return net(v); }, x);
  auto b = trace([&](std::span<const Var> v) { return net(v); }, x);
  REQUIRE(a.tape->size() == b.tape->size());
  for (std::size_t i = 0; i < a.tape->size(); ++i) CHECK(a.tape->value(i) == b.tape->value(i));
  CHECK(a.gradient(1) == b.gradient(1));
}

TEST_CASE("tape is topologically ordered") {
  const TinyMlp net(2, 8, 2, 1, 2);
  const std::vector<double> x{0.1, 0.2};
  auto t = trace([&](std::span<const Var> v) { return net(v); }, x);
  for (std::size_t i = 0; i < t.tape->size(); ++i) {
    CHECK(t.tape->node(i).lhs < static_cast<int>(i));
    CHECK(t.tape->node(i).rhs < static_cast<int>(i));
  }
}
