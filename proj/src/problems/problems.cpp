#include "daehn/problems/problems.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <memory>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>

#include "daehn/autodiff/dual2.hpp"

namespace daehn::problems {

using J = ad::Dual2<double>;
using sym::Expr;

Trajectory rk4_integrate(const Rhs& rhs, std::vector<double> y, double t0, double t1, double dt) {
  if (!(dt > 0.0)) throw std::invalid_argument("rk4_integrate: dt must be positive");
  Trajectory tr;
  const std::size_t n = y.size();
  auto record = [&](double t) {
    for (double v : y)
      if (!std::isfinite(v)) {
        std::ostringstream os;
        os << "rk4_integrate: state became non-finite at t = " << t;
        throw std::runtime_error(os.str());
      }
    tr.t.push_back(t);
    tr.y.push_back(y);
  };
  record(t0);
  const auto steps = static_cast<std::size_t>(std::ceil((t1 - t0) / dt - 1e-9));
  std::vector<double> tmp(n);
  for (std::size_t s = 0; s < steps; ++s) {
    const double t = t0 + double(s) * dt;
    const double h = std::min(dt, t1 - t);
    const auto k1 = rhs(t, y);
    for (std::size_t i = 0; i < n; ++i) tmp[i] = y[i] + 0.5 * h * k1[i];
    const auto k2 = rhs(t + 0.5 * h, tmp);
    for (std::size_t i = 0; i < n; ++i) tmp[i] = y[i] + 0.5 * h * k2[i];
    const auto k3 = rhs(t + 0.5 * h, tmp);
    for (std::size_t i = 0; i < n; ++i) tmp[i] = y[i] + h * k3[i];
    const auto k4 = rhs(t + h, tmp);
    for (std::size_t i = 0; i < n; ++i) y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    record(s + 1 == steps ? t1 : t0 + double(s + 1) * dt);
  }
  return tr;
}

std::size_t ProblemSpec::grid_size() const {
  std::size_t n = 1;
  for (const auto& a : axes) {
    if (a.grid == 0) return default_points;
    n *= a.grid;
  }
  return n;
}

namespace {

// Closed-form solution evaluated on second-order jets; derivatives along an
// axis fall out of seeding that coordinate.
using Closed = std::function<std::vector<J>(const std::vector<J>&)>;

void attach_closed_form(ProblemSpec& s, Closed f) {
  s.oracle = [f](std::span<const double> x) {
    std::vector<J> xj(x.begin(), x.end());
    const auto y = f(xj);
    std::vector<double> out;
    for (const auto& v : y) out.push_back(v.v);
    return out;
  };
  s.oracle_derivative = [f](std::span<const double> x, const sym::DerivVar& v) {
    std::vector<J> xj;
    for (std::size_t i = 0; i < x.size(); ++i) xj.push_back(i == v.axis ? J::variable(x[i]) : J::constant(x[i]));
    const auto y = f(xj);
    if (v.order == 1) return y.at(v.output).d1;
    if (v.order == 2) return y.at(v.output).d2;
    throw std::invalid_argument("oracle derivative order must be 1 or 2");
  };
}

// Autonomous ODE state with an output map; the oracle is a fine RK4 path
// refined by one partial step from the nearest stored node.
struct OdeOracle {
  std::function<std::vector<J>(const std::vector<J>&)> rhs;
  std::function<std::vector<J>(const std::vector<J>&)> outputs;
  Trajectory path;
  double t0 = 0.0, h = 0.0;

  std::vector<double> f(const std::vector<double>& y) const {
    std::vector<J> yj(y.begin(), y.end());
    std::vector<double> r;
    for (const auto& v : rhs(yj)) r.push_back(v.v);
    return r;
  }

  std::vector<double> state(double t) const {
    const double pos = (t - t0) / h;
    if (pos < -1e-9 || pos > double(path.t.size() - 1) + 1e-9)
      throw std::out_of_range("oracle: time outside the simulated horizon");
    auto k = static_cast<std::size_t>(std::clamp(std::floor(pos), 0.0, double(path.t.size() - 1)));
    const double tk = path.t[k];
    if (t - tk <= 0.0) return path.y[k];
    const Rhs r = [this](double, const std::vector<double>& y) { return f(y); };
    return rk4_integrate(r, path.y[k], tk, t, h).y.back();
  }

  // (value, d/dt, d2/dt2) of each output.
  std::vector<J> jets(double t) const {
    const auto y = state(t);
    const auto dy = f(y);
    std::vector<J> seed;
    for (std::size_t i = 0; i < y.size(); ++i) seed.push_back(J::variable(y[i], dy[i]));
    const auto fy = rhs(seed);  // d1 = (df/dy) f = y''
    std::vector<J> traj;
    for (std::size_t i = 0; i < y.size(); ++i) traj.emplace_back(y[i], dy[i], fy[i].d1);
    return outputs(traj);
  }
};

void attach_ode(ProblemSpec& s, std::shared_ptr<OdeOracle> o) {
  s.oracle = [o](std::span<const double> x) {
    std::vector<double> out;
    for (const auto& v : o->jets(x[0])) out.push_back(v.v);
    return out;
  };
  s.oracle_derivative = [o](std::span<const double> x, const sym::DerivVar& v) {
    const auto j = o->jets(x[0]).at(v.output);
    if (v.order == 1) return j.d1;
    if (v.order == 2) return j.d2;
    throw std::invalid_argument("oracle derivative order must be 1 or 2");
  };
}

std::shared_ptr<OdeOracle> make_ode(std::function<std::vector<J>(const std::vector<J>&)> rhs,
                                    std::function<std::vector<J>(const std::vector<J>&)> outputs,
                                    std::vector<double> y0, double t0, double t1, double h) {
  auto o = std::make_shared<OdeOracle>();
  o->rhs = std::move(rhs);
  o->outputs = std::move(outputs);
  o->t0 = t0;
  o->h = h;
  const Rhs r = [p = o.get()](double, const std::vector<double>& y) { return p->f(y); };
  o->path = rk4_integrate(r, std::move(y0), t0, t1, h);
  return o;
}

ProblemSpec quadratic() {
  ProblemSpec s;
  s.name = "quadratic";
  s.summary = "roots of Y^2 - x1 Y + x2 = 0 via y1 + y2 = x1, y1 y2 = x2";
  s.axes = {{"x1", 3.0, 4.0, 40}, {"x2", 0.0, 1.0, 40}};
  s.outputs = {"y1", "y2"};
  s.default_points = 1000;
  s.provenance = "analytic";
  s.constraints = [] {
    sym::ConstraintSet cs(2, 2);
    cs.equalities.push_back(sym::output(0) + sym::output(1) - sym::input(0));
    cs.equalities.push_back(sym::output(0) * sym::output(1) - sym::input(1));
    return cs;
  };
  attach_closed_form(s, [](const std::vector<J>& x) {
    const J r = ad::sqrt(x[0] * x[0] - 4.0 * x[1]);
    return std::vector<J>{0.5 * (x[0] + r), 0.5 * (x[0] - r)};
  });
  return s;
}

ProblemSpec ode_system() {
  ProblemSpec s;
  s.name = "ode_system";
  s.summary = "y1'' - y1 + 2 y2 = 0, y2'' + 4 y2 - 2 y1 + x1^2 - 1 = 0 on [-4, 4]";
  s.axes = {{"x1", -4.0, 4.0, 0}};
  s.outputs = {"y1", "y2"};
  s.default_points = 1500;
  s.provenance = "analytic";
  s.coupling = sym::TaylorCoupling{0.1, 1};
  s.constraints = [] {
    sym::ConstraintSet cs(1, 2);
    const Expr y1xx = cs.d(0, 0, 2);
    const Expr y2xx = cs.d(1, 0, 2);
    const Expr x = sym::input(0), y1 = sym::output(0), y2 = sym::output(1);
    cs.differential.push_back(y1xx - y1 + 2.0 * y2);
    cs.differential.push_back(y2xx + 4.0 * y2 - 2.0 * y1 + x * x - 1.0);
    return cs;
  };
  attach_closed_form(s, [](const std::vector<J>& xv) {
    constexpr double A = -2.0, B = -2.0, C = 0.5, D = 0.0;
    const J x = xv[0];
    const J x2 = x * x, x4 = x2 * x2;
    const J sn = ad::sin(std::sqrt(3.0) * x), cs = ad::cos(std::sqrt(3.0) * x);
    const J y1 = x4 / 18.0 - 5.0 / 9.0 * x2 - 8.0 / 27.0 + A * sn + B * cs + 2.0 * C + 2.0 * D * x;
    const J y2 = x4 / 36.0 - 11.0 / 18.0 * x2 + 11.0 / 27.0 + 2.0 * A * sn + 2.0 * B * cs + C + D * x;
    return std::vector<J>{y1, y2};
  });
  return s;
}

ProblemSpec co_oxidation() {
  ProblemSpec s;
  s.name = "co_oxidation";
  s.summary = "-dP/dt = k' theta_CO, theta_CO = k1 P theta_V, theta_V + theta_CO = 1 on [0, 1000]";
  s.axes = {{"t", 0.0, 1000.0, 0}};
  s.outputs = {"P_CO", "theta_CO", "theta_V"};
  s.param_names = {"k_prime", "k1"};
  s.true_params = {0.05, 0.02};
  s.estimate_init = {0.025, 0.01};
  s.default_points = 2000;
  s.provenance = "rk4";
  s.coupling = sym::TaylorCoupling{0.01, 1};
  s.constraints = [] {
    sym::ConstraintSet cs(1, 3, 2);
    const Expr dP = cs.d(0, 0, 1);
    const Expr P = sym::output(0), th = sym::output(1), tv = sym::output(2);
    cs.differential.push_back(dP + sym::param(0) * th);
    cs.equalities.push_back(th - sym::param(1) * P * tv);
    cs.equalities.push_back(tv + th - 1.0);
    return cs;
  };
  const double kp = s.true_params[0], k1 = s.true_params[1];
  auto rhs = [kp, k1](const std::vector<J>& y) {
    return std::vector<J>{-kp * (k1 * y[0]) / (1.0 + k1 * y[0])};
  };
  auto outputs = [k1](const std::vector<J>& y) {
    const J th = (k1 * y[0]) / (1.0 + k1 * y[0]);
    return std::vector<J>{y[0], th, 1.0 - th};
  };
  attach_ode(s, make_ode(rhs, outputs, {10.0}, 0.0, 1000.0, 0.05));
  return s;
}

ProblemSpec lotka_volterra(bool inverse) {
  ProblemSpec s;
  s.name = inverse ? "lv_inverse" : "lotka_volterra";
  s.summary = inverse ? "Lotka-Volterra with (alpha, beta, gamma, delta) learned from data"
                      : "dx/dt = alpha x - beta x y, dy/dt = -gamma y + delta x y on [0, 50]";
  s.axes = {{"t", 0.0, 50.0, 0}};
  s.outputs = {"x", "y"};
  s.param_names = {"alpha", "beta", "gamma", "delta"};
  s.true_params = {0.1, 0.02, 0.4, 0.02};
  s.estimate_init = {0.05, 0.01, 0.2, 0.01};
  s.default_points = 2000;
  s.provenance = "rk4";
  s.coupling = sym::TaylorCoupling{0.1, 1};
  s.constraints = [] {
    sym::ConstraintSet cs(1, 2, 4);
    const Expr dx = cs.d(0, 0, 1);
    const Expr dy = cs.d(1, 0, 1);
    const Expr x = sym::output(0), y = sym::output(1);
    cs.differential.push_back(dx - (sym::param(0) * x - sym::param(1) * x * y));
    cs.differential.push_back(dy - (-sym::param(2) * y + sym::param(3) * x * y));
    return cs;
  };
  const auto p = s.true_params;
  auto rhs = [p](const std::vector<J>& y) {
    return std::vector<J>{p[0] * y[0] - p[1] * y[0] * y[1], -p[2] * y[1] + p[3] * y[0] * y[1]};
  };
  auto outputs = [](const std::vector<J>& y) { return y; };
  attach_ode(s, make_ode(rhs, outputs, {10.0, 10.0}, 0.0, 50.0, 0.005));
  return s;
}

ProblemSpec pde_multisol() {
  ProblemSpec s;
  s.name = "pde_multisol";
  s.summary = "y_x1x1 - 5 y_x2 + y = x1 x2^2 (x2 - 15) on [-1, 1]^2";
  s.axes = {{"x1", -1.0, 1.0, 50}, {"x2", -1.0, 1.0, 50}};
  s.outputs = {"y1"};
  s.default_points = 2000;
  s.provenance = "analytic";
  s.coupling = sym::TaylorCoupling{0.1, 2};
  s.constraints = [] {
    sym::ConstraintSet cs(2, 1);
    const Expr yxx = cs.d(0, 0, 2);
    const Expr yt = cs.d(0, 1, 1);
    const Expr x1 = sym::input(0), x2 = sym::input(1);
    cs.differential.push_back(yxx - 5.0 * yt + sym::output(0) - x1 * x2 * x2 * (x2 - 15.0));
    return cs;
  };
  attach_closed_form(s, [](const std::vector<J>& x) {
    return std::vector<J>{6.0 * ad::exp(2.0 * x[0] + x[1]) + x[0] * x[1] * x[1] * x[1]};
  });
  return s;
}

ProblemSpec heat_1d() {
  constexpr double alpha = 1.0, n = 5.0, l = 5.0;
  const double k = n * std::numbers::pi / l;
  ProblemSpec s;
  s.name = "heat_1d";
  s.summary = "T_t = alpha T_xx on [0, 5] x [0, 10], T(x, 0) = sin(n pi x / l), T(0, t) = T(l, t) = 0";
  s.axes = {{"x", 0.0, l, 100}, {"t", 0.0, 10.0, 100}};
  s.outputs = {"T"};
  s.default_points = 5000;
  s.provenance = "analytic";
  s.coupling = sym::TaylorCoupling{0.1, 2};
  s.constraints = [] {
    sym::ConstraintSet cs(2, 1);
    const Expr Tt = cs.d(0, 1, 1);
    const Expr Txx = cs.d(0, 0, 2);
    cs.differential.push_back(Tt - alpha * Txx);
    return cs;
  };
  s.boundary.push_back({"T(0,t)=T(l,t)=0", 0, {0.0, l}, sym::output(0)});
  s.initial.push_back({"T(x,0)=sin(n pi x/l)", 1, {0.0}, sym::output(0) - sym::sin(k * sym::input(0))});
  attach_closed_form(s, [k](const std::vector<J>& x) {
    return std::vector<J>{ad::sin(k * x[0]) * ad::exp(-alpha * k * k * x[1])};
  });
  return s;
}

std::vector<double> linspace(double lo, double hi, std::size_t n) {
  std::vector<double> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = n == 1 ? lo : lo + (hi - lo) * double(i) / double(n - 1);
  return v;
}

}  // namespace

std::vector<std::string> problem_names() {
  return {"quadratic", "ode_system", "co_oxidation", "lotka_volterra", "lv_inverse", "pde_multisol", "heat_1d"};
}

ProblemSpec build_problem(const std::string& name) {
  if (name == "quadratic") return quadratic();
  if (name == "ode_system") return ode_system();
  if (name == "co_oxidation") return co_oxidation();
  if (name == "lotka_volterra") return lotka_volterra(false);
  if (name == "lv_inverse") return lotka_volterra(true);
  if (name == "pde_multisol") return pde_multisol();
  if (name == "heat_1d") return heat_1d();
  throw std::invalid_argument("unknown problem: " + name);
}

Dataset Dataset::subset(bool train_split) const {
  Dataset d;
  d.input_dim = input_dim;
  d.output_dim = output_dim;
  d.provenance = provenance;
  for (std::size_t i = 0; i < size(); ++i) {
    if (bool(train[i]) != train_split) continue;
    d.inputs.insert(d.inputs.end(), x(i).begin(), x(i).end());
    d.targets.insert(d.targets.end(), y(i).begin(), y(i).end());
    d.train.push_back(train[i]);
  }
  return d;
}

namespace {

void assign_split(Dataset& d, std::mt19937_64& rng) {
  const std::size_t n = d.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  const std::size_t n_train = (n * 4 + 2) / 5;
  d.train.assign(n, 0);
  for (std::size_t k = 0; k < n_train; ++k) d.train[order[k]] = 1;
}

}  // namespace

Dataset generate_dataset(const ProblemSpec& spec, std::size_t num_points, std::uint64_t seed) {
  const std::size_t dim = spec.input_dim();
  std::vector<std::vector<double>> axis_values;
  bool tensor = true;
  for (const auto& a : spec.axes) tensor = tensor && a.grid > 0;
  if (num_points == 0) throw std::invalid_argument("generate_dataset: num_points must be positive");
  if (tensor) {
    for (const auto& a : spec.axes) axis_values.push_back(linspace(a.lo, a.hi, a.grid));
  } else {
    if (dim != 1) throw std::invalid_argument("generate_dataset: trajectory sampling needs one axis");
    axis_values.push_back(linspace(spec.axes[0].lo, spec.axes[0].hi, num_points));
  }
  std::size_t total = 1;
  for (const auto& v : axis_values) total *= v.size();
  if (num_points > total)
    throw std::invalid_argument("generate_dataset: " + std::to_string(num_points) + " points requested but the grid has " +
                                std::to_string(total));

  std::mt19937_64 rng(seed);
  std::vector<std::size_t> rows(total);
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  if (num_points < total) {
    std::shuffle(rows.begin(), rows.end(), rng);
    rows.resize(num_points);
    std::sort(rows.begin(), rows.end());
  }

  Dataset d;
  d.input_dim = dim;
  d.output_dim = spec.output_dim();
  d.provenance = spec.provenance;
  std::vector<double> x(dim);
  for (std::size_t r : rows) {
    std::size_t rem = r;
    for (std::size_t a = dim; a-- > 0;) {
      x[a] = axis_values[a][rem % axis_values[a].size()];
      rem /= axis_values[a].size();
    }
    const auto y = spec.oracle(x);
    d.inputs.insert(d.inputs.end(), x.begin(), x.end());
    d.targets.insert(d.targets.end(), y.begin(), y.end());
  }

  assign_split(d, rng);
  return d;
}

Dataset read_dataset_csv(const ProblemSpec& spec, const std::string& path, std::uint64_t seed) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot read " + path);
  auto split_line = [](const std::string& line) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    for (std::string c; std::getline(ss, c, ',');) {
      while (!c.empty() && (c.back() == '\r' || c.back() == ' ')) c.pop_back();
      while (!c.empty() && c.front() == ' ') c.erase(c.begin());
      cells.push_back(c);
    }
    return cells;
  };
  std::string line;
  if (!std::getline(is, line)) throw std::invalid_argument(path + ": empty file");
  const auto header = split_line(line);
  std::vector<std::string> expect;
  for (const auto& a : spec.axes) expect.push_back(a.name);
  for (const auto& o : spec.outputs) expect.push_back(o);
  const bool with_split = header.size() == expect.size() + 1 && header.back() == "split";
  if (!std::equal(expect.begin(), expect.end(), header.begin(), header.begin() + std::min(header.size(), expect.size())) ||
      (header.size() != expect.size() && !with_split)) {
    std::string want;
    for (const auto& e : expect) want += (want.empty() ? "" : ",") + e;
    throw std::invalid_argument(path + ": header must be " + want + "[,split]");
  }

  Dataset d;
  d.input_dim = spec.input_dim();
  d.output_dim = spec.output_dim();
  d.provenance = "file";
  for (std::size_t row = 2; std::getline(is, line); ++row) {
    if (line.empty() || line == "\r") continue;
    const auto cells = split_line(line);
    if (cells.size() != header.size())
      throw std::invalid_argument(path + ":" + std::to_string(row) + ": expected " + std::to_string(header.size()) +
                                  " fields");
    for (std::size_t k = 0; k < expect.size(); ++k) {
      std::size_t used = 0;
      double v = 0.0;
      try {
        v = std::stod(cells[k], &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != cells[k].size() || cells[k].empty())
        throw std::invalid_argument(path + ":" + std::to_string(row) + ": bad number '" + cells[k] + "'");
      (k < d.input_dim ? d.inputs : d.targets).push_back(v);
    }
    if (with_split) {
      if (cells.back() != "train" && cells.back() != "val")
        throw std::invalid_argument(path + ":" + std::to_string(row) + ": split must be train or val");
      d.train.push_back(cells.back() == "train");
    }
  }
  if (d.size() == 0) throw std::invalid_argument(path + ": no data rows");
  if (!with_split) {
    std::mt19937_64 rng(seed);
    assign_split(d, rng);
  }
  return d;
}

void write_dataset_csv(const ProblemSpec& spec, const Dataset& data, const std::string& path, bool with_split) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path);
  std::string sep;
  for (const auto& a : spec.axes) os << std::exchange(sep, ",") << a.name;
  for (const auto& o : spec.outputs) os << "," << o;
  if (with_split) os << ",split";
  os << '\n';
  os.precision(17);
  for (std::size_t i = 0; i < data.size(); ++i) {
    sep.clear();
    for (double v : data.x(i)) os << std::exchange(sep, ",") << v;
    for (double v : data.y(i)) os << "," << v;
    if (with_split) os << "," << (data.train[i] ? "train" : "val");
    os << '\n';
  }
  if (!os) throw std::runtime_error("failed writing " + path);
}

std::map<PoolKey, sym::KktSystem> kkt_pool(const ProblemSpec& spec, const std::optional<sym::TaylorCoupling>& coupling) {
  std::map<PoolKey, sym::KktSystem> pool;
  for (int bc = 0; bc <= (spec.boundary.empty() ? 0 : 1); ++bc)
    for (int ic = 0; ic <= (spec.initial.empty() ? 0 : 1); ++ic) {
      std::vector<Expr> extra;
      if (bc)
        for (const auto& c : spec.boundary) extra.push_back(c.equality);
      if (ic)
        for (const auto& c : spec.initial) extra.push_back(c.equality);
      pool.emplace(PoolKey{bc == 1, ic == 1}, sym::assemble_kkt(spec.constraints(), coupling, std::move(extra)));
    }
  return pool;
}

PoolKey select_pool(const ProblemSpec& spec, std::span<const double> point) {
  auto on = [&](const std::vector<SideCondition>& conds) {
    for (const auto& c : conds)
      for (double a : c.at)
        if (std::abs(point[c.axis] - a) <= kBoundaryTol) return true;
    return false;
  };
  return {on(spec.boundary), on(spec.initial)};
}

std::vector<double> oracle_solution(const ProblemSpec& spec, std::span<const double> point) {
  if (point.size() != spec.input_dim()) throw std::invalid_argument("oracle_solution: wrong point dimension");
  for (std::size_t a = 0; a < point.size(); ++a) {
    const auto& ax = spec.axes[a];
    if (point[a] < ax.lo - kBoundaryTol || point[a] > ax.hi + kBoundaryTol)
      throw std::out_of_range("oracle_solution: " + ax.name + " outside [" + std::to_string(ax.lo) + ", " +
                              std::to_string(ax.hi) + "]");
  }
  return spec.oracle(point);
}

}  // namespace daehn::problems
