#include "daehn/training/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <random>
#include <sstream>
#include <stdexcept>

namespace daehn::train {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

bool all_finite(const std::vector<double>& v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

}  // namespace

std::string to_string(Model m) {
  switch (m) {
    case Model::mlp: return "mlp";
    case Model::pinn: return "pinn";
    case Model::daehn: return "daehn";
  }
  return "?";
}

std::optional<Model> parse_model(const std::string& s) {
  if (s == "mlp") return Model::mlp;
  if (s == "pinn") return Model::pinn;
  if (s == "daehn") return Model::daehn;
  return std::nullopt;
}

void adam_step(std::span<double> params, std::span<const double> grads, AdamState& s, double lr, double beta1,
               double beta2, double eps) {
  if (params.size() != grads.size()) throw std::invalid_argument("adam_step: parameter/gradient size mismatch");
  if (s.m.size() != params.size()) {
    s.m.assign(params.size(), 0.0);
    s.v.assign(params.size(), 0.0);
    s.step = 0;
  }
  ++s.step;
  const double c1 = 1.0 - std::pow(beta1, double(s.step));
  const double c2 = 1.0 - std::pow(beta2, double(s.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    s.m[i] = beta1 * s.m[i] + (1.0 - beta1) * grads[i];
    s.v[i] = beta2 * s.v[i] + (1.0 - beta2) * grads[i] * grads[i];
    const double mh = s.m[i] / c1, vh = s.v[i] / c2;
    params[i] -= lr * mh / (std::sqrt(vh) + eps);
  }
}

problems::Dataset add_noise(problems::Dataset data, double mean, double std, double scale, std::uint64_t seed) {
  if (scale < 0.0) throw std::invalid_argument("add_noise: scale must be non-negative");
  if (scale == 0.0) return data;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(mean, std);
  for (auto& y : data.targets) y += scale * n(rng);
  return data;
}

// ---------------------------------------------------------------- setup

net::JetRequest Experiment::request(bool neighbors) const {
  net::JetRequest r;
  for (const auto& v : registry().deriv_vars) {
    r.first = true;
    if (v.order == 2) r.second = true;
  }
  r.neighbors = neighbors && coupling.has_value();
  r.delta = coupling ? coupling->delta : 0.0;
  return r;
}

net::BackboneConfig Experiment::backbone(const TrainConfig& config) const {
  net::BackboneConfig b;
  b.input_dim = spec.input_dim();
  b.output_dim = spec.output_dim();
  b.multiplier_dim = multiplier_dim();
  b.hidden_dim = config.hidden_dim;
  b.model_depth = config.model_depth;
  b.num_softplus = system.layout.n_ineq;
  b.seed = config.seed;
  return b;
}

net::NetworkParams Experiment::init_params(const TrainConfig& config) const {
  std::vector<std::pair<std::string, double>> phys;
  if (estimate)
    for (std::size_t i = 0; i < spec.param_names.size(); ++i) phys.emplace_back(spec.param_names[i], fixed_params[i]);
  return net::init(backbone(config), phys);
}

Experiment make_experiment(const TrainConfig& config) {
  Experiment ex;
  ex.spec = problems::build_problem(config.problem);
  sym::ConstraintSet cs = ex.spec.constraints();
  if (!cs.deriv_vars.empty()) ex.coupling = sym::TaylorCoupling{config.taylor_offset, config.taylor_order};
  ex.system = sym::assemble_kkt(std::move(cs), ex.coupling);
  ex.fixed_params = ex.spec.true_params;

  auto est = config.estimate_params;
  if (est.empty() && ex.spec.name == "lv_inverse")
    for (std::size_t i = 0; i < ex.spec.param_names.size(); ++i)
      est.emplace_back(ex.spec.param_names[i], ex.spec.estimate_init[i]);
  if (!est.empty()) {
    // Every constraint parameter becomes learnable; fixed_params holds the
    // initial values in declaration order.
    std::vector<double> init(ex.spec.param_names.size(), std::nan(""));
    for (const auto& [name, value] : est) {
      auto it = std::find(ex.spec.param_names.begin(), ex.spec.param_names.end(), name);
      if (it == ex.spec.param_names.end())
        throw std::invalid_argument("estimate_params: problem " + ex.spec.name + " has no parameter " + name);
      init[std::size_t(it - ex.spec.param_names.begin())] = value;
    }
    for (std::size_t i = 0; i < init.size(); ++i)
      if (std::isnan(init[i]))
        throw std::invalid_argument("estimate_params: missing initial value for " + ex.spec.param_names[i]);
    ex.fixed_params = init;
    ex.estimate = true;
  }
  return ex;
}

// ---------------------------------------------------------------- inference

namespace {

struct Rows {
  std::size_t n_y, n_mult, n_soft, n_axes;
};

void read_point(const Experiment& ex, const net::JetCache& c, std::size_t b, PointEval& pe) {
  const auto& reg = ex.registry();
  const std::size_t n_y = ex.spec.output_dim(), n_mult = ex.multiplier_dim();
  const std::size_t first_soft = n_mult - ex.system.layout.n_ineq;
  pe.y_hat.resize(n_y);
  for (std::size_t p = 0; p < n_y; ++p) pe.y_hat[p] = c.out(p, 0, b);
  pe.lambda_hat.resize(n_mult);
  for (std::size_t k = 0; k < n_mult; ++k) {
    const double raw = c.out(n_y + k, 0, b);
    pe.lambda_hat[k] = k >= first_soft ? ad::softplus(raw) : raw;
  }
  pe.d_hat.clear();
  if (c.request.first)
    for (const auto& v : reg.deriv_vars)
      pe.d_hat.push_back(c.out(v.output, v.order == 1 ? c.ch_first(v.axis) : c.ch_second(v.axis), b));
  pe.neighbors.clear();
  if (c.request.neighbors) {
    pe.neighbors.resize(n_y * c.num_axes);
    for (std::size_t p = 0; p < n_y; ++p)
      for (std::size_t a = 0; a < c.num_axes; ++a)
        pe.neighbors[sym::neighbor_index(p, a, c.num_axes)] = c.out(p, c.ch_neighbor(a), b);
  }
}

proj::BackboneBundle<double> bundle_of(const PointEval& pe, std::span<const double> x) {
  proj::BackboneBundle<double> b;
  b.inputs.assign(x.begin(), x.end());
  b.y_hat = pe.y_hat;
  b.lambda_hat = pe.lambda_hat;
  b.d_hat = pe.d_hat;
  b.neighbor_evals = pe.neighbors;
  return b;
}

}  // namespace

std::vector<PointEval> infer(const Experiment& ex, const net::NetworkParams& params, std::span<const double> inputs,
                             bool project, const proj::ProjectionConfig& config,
                             const std::map<problems::PoolKey, sym::KktSystem>* pool) {
  const std::size_t n_in = ex.spec.input_dim();
  const std::size_t N = inputs.size() / n_in;
  net::JetCache cache;
  net::jet_forward(params, inputs, ex.request(project), cache);
  const auto cparams = ex.constraint_params(params);
  std::vector<PointEval> out(N);
  for (std::size_t b = 0; b < N; ++b) {
    PointEval& pe = out[b];
    read_point(ex, cache, b, pe);
    pe.y = pe.y_hat;
    pe.d = pe.d_hat;
    if (!project) continue;
    std::span<const double> x(inputs.data() + b * n_in, n_in);
    const sym::KktSystem& sys = pool ? pool->at(problems::select_pool(ex.spec, x)) : ex.system;
    const auto res = proj::project<double>(sys, bundle_of(pe, x), cparams, config);
    pe.converged = res.converged;
    if (!std::isfinite(res.residual_norm) || !all_finite(res.z)) continue;  // keep the backbone values
    pe.projected = true;
    pe.y = res.y_proj;
    pe.d = res.d_proj;
    for (std::size_t p = 0; p < pe.y.size(); ++p) pe.gap = std::max(pe.gap, std::abs(pe.y[p] - pe.y_hat[p]));
  }
  return out;
}

Metrics evaluate_metrics(const Experiment& ex, const std::vector<PointEval>& points, std::span<const double> inputs,
                         std::span<const double> targets, std::span<const double> cparams, bool with_derivative_mse) {
  Metrics m;
  const std::size_t N = points.size();
  if (N == 0) return m;
  const std::size_t n_y = ex.spec.output_dim(), n_in = ex.spec.input_dim();
  const auto& cs = ex.system.constraints;
  const std::size_t n_c = cs.num_constraints();
  double se = 0.0, sd = 0.0, viol = 0.0, gap = 0.0;
  std::size_t nd = 0, nonconv = 0, projected = 0;
  std::vector<double> stack, r;
  for (std::size_t i = 0; i < N; ++i) {
    const auto& pe = points[i];
    for (std::size_t p = 0; p < n_y; ++p) {
      const double e = pe.y[p] - targets[i * n_y + p];
      se += e * e;
    }
    for (std::size_t q = 0; q < pe.d.size() && q < pe.d_hat.size(); ++q) {
      const double e = pe.d[q] - pe.d_hat[q];
      sd += e * e;
      ++nd;
    }
    if (!pe.converged) ++nonconv;
    if (pe.projected) {
      ++projected;
      gap += pe.gap;
    }
    if (n_c > 0) {
      sym::Bindings<double> b;
      b.inputs = inputs.subspan(i * n_in, n_in);
      b.outputs = pe.y;
      b.derivs = pe.d;
      b.params = cparams;
      r.clear();
      for (const auto& prog : ex.system.primal_programs) r.push_back(prog.eval(b, stack));
      viol += sym::absolute_violation_sum(cs, r);
    }
  }
  m.mse_data = se / double(N * n_y);
  m.rmse = std::sqrt(m.mse_data);
  if (with_derivative_mse) m.mse_derivative = nd ? sd / double(nd) : 0.0;
  if (n_c > 0) m.abs_violation = viol / double(N * n_c);
  m.nonconverged_fraction = double(nonconv) / double(N);
  if (projected) m.projection_gap = gap / double(projected);
  return m;
}

// ---------------------------------------------------------------- gradients

namespace {

enum class Mode { data, pinn, projected };

Mode mode_of(Model model, bool active) {
  if (model == Model::mlp) return Mode::data;
  if (model == Model::pinn || !active) return Mode::pinn;
  return Mode::projected;
}

struct OutMap {
  const net::JetCache& c;
  std::vector<double>& G;
  double& at(std::size_t row, std::size_t ch, std::size_t b) { return G[row * c.cols() + ch * c.batch + b]; }
};

}  // namespace

StepResult loss_and_gradient(const Experiment& ex, const TrainConfig& config, const net::NetworkParams& params,
                             std::span<const double> inputs, std::span<const double> targets, bool active,
                             std::vector<double>& grad, StepTiming* timing) {
  const Mode mode = mode_of(config.model, active);
  const auto& reg = ex.registry();
  const auto& sys = ex.system;
  const std::size_t n_in = ex.spec.input_dim(), n_y = ex.spec.output_dim(), n_d = reg.deriv_vars.size();
  const std::size_t B = inputs.size() / n_in;
  const std::size_t weights = params.weight_count();
  grad.assign(params.parameter_count(), 0.0);
  StepResult out;
  if (B == 0) return out;

  auto t0 = Clock::now();
  net::JetRequest req;
  if (mode == Mode::pinn) req = ex.request(false);
  if (mode == Mode::projected) req = ex.request(true);
  net::JetCache cache;
  net::jet_forward(params, inputs, req, cache);
  if (timing) timing->backbone_ad += seconds_since(t0);

  t0 = Clock::now();
  std::vector<double> G(cache.Z.back().size(), 0.0);
  OutMap g{cache, G};
  const std::vector<double> cparams(ex.constraint_params(params).begin(), ex.constraint_params(params).end());
  const std::size_t n_par = cparams.size();
  const double cy = 1.0 / double(B * n_y);
  ad::Tape tape;
  std::vector<ad::Var> stack_v;
  std::vector<double> stack_d;

  auto d_channel = [&](const sym::DerivVar& v) { return v.order == 1 ? cache.ch_first(v.axis) : cache.ch_second(v.axis); };

  std::vector<PointEval> pts(B);
  for (std::size_t b = 0; b < B; ++b) read_point(ex, cache, b, pts[b]);

  if (mode == Mode::data || mode == Mode::pinn) {
    const std::size_t m = reg.num_constraints();
    const bool physics = mode == Mode::pinn && m > 0 && config.pinn_reg_factor != 0.0;
    const double cphys = physics ? config.pinn_reg_factor / double(B * m) : 0.0;
    const std::size_t first_ineq = reg.differential.size() + reg.equalities.size();
    for (std::size_t b = 0; b < B; ++b) {
      const auto& pe = pts[b];
      for (std::size_t p = 0; p < n_y; ++p) {
        const double e = pe.y_hat[p] - targets[b * n_y + p];
        out.loss += e * e * cy;
        g.at(p, 0, b) += 2.0 * e * cy;
      }
      if (!physics) continue;
      tape.clear();
      std::vector<ad::Var> y, d, par, x;
      for (double v : pe.y_hat) y.push_back(tape.variable(v));
      for (double v : pe.d_hat) d.push_back(tape.variable(v));
      for (double v : cparams) par.push_back(ex.estimate ? tape.variable(v) : ad::Var(v));
      for (std::size_t i = 0; i < n_in; ++i) x.emplace_back(inputs[b * n_in + i]);
      sym::Bindings<ad::Var> bind;
      bind.inputs = x;
      bind.outputs = y;
      bind.derivs = d;
      bind.params = par;
      ad::Var phys(0.0);
      for (std::size_t k = 0; k < m; ++k) {
        const ad::Var r = sys.primal_programs[k].eval(bind, stack_v);
        if (k >= first_ineq && r.value() <= 0.0) continue;
        phys += r * r;
      }
      out.loss += cphys * phys.value();
      const auto adj = tape.adjoints(phys);
      for (std::size_t p = 0; p < n_y; ++p) g.at(p, 0, b) += cphys * adj[std::size_t(y[p].index())];
      for (std::size_t q = 0; q < n_d; ++q) {
        const auto& v = reg.deriv_vars[q];
        g.at(v.output, d_channel(v), b) += cphys * adj[std::size_t(d[q].index())];
      }
      if (ex.estimate)
        for (std::size_t r = 0; r < n_par; ++r) grad[weights + r] += cphys * adj[std::size_t(par[r].index())];
    }
  } else {
    const auto cfg = config.projection();
    const double omega = config.hardnet_reg_factor;
    std::vector<proj::ProjectionResult> res(B);
    std::vector<char> usable(B, 0);
    std::size_t n_ok = 0;
    for (std::size_t b = 0; b < B; ++b) {
      res[b] = proj::project<double>(sys, bundle_of(pts[b], inputs.subspan(b * n_in, n_in)), cparams, cfg);
      if (!res[b].converged) ++out.nonconverged;
      usable[b] = std::isfinite(res[b].residual_norm) && all_finite(res[b].z);
      n_ok += usable[b];
    }
    const double cyp = n_ok ? 1.0 / double(n_ok * n_y) : 0.0;
    const double cd = n_ok && n_d ? omega / double(n_ok * n_d) : 0.0;
    const std::size_t n = sys.size();
    const std::size_t base_mults = sys.layout.num_mults();
    const std::size_t first_soft = base_mults - sys.layout.n_ineq;

    for (std::size_t b = 0; b < B; ++b) {
      if (!usable[b]) continue;
      const auto& pe = pts[b];
      const auto& r = res[b];
      std::vector<double> gz(n, 0.0);
      for (std::size_t p = 0; p < n_y; ++p) {
        const double e = r.y_proj[p] - targets[b * n_y + p];
        out.loss += e * e * cyp;
        gz[sys.layout.y_offset() + p] = 2.0 * e * cyp;
      }
      for (std::size_t q = 0; q < n_d; ++q) {
        const double e = r.d_proj[q] - pe.d_hat[q];
        out.loss += e * e * cd;
        gz[sys.layout.d_offset() + q] = 2.0 * e * cd;
        const auto& v = reg.deriv_vars[q];
        g.at(v.output, d_channel(v), b) -= 2.0 * e * cd;  // explicit dependence on dhat
      }
      if (config.detach_projected_targets) continue;

      const std::span<const double> xb = inputs.subspan(b * n_in, n_in);
      std::vector<ad::Var> x(xb.begin(), xb.end());
      tape.clear();
      std::vector<ad::Var> yh, nb, par;
      for (double v : pe.y_hat) yh.push_back(tape.variable(v));
      for (double v : pe.neighbors) nb.push_back(tape.variable(v));
      for (double v : cparams) par.push_back(ex.estimate ? tape.variable(v) : ad::Var(v));

      auto scatter_common = [&](const std::vector<double>& adj, double scale) {
        for (std::size_t p = 0; p < n_y; ++p) g.at(p, 0, b) += scale * adj[std::size_t(yh[p].index())];
        for (std::size_t p = 0; p < n_y; ++p)
          for (std::size_t a = 0; a < cache.num_axes; ++a) {
            const std::size_t k = sym::neighbor_index(p, a, cache.num_axes);
            if (k < nb.size()) g.at(p, cache.ch_neighbor(a), b) += scale * adj[std::size_t(nb[k].index())];
          }
        if (ex.estimate)
          for (std::size_t i = 0; i < n_par; ++i) grad[weights + i] += scale * adj[std::size_t(par[i].index())];
      };

      if (r.converged && config.projection_gradient == ProjectionGradient::implicit) {
        std::vector<double> J;
        const proj::FixedBindings<double> fixed{xb, cparams, pe.neighbors, pe.y_hat};
        proj::evaluate_jacobian(sys, r.z, fixed, J, stack_d);
        std::vector<double> Jt(n * n);
        double jmax = 0.0;
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < n; ++j) {
            Jt[j * n + i] = J[i * n + j];
            jmax = std::max(jmax, std::abs(J[i * n + j]));
          }
        std::vector<double> v = gz;
        auto A = Jt;
        if (!proj::detail::lu_solve(A, v, n, 1e-14 * std::max(jmax, 1.0))) {
          A = Jt;
          v = gz;
          for (std::size_t i = 0; i < n; ++i) A[i * n + i] += cfg.jacobian_regularization;
          proj::detail::lu_solve(A, v, n, 0.0);
        }
        std::vector<ad::Var> zc(r.z.begin(), r.z.end()), F;
        const proj::FixedBindings<ad::Var> fv{x, par, nb, yh};
        proj::evaluate_residual(sys, zc, fv, F, stack_v);
        const auto adj = tape.adjoints(F, v);
        scatter_common(adj, -1.0);
      } else {
        std::vector<ad::Var> lam, dh;
        for (double v : pe.lambda_hat) lam.push_back(tape.variable(v));
        for (double v : pe.d_hat) dh.push_back(tape.variable(v));
        proj::BackboneBundle<ad::Var> bv{x, yh, lam, dh, nb};
        const auto rv = proj::project<ad::Var>(sys, bv, par, cfg);
        ad::Var loss(0.0);
        for (std::size_t p = 0; p < n_y; ++p) {
          const ad::Var e = rv.y_proj[p] - targets[b * n_y + p];
          loss += cyp * (e * e);
        }
        for (std::size_t q = 0; q < n_d; ++q) {
          const ad::Var e = rv.d_proj[q] - pe.d_hat[q];  // dhat enters explicitly above
          loss += cd * (e * e);
        }
        const auto adj = tape.adjoints(loss);
        scatter_common(adj, 1.0);
        for (std::size_t k = 0; k < first_soft; ++k) g.at(n_y + k, 0, b) += adj[std::size_t(lam[k].index())];
        for (std::size_t q = 0; q < n_d; ++q) {
          const auto& v = reg.deriv_vars[q];
          g.at(v.output, d_channel(v), b) += adj[std::size_t(dh[q].index())];
        }
      }
    }
  }
  if (timing) timing->projection += seconds_since(t0);

  t0 = Clock::now();
  net::jet_backward(params, cache, G, grad);
  if (timing) timing->backprop += seconds_since(t0);
  return out;
}

double reference_loss(const Experiment& ex, const TrainConfig& config, const net::NetworkParams& params,
                      std::span<const double> inputs, std::span<const double> targets, bool active) {
  const Mode mode = mode_of(config.model, active);
  const std::size_t n_in = ex.spec.input_dim(), n_y = ex.spec.output_dim();
  const std::size_t B = inputs.size() / n_in;
  const auto cparams = ex.constraint_params(params);
  const auto& cs = ex.system.constraints;
  std::vector<double> pred, resid, y_proj, d_proj, d_ad, kept_targets;
  for (std::size_t b = 0; b < B; ++b) {
    const auto x = inputs.subspan(b * n_in, n_in);
    const auto t = targets.subspan(b * n_y, n_y);
    const auto bundle = net::forward_with_derivatives<double>(
        params, x, cs, mode == Mode::projected ? ex.coupling : std::nullopt);
    pred.insert(pred.end(), bundle.y_hat.begin(), bundle.y_hat.end());
    if (mode == Mode::pinn) {
      sym::Bindings<double> bind;
      bind.inputs = x;
      bind.outputs = bundle.y_hat;
      bind.derivs = bundle.d_hat;
      bind.params = cparams;
      const auto r = sym::smallest_signed_violation(cs, bind);
      resid.insert(resid.end(), r.begin(), r.end());
    }
    if (mode == Mode::projected) {
      const auto r = proj::project<double>(ex.system, bundle, cparams, config.projection());
      if (!std::isfinite(r.residual_norm) || !all_finite(r.z)) continue;
      y_proj.insert(y_proj.end(), r.y_proj.begin(), r.y_proj.end());
      d_proj.insert(d_proj.end(), r.d_proj.begin(), r.d_proj.end());
      d_ad.insert(d_ad.end(), bundle.d_hat.begin(), bundle.d_hat.end());
      kept_targets.insert(kept_targets.end(), t.begin(), t.end());
    }
  }
  switch (mode) {
    case Mode::data: return loss_mlp<double>(pred, targets);
    case Mode::pinn: return loss_pinn<double>(pred, targets, resid, cs, config.pinn_reg_factor);
    case Mode::projected:
      return loss_daehn<double>(y_proj, kept_targets, d_proj, d_ad, config.hardnet_reg_factor);
  }
  return 0.0;
}

// ---------------------------------------------------------------- training

TrainReport train(const TrainConfig& config, const Experiment& ex, const problems::Dataset& data,
                  const ProgressFn& progress, const std::optional<net::NetworkParams>& initial) {
  if (config.eval_every == 0) throw std::invalid_argument("eval_every must be positive");
  const auto tr = data.subset(true);
  const auto va = data.subset(false);
  TrainReport rep;
  net::NetworkParams params = initial ? *initial : ex.init_params(config);
  if (!initial) net::fit_standardization(params, tr.inputs);
  if (params.parameter_count() != ex.init_params(config).parameter_count())
    throw std::invalid_argument("initial parameters do not match the configured architecture");
  AdamState adam;
  const auto pcfg = config.projection();
  const bool daehn = config.model == Model::daehn;
  bool active = false;

  auto evaluate = [&](const problems::Dataset& d) {
    const auto pts = infer(ex, params, d.inputs, daehn && active, pcfg);
    return evaluate_metrics(ex, pts, d.inputs, d.targets, ex.constraint_params(params), daehn && active);
  };

  if (daehn && !va.inputs.empty() && evaluate(va).mse_data <= config.eta) {
    active = true;
    rep.activation_epoch = 0;
  }

  struct Best {
    bool set = false;
    std::size_t epoch = 0;
    Metrics train, val;
    net::NetworkParams params;
  } best_any, best_active;

  const std::size_t N = tr.size();
  const std::size_t bs = config.batch_size == 0 ? N : std::min(config.batch_size, N);
  std::vector<double> grad, flat;
  for (std::size_t epoch = 1; epoch <= config.num_epochs && !rep.diverged; ++epoch) {
    for (std::size_t start = 0; start < N; start += bs) {
      const std::size_t len = std::min(bs, N - start);
      const auto x = std::span<const double>(tr.inputs).subspan(start * tr.input_dim, len * tr.input_dim);
      const auto y = std::span<const double>(tr.targets).subspan(start * tr.output_dim, len * tr.output_dim);
      const auto step = loss_and_gradient(ex, config, params, x, y, active, grad, &rep.timing);
      if (!std::isfinite(step.loss) || !all_finite(grad)) {
        rep.diverged = true;
        std::ostringstream os;
        os << "non-finite loss at epoch " << epoch << " (model " << to_string(config.model)
           << (active ? ", projection active" : "") << ")";
        rep.diagnostic = os.str();
        break;
      }
      const auto t0 = Clock::now();
      flat = params.flatten();
      adam_step(flat, grad, adam, config.lr);
      params.unflatten(flat);
      rep.timing.optimizer += seconds_since(t0);
      ++rep.steps;
    }
    if (rep.diverged || epoch % config.eval_every != 0) continue;

    CurveRow rt{epoch, true, active, evaluate(tr)};
    CurveRow rv{epoch, false, active, evaluate(va)};
    rep.curve.push_back(rt);
    rep.curve.push_back(rv);
    if (progress) {
      progress(rt);
      progress(rv);
    }
    if (ex.estimate) rep.phys_trajectory.emplace_back(epoch, params.phys_params);

    Best& slot = active ? best_active : best_any;
    if (std::isfinite(rv.metrics.mse_data) && (!slot.set || rv.metrics.mse_data < slot.val.mse_data)) {
      slot.set = true;
      slot.epoch = epoch;
      slot.train = rt.metrics;
      slot.val = rv.metrics;
      slot.params = params;
    }
    if (daehn && !active && rv.metrics.mse_data <= config.eta) {
      active = true;
      rep.activation_epoch = epoch;
    }
  }

  rep.final_params = params;
  const Best& best = best_active.set ? best_active : best_any;
  if (best.set) {
    rep.best_epoch = best.epoch;
    rep.best_train = best.train;
    rep.best_val = best.val;
    rep.best_params = best.params;
  } else {
    rep.best_epoch = config.num_epochs;
    rep.best_train = evaluate(tr);
    rep.best_val = evaluate(va);
    rep.best_params = params;
  }
  return rep;
}

}  // namespace daehn::train
