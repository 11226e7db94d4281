#include "daehn/cli/run.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <ostream>
#include <sstream>

#include "json.hpp"

namespace daehn::cli {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

std::string opt(const std::optional<double>& v) { return v ? fmt(*v) : ""; }

std::ofstream open_out(const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write " + path);
  return os;
}

void finish(std::ofstream& os, const std::string& path) {
  os.flush();
  if (!os) throw IoError("failed writing " + path);
}

json number(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

json metrics_json(const train::Metrics& m, bool with_derivative) {
  json j;
  j["mse_data"] = number(m.mse_data);
  j["rmse"] = number(m.rmse);
  j["abs_violation"] = m.abs_violation ? number(*m.abs_violation) : json(nullptr);
  if (with_derivative) j["mse_derivative"] = number(m.mse_derivative.value_or(0.0));
  j["nonconverged_fraction"] = number(m.nonconverged_fraction);
  if (m.projection_gap) j["projection_gap"] = number(*m.projection_gap);
  return j;
}

// Metrics restricted to the rows with train flag == split.
train::Metrics split_metrics(const train::Experiment& ex, const std::vector<train::PointEval>& pts,
                             const problems::Dataset& data, bool split, std::span<const double> cparams,
                             bool with_derivative) {
  std::vector<train::PointEval> sel;
  std::vector<double> x, y;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (bool(data.train[i]) != split) continue;
    sel.push_back(pts[i]);
    x.insert(x.end(), data.x(i).begin(), data.x(i).end());
    y.insert(y.end(), data.y(i).begin(), data.y(i).end());
  }
  return train::evaluate_metrics(ex, sel, x, y, cparams, with_derivative);
}

// d y_proj / d x for problems whose projection has no derivative unknowns:
// second-order forward mode through the backbone and the Newton iterations.
std::vector<double> projected_input_derivatives(const train::Experiment& ex, const sym::KktSystem& sys,
                                                const net::NetworkParams& params, std::span<const double> x,
                                                const proj::ProjectionConfig& cfg) {
  using D = ad::Dual2<double>;
  const std::size_t n_in = ex.spec.input_dim(), n_y = ex.spec.output_dim();
  std::vector<D> par;
  for (double v : ex.constraint_params(params)) par.push_back(D::constant(v));
  std::vector<double> out(n_y * n_in, std::numeric_limits<double>::quiet_NaN());
  for (std::size_t a = 0; a < n_in; ++a) {
    std::vector<D> xd(n_in);
    for (std::size_t i = 0; i < n_in; ++i) xd[i] = i == a ? D::variable(x[i]) : D::constant(x[i]);
    auto head = net::forward<D>(params, std::span<const D>(xd));
    proj::BackboneBundle<D> b;
    b.inputs = xd;
    b.y_hat = std::move(head.y_hat);
    b.lambda_hat = std::move(head.lambda_hat);
    const auto r = proj::project<D>(sys, b, std::span<const D>(par), cfg);
    if (!std::isfinite(r.residual_norm)) continue;
    for (std::size_t p = 0; p < n_y; ++p) out[p * n_in + a] = r.y_proj[p].d1;
  }
  return out;
}

}  // namespace

std::string derivative_label(const problems::ProblemSpec& spec, const sym::DerivVar& v) {
  const std::string& y = spec.outputs[v.output];
  const std::string& x = spec.axes[v.axis].name;
  return v.order == 1 ? "d" + y + "/d" + x : "d2" + y + "/d" + x + "^2";
}

double r_squared(const std::vector<double>& truth, const std::vector<double>& predicted) {
  if (truth.empty()) return std::numeric_limits<double>::quiet_NaN();
  double mean = 0.0;
  for (double t : truth) mean += t;
  mean /= double(truth.size());
  double res = 0.0, tot = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    res += (truth[i] - predicted[i]) * (truth[i] - predicted[i]);
    tot += (truth[i] - mean) * (truth[i] - mean);
  }
  if (tot == 0.0) return res == 0.0 ? 1.0 : -std::numeric_limits<double>::infinity();
  return 1.0 - res / tot;
}

void emit_learning_curve(const std::vector<train::CurveRow>& rows, const std::string& path) {
  auto os = open_out(path);
  os << "epoch,split,mse_data,mse_derivative,abs_violation,nonconverged_fraction\n";
  for (const auto& r : rows)
    os << r.epoch << ',' << (r.train_split ? "train" : "val") << ',' << fmt(r.metrics.mse_data) << ','
       << opt(r.metrics.mse_derivative) << ',' << opt(r.metrics.abs_violation) << ','
       << fmt(r.metrics.nonconverged_fraction) << '\n';
  finish(os, path);
}

void emit_parity(const std::vector<ParityRow>& rows, const std::string& path) {
  auto os = open_out(path);
  os << "quantity,true,predicted\n";
  for (const auto& r : rows) os << r.quantity << ',' << fmt(r.truth) << ',' << fmt(r.predicted) << '\n';
  finish(os, path);
}

void emit_heatmap(const std::vector<HeatmapRow>& rows, const std::string& path) {
  auto os = open_out(path);
  os << "x1,x2,true,predicted,abs_error,abs_violation\n";
  for (const auto& r : rows)
    os << fmt(r.x1) << ',' << fmt(r.x2) << ',' << fmt(r.truth) << ',' << fmt(r.predicted) << ',' << fmt(r.abs_error)
       << ',' << fmt(r.abs_violation) << '\n';
  finish(os, path);
}

void emit_svg_plot(const std::vector<Series>& series, const std::string& title, const std::string& xlabel,
                   const std::string& path) {
  const double W = 720, H = 440, L = 80, R = 170, T = 40, B = 56;
  double xmin = std::numeric_limits<double>::infinity(), xmax = -xmin, ymin = xmin, ymax = -xmin;
  for (const auto& s : series)
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!(s.y[i] > 0.0) || !std::isfinite(s.y[i])) continue;
      xmin = std::min(xmin, s.x[i]);
      xmax = std::max(xmax, s.x[i]);
      ymin = std::min(ymin, std::log10(s.y[i]));
      ymax = std::max(ymax, std::log10(s.y[i]));
    }
  const bool empty = !std::isfinite(xmin);
  if (empty) xmin = 0, xmax = 1, ymin = 0, ymax = 1;
  ymin = std::floor(ymin);
  ymax = std::ceil(ymax);
  if (ymax <= ymin) ymax = ymin + 1;
  if (xmax <= xmin) xmax = xmin + 1;
  auto px = [&](double x) { return L + (x - xmin) / (xmax - xmin) * (W - L - R); };
  auto py = [&](double ly) { return H - B - (ly - ymin) / (ymax - ymin) * (H - T - B); };

  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
     << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << W / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" << title << "</text>\n";
  os << "<rect x=\"" << L << "\" y=\"" << T << "\" width=\"" << W - L - R << "\" height=\"" << H - T - B
     << "\" fill=\"none\" stroke=\"black\"/>\n";
  const int ystep = std::max(1, int((ymax - ymin) / 8));
  for (int e = int(ymin); e <= int(ymax); e += ystep) {
    os << "<line x1=\"" << L << "\" x2=\"" << W - R << "\" y1=\"" << py(e) << "\" y2=\"" << py(e)
       << "\" stroke=\"#ddd\"/>\n";
    os << "<text x=\"" << L - 6 << "\" y=\"" << py(e) + 4 << "\" text-anchor=\"end\">1e" << e << "</text>\n";
  }
  for (int k = 0; k <= 4; ++k) {
    const double x = xmin + (xmax - xmin) * k / 4.0;
    os << "<text x=\"" << px(x) << "\" y=\"" << H - B + 18 << "\" text-anchor=\"middle\">" << fmt(std::round(x))
       << "</text>\n";
  }
  os << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 12 << "\" text-anchor=\"middle\">" << xlabel
     << "</text>\n";
  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    const char* c = colors[k % 6];
    os << "<polyline fill=\"none\" stroke=\"" << c << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < s.x.size(); ++i)
      if (s.y[i] > 0.0 && std::isfinite(s.y[i])) os << px(s.x[i]) << ',' << py(std::log10(s.y[i])) << ' ';
    os << "\"/>\n";
    const double ly = T + 16 + 18.0 * double(k);
    os << "<line x1=\"" << W - R + 10 << "\" x2=\"" << W - R + 30 << "\" y1=\"" << ly << "\" y2=\"" << ly
       << "\" stroke=\"" << c << "\" stroke-width=\"2\"/>\n";
    os << "<text x=\"" << W - R + 36 << "\" y=\"" << ly + 4 << "\">" << s.label << "</text>\n";
  }
  os << "</svg>\n";
  auto f = open_out(path);
  f << os.str();
  finish(f, path);
}

RunSummary run_experiment(const ExperimentConfig& config, std::ostream& log) {
  RunSummary summary;
  summary.out_dir = config.out_dir;
  const auto& tc = config.train;
  const auto wall0 = std::chrono::steady_clock::now();
  try {
    validate(config);
    train::Experiment ex;
    problems::Dataset clean;
    try {
      ex = train::make_experiment(tc);
      clean = config.data_file.empty() ? problems::generate_dataset(ex.spec, tc.num_points, tc.seed)
                                       : problems::read_dataset_csv(ex.spec, config.data_file, tc.seed);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
    const auto data = train::add_noise(clean, tc.noise_mean, tc.noise_std, tc.noise_scale, tc.seed + 0x9e3779b9ULL);

    std::error_code ec;
    fs::create_directories(config.out_dir, ec);
    if (ec) throw IoError("cannot create " + config.out_dir + ": " + ec.message());
    const fs::path dir(config.out_dir);
    {
      auto os = open_out((dir / "config.txt").string());
      os << serialize(config);
      finish(os, (dir / "config.txt").string());
    }
    try {
      problems::write_dataset_csv(ex.spec, data, (dir / "dataset.csv").string(), true);
    } catch (const std::runtime_error& e) {
      throw IoError(e.what());
    }

    std::optional<net::NetworkParams> initial;
    if (!config.init_checkpoint.empty()) {
      try {
        initial = net::load_checkpoint(config.init_checkpoint);
      } catch (const std::exception& e) {
        throw IoError(std::string("cannot load checkpoint: ") + e.what());
      }
    }

    log << "run " << train::to_string(tc.model) << " on " << tc.problem << " (" << data.size() << " points, "
        << tc.num_epochs << " epochs)\n";
    train::TrainReport rep;
    try {
      rep = train::train(tc, ex, data, [&](const train::CurveRow& r) {
        if (r.train_split) return;
        log << "epoch " << r.epoch << (r.active ? " [projected]" : "") << " val mse_data " << fmt(r.metrics.mse_data);
        if (r.metrics.abs_violation) log << " abs_violation " << fmt(*r.metrics.abs_violation);
        if (r.metrics.nonconverged_fraction > 0) log << " nonconverged " << fmt(r.metrics.nonconverged_fraction);
        log << '\n';
      }, initial);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }

    emit_learning_curve(rep.curve, (dir / "learning_curve.csv").string());
    if (config.emit_plots) {
      std::vector<Series> s(4);
      s[0].label = "train mse_data";
      s[1].label = "val mse_data";
      s[2].label = "val abs_violation";
      s[3].label = "val mse_derivative";
      for (const auto& r : rep.curve) {
        const double e = double(r.epoch);
        if (r.train_split) {
          s[0].x.push_back(e), s[0].y.push_back(r.metrics.mse_data);
          continue;
        }
        s[1].x.push_back(e), s[1].y.push_back(r.metrics.mse_data);
        if (r.metrics.abs_violation) s[2].x.push_back(e), s[2].y.push_back(*r.metrics.abs_violation);
        if (r.metrics.mse_derivative) s[3].x.push_back(e), s[3].y.push_back(*r.metrics.mse_derivative);
      }
      if (s[3].x.empty()) s.pop_back();
      emit_svg_plot(s, train::to_string(tc.model) + " on " + tc.problem, "epoch",
                    (dir / "learning_curve.svg").string());
    }

    json mj;
    mj["model"] = train::to_string(tc.model);
    mj["problem"] = tc.problem;
    mj["seed"] = tc.seed;
    mj["num_points"] = data.size();
    mj["diverged"] = rep.diverged;
    if (rep.diverged) {
      mj["diagnostic"] = rep.diagnostic;
      auto os = open_out((dir / "metrics.json").string());
      os << mj.dump(2) << '\n';
      finish(os, (dir / "metrics.json").string());
      log << "training diverged: " << rep.diagnostic << '\n';
      summary.exit_code = kDiverged;
      summary.message = rep.diagnostic;
      return summary;
    }

    try {
      net::save_checkpoint(rep.best_params, (dir / "checkpoint.txt").string());
      net::save_checkpoint(rep.final_params, (dir / "checkpoint_final.txt").string());
    } catch (const std::exception& e) {
      throw IoError(e.what());
    }

    // Inference at the best checkpoint, selecting the BC/IC system per point.
    const bool daehn = tc.model == train::Model::daehn;
    const bool bypass = daehn && config.inference_bypass_projection;
    const auto pcfg = tc.projection();
    const auto pool = problems::kkt_pool(ex.spec, ex.coupling);
    auto evaluate = [&](const net::NetworkParams& params) {
      const auto cp = ex.constraint_params(params);
      const auto backbone = train::infer(ex, params, data.inputs, false, pcfg);
      std::vector<train::PointEval> projected;
      if (daehn) projected = train::infer(ex, params, data.inputs, true, pcfg, &pool);
      const auto& reported = daehn && !bypass ? projected : backbone;
      json j;
      j["train"] = metrics_json(split_metrics(ex, reported, data, true, cp, daehn), daehn);
      j["val"] = metrics_json(split_metrics(ex, reported, data, false, cp, daehn), daehn);
      return std::tuple{j, backbone, projected};
    };
    auto [best_j, best_backbone, best_projected] = evaluate(rep.best_params);
    auto [final_j, final_backbone, final_projected] = evaluate(rep.final_params);
    const auto& reported = daehn && !bypass ? best_projected : best_backbone;

    mj["best_epoch"] = rep.best_epoch;
    mj["activation_epoch"] = rep.activation_epoch ? json(*rep.activation_epoch) : json(nullptr);
    mj["inference_bypass_projection"] = bypass;
    mj["best"] = best_j;
    mj["final"] = final_j;
    if (daehn) {
      const auto cp = ex.constraint_params(rep.best_params);
      const auto on = split_metrics(ex, best_projected, data, false, cp, true);
      const auto off = split_metrics(ex, best_backbone, data, false, cp, false);
      json b;
      b["projection_gap"] = number(on.projection_gap.value_or(0.0));
      b["val_mse_data_projected"] = number(on.mse_data);
      b["val_mse_data_bypassed"] = number(off.mse_data);
      b["relative_mse_change"] = number(on.mse_data > 0 ? std::abs(off.mse_data - on.mse_data) / on.mse_data : 0.0);
      mj["bypass"] = b;
    }
    if (ex.estimate) {
      json p;
      for (std::size_t i = 0; i < ex.spec.param_names.size(); ++i)
        p[ex.spec.param_names[i]] = number(rep.best_params.phys_params[i]);
      mj["phys_params"] = p;
      json t;
      for (std::size_t i = 0; i < ex.spec.param_names.size(); ++i) t[ex.spec.param_names[i]] = ex.spec.true_params[i];
      mj["phys_params_true"] = t;

      auto os = open_out((dir / "phys_params.csv").string());
      os << "epoch";
      for (const auto& n : ex.spec.param_names) os << ',' << n;
      os << '\n';
      for (const auto& [epoch, values] : rep.phys_trajectory) {
        os << epoch;
        for (double v : values) os << ',' << fmt(v);
        os << '\n';
      }
      finish(os, (dir / "phys_params.csv").string());
    }

    // predictions.csv: every row at the best checkpoint.
    {
      const std::string path = (dir / "predictions.csv").string();
      auto os = open_out(path);
      for (const auto& a : ex.spec.axes) os << a.name << ',';
      os << "split";
      for (const auto& o : ex.spec.outputs) os << ",target_" << o;
      for (const auto& o : ex.spec.outputs) os << ",true_" << o;
      for (const auto& o : ex.spec.outputs) os << ",predicted_" << o;
      os << '\n';
      for (std::size_t i = 0; i < data.size(); ++i) {
        for (double v : data.x(i)) os << fmt(v) << ',';
        os << (data.train[i] ? "train" : "val");
        for (double v : data.y(i)) os << ',' << fmt(v);
        for (double v : clean.y(i)) os << ',' << fmt(v);
        for (double v : reported[i].y) os << ',' << fmt(v);
        os << '\n';
      }
      finish(os, path);
    }

    // parity.csv on the validation split.
    {
      std::vector<sym::DerivVar> dv = ex.registry().deriv_vars;
      const bool registry_derivs = !dv.empty();
      if (!registry_derivs)
        for (std::size_t p = 0; p < ex.spec.output_dim(); ++p)
          for (std::size_t a = 0; a < ex.spec.input_dim(); ++a) dv.push_back({p, a, 1});
      sym::ConstraintSet probe(ex.spec.input_dim(), ex.spec.output_dim());
      probe.deriv_vars = dv;
      const bool with_projected = daehn && !bypass;

      std::vector<ParityRow> rows;
      std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> series;
      auto add = [&](const std::string& q, double t, double p) {
        rows.push_back({q, t, p});
        series[q].first.push_back(t);
        series[q].second.push_back(p);
      };
      for (std::size_t i = 0; i < data.size(); ++i) {
        if (data.train[i]) continue;
        const auto x = data.x(i);
        for (std::size_t p = 0; p < ex.spec.output_dim(); ++p) add(ex.spec.outputs[p], clean.y(i)[p], reported[i].y[p]);
        const auto ad = net::forward_with_derivatives<double>(rep.best_params, x, probe, std::nullopt);
        std::vector<double> pd;
        if (with_projected) {
          if (registry_derivs) {
            pd = reported[i].d;
          } else {
            const auto& sys = pool.at(problems::select_pool(ex.spec, x));
            const auto full = projected_input_derivatives(ex, sys, rep.best_params, x, pcfg);
            for (const auto& v : dv) pd.push_back(full[v.output * ex.spec.input_dim() + v.axis]);
          }
        }
        for (std::size_t q = 0; q < dv.size(); ++q) {
          const double truth = ex.spec.oracle_derivative(x, dv[q]);
          const std::string label = derivative_label(ex.spec, dv[q]);
          add(label + "[ad]", truth, ad.d_hat[q]);
          if (with_projected) add(label + "[projected]", truth, pd[q]);
        }
      }
      emit_parity(rows, (dir / "parity.csv").string());
      json r2;
      for (const auto& [q, tp] : series) {
        const double r = r_squared(tp.first, tp.second);
        r2[q] = number(r);
        summary.parity_r2.emplace_back(q, r);
      }
      mj["parity_r2_val"] = r2;
    }

    if (ex.spec.input_dim() == 2) {
      constexpr std::size_t G = 100;
      const auto& a0 = ex.spec.axes[0];
      const auto& a1 = ex.spec.axes[1];
      std::vector<double> grid;
      grid.reserve(2 * G * G);
      for (std::size_t i = 0; i < G; ++i)
        for (std::size_t j = 0; j < G; ++j) {
          grid.push_back(a0.lo + (a0.hi - a0.lo) * double(i) / double(G - 1));
          grid.push_back(a1.lo + (a1.hi - a1.lo) * double(j) / double(G - 1));
        }
      const auto pts = train::infer(ex, rep.best_params, grid, daehn && !bypass, pcfg, &pool);
      const auto cp = ex.constraint_params(rep.best_params);
      std::vector<HeatmapRow> rows;
      rows.reserve(G * G);
      for (std::size_t k = 0; k < G * G; ++k) {
        const std::span<const double> x(grid.data() + 2 * k, 2);
        const double truth = problems::oracle_solution(ex.spec, x)[0];
        std::vector<train::PointEval> one{pts[k]};
        std::vector<double> t1 = problems::oracle_solution(ex.spec, x);
        const auto m = train::evaluate_metrics(ex, one, x, t1, cp, false);
        rows.push_back({x[0], x[1], truth, pts[k].y[0], std::abs(pts[k].y[0] - truth), m.abs_violation.value_or(0.0)});
      }
      emit_heatmap(rows, (dir / "heatmap.csv").string());
    }

    json tj;
    tj["backbone_and_ad_s"] = rep.timing.backbone_ad;
    tj["projection_s"] = rep.timing.projection;
    tj["backprop_s"] = rep.timing.backprop;
    tj["optimizer_s"] = rep.timing.optimizer;
    tj["steps"] = rep.steps;
    tj["wall_s"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - wall0).count();
    mj["timing"] = tj;
    {
      const std::string path = (dir / "metrics.json").string();
      auto os = open_out(path);
      os << mj.dump(2) << '\n';
      finish(os, path);
    }
    log << "best epoch " << rep.best_epoch << ": val " << best_j["val"].dump() << '\n';
    summary.message = "ok";
  } catch (const ConfigError& e) {
    log << "config error: " << e.what() << '\n';
    summary.exit_code = kConfigError;
    summary.message = e.what();
  } catch (const IoError& e) {
    log << "i/o error: " << e.what() << '\n';
    summary.exit_code = kIoError;
    summary.message = e.what();
  }
  return summary;
}

}  // namespace daehn::cli
