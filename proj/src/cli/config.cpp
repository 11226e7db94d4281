#include "daehn/cli/config.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <set>
#include <sstream>

#include "daehn/problems/problems.hpp"

namespace daehn::cli {

namespace {

std::string trim(std::string s) {
  const auto ws = [](unsigned char c) { return std::isspace(c) != 0; };
  while (!s.empty() && ws(s.back())) s.pop_back();
  std::size_t i = 0;
  while (i < s.size() && ws(s[i])) ++i;
  return s.substr(i);
}

std::string fmt(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

double to_double(const std::string& key, const std::string& v) {
  const std::string s = trim(v);
  if (s == "inf" || s == "+inf") return std::numeric_limits<double>::infinity();
  double out = 0.0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), out);
  if (s.empty() || r.ec != std::errc() || r.ptr != s.data() + s.size())
    throw ConfigError(key + ": expected a number, got '" + v + "'");
  return out;
}

template <class U>
U to_unsigned(const std::string& key, const std::string& v) {
  const std::string s = trim(v);
  U out = 0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), out);
  if (s.empty() || r.ec != std::errc() || r.ptr != s.data() + s.size())
    throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
  return out;
}

int to_int(const std::string& key, const std::string& v) {
  const std::string s = trim(v);
  int out = 0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), out);
  if (s.empty() || r.ec != std::errc() || r.ptr != s.data() + s.size())
    throw ConfigError(key + ": expected an integer, got '" + v + "'");
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  const std::string s = trim(v);
  if (s == "true" || s == "1" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "no") return false;
  throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

std::vector<std::pair<std::string, double>> to_estimates(const std::string& key, const std::string& v) {
  std::vector<std::pair<std::string, double>> out;
  std::stringstream ss(v);
  for (std::string item; std::getline(ss, item, ',');) {
    item = trim(item);
    if (item.empty()) continue;
    const auto colon = item.find(':');
    if (colon == std::string::npos) throw ConfigError(key + ": expected name:value pairs, got '" + item + "'");
    out.emplace_back(trim(item.substr(0, colon)), to_double(key, item.substr(colon + 1)));
  }
  return out;
}

struct Field {
  std::function<void(ExperimentConfig&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

const std::map<std::string, Field>& fields() {
  using C = ExperimentConfig;
  static const std::map<std::string, Field> f = [] {
    std::map<std::string, Field> m;
    auto num = [&](const char* k, double train::TrainConfig::*p) {
      m[k] = {[k, p](C& c, const std::string& v) { c.train.*p = to_double(k, v); },
              [p](const C& c) { return fmt(c.train.*p); }};
    };
    auto count = [&](const char* k, std::size_t train::TrainConfig::*p) {
      m[k] = {[k, p](C& c, const std::string& v) { c.train.*p = to_unsigned<std::size_t>(k, v); },
              [p](const C& c) { return std::to_string(c.train.*p); }};
    };
    auto integer = [&](const char* k, int train::TrainConfig::*p) {
      m[k] = {[k, p](C& c, const std::string& v) { c.train.*p = to_int(k, v); },
              [p](const C& c) { return std::to_string(c.train.*p); }};
    };
    m["model"] = {[](C& c, const std::string& v) {
                    const auto model = train::parse_model(trim(v));
                    if (!model) throw ConfigError("model: expected mlp, pinn or daehn, got '" + v + "'");
                    c.train.model = *model;
                  },
                  [](const C& c) { return train::to_string(c.train.model); }};
    m["problem"] = {[](C& c, const std::string& v) { c.train.problem = trim(v); },
                    [](const C& c) { return c.train.problem; }};
    count("num_epochs", &train::TrainConfig::num_epochs);
    count("model_depth", &train::TrainConfig::model_depth);
    count("hidden_dim", &train::TrainConfig::hidden_dim);
    num("lr", &train::TrainConfig::lr);
    count("num_points", &train::TrainConfig::num_points);
    num("pinn_reg_factor", &train::TrainConfig::pinn_reg_factor);
    num("hardnet_reg_factor", &train::TrainConfig::hardnet_reg_factor);
    num("taylor_offset", &train::TrainConfig::taylor_offset);
    integer("taylor_order", &train::TrainConfig::taylor_order);
    num("eta", &train::TrainConfig::eta);
    num("newton_step_length", &train::TrainConfig::newton_step_length);
    integer("max_newton_iter", &train::TrainConfig::max_newton_iter);
    num("noise_std", &train::TrainConfig::noise_std);
    num("noise_mean", &train::TrainConfig::noise_mean);
    num("noise_scale", &train::TrainConfig::noise_scale);

    m["seed"] = {[](C& c, const std::string& v) { c.train.seed = to_unsigned<std::uint64_t>("seed", v); },
                 [](const C& c) { return std::to_string(c.train.seed); }};
    count("eval_every", &train::TrainConfig::eval_every);
    count("batch_size", &train::TrainConfig::batch_size);
    num("residual_tol", &train::TrainConfig::residual_tol);
    num("jacobian_regularization", &train::TrainConfig::jacobian_regularization);
    m["detach_projected_targets"] = {
        [](C& c, const std::string& v) { c.train.detach_projected_targets = to_bool("detach_projected_targets", v); },
        [](const C& c) { return std::string(c.train.detach_projected_targets ? "true" : "false"); }};
    m["projection_gradient"] = {
        [](C& c, const std::string& v) {
          const auto s = trim(v);
          if (s == "implicit") c.train.projection_gradient = train::ProjectionGradient::implicit;
          else if (s == "unrolled") c.train.projection_gradient = train::ProjectionGradient::unrolled;
          else throw ConfigError("projection_gradient: expected implicit or unrolled, got '" + v + "'");
        },
        [](const C& c) {
          return std::string(c.train.projection_gradient == train::ProjectionGradient::implicit ? "implicit"
                                                                                               : "unrolled");
        }};
    m["estimate_params"] = {[](C& c, const std::string& v) { c.train.estimate_params = to_estimates("estimate_params", v); },
                            [](const C& c) {
                              std::string s;
                              for (const auto& [n, x] : c.train.estimate_params)
                                s += (s.empty() ? "" : ",") + n + ":" + fmt(x);
                              return s;
                            }};
    m["out_dir"] = {[](C& c, const std::string& v) { c.out_dir = trim(v); }, [](const C& c) { return c.out_dir; }};
    m["emit_plots"] = {[](C& c, const std::string& v) { c.emit_plots = to_bool("emit_plots", v); },
                       [](const C& c) { return std::string(c.emit_plots ? "true" : "false"); }};
    m["inference_bypass_projection"] = {
        [](C& c, const std::string& v) { c.inference_bypass_projection = to_bool("inference_bypass_projection", v); },
        [](const C& c) { return std::string(c.inference_bypass_projection ? "true" : "false"); }};
    m["init_checkpoint"] = {[](C& c, const std::string& v) { c.init_checkpoint = trim(v); },
                            [](const C& c) { return c.init_checkpoint; }};
    m["data_file"] = {[](C& c, const std::string& v) { c.data_file = trim(v); },
                      [](const C& c) { return c.data_file; }};
    return m;
  }();
  return f;
}

}  // namespace

const std::vector<std::string>& required_keys() {
  static const std::vector<std::string> k{
      "model",        "problem",           "num_epochs",    "model_depth", "hidden_dim",
      "lr",           "num_points",        "pinn_reg_factor", "hardnet_reg_factor", "taylor_offset",
      "taylor_order", "eta",               "newton_step_length", "max_newton_iter", "noise_std",
      "noise_mean",   "noise_scale"};
  return k;
}

const std::vector<std::string>& optional_keys() {
  static const std::vector<std::string> k{"seed",
                                          "eval_every",
                                          "batch_size",
                                          "residual_tol",
                                          "jacobian_regularization",
                                          "detach_projected_targets",
                                          "projection_gradient",
                                          "estimate_params",
                                          "out_dir",
                                          "emit_plots",
                                          "inference_bypass_projection",
                                          "init_checkpoint",
                                          "data_file"};
  return k;
}

void set_value(ExperimentConfig& config, const std::string& key, const std::string& value) {
  const auto it = fields().find(key);
  if (it == fields().end()) throw ConfigError("unknown key '" + key + "'");
  it->second.set(config, value);
}

ExperimentConfig parse_config_text(const std::string& text) {
  ExperimentConfig c;
  std::set<std::string> seen;
  std::stringstream ss(text);
  std::size_t lineno = 0;
  for (std::string line; std::getline(ss, line);) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(lineno) + ": expected key = value, got '" + line + "'");
    const std::string key = trim(line.substr(0, eq));
    if (!fields().contains(key)) throw ConfigError("line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    if (!seen.insert(key).second) throw ConfigError("line " + std::to_string(lineno) + ": duplicate key '" + key + "'");
    set_value(c, key, line.substr(eq + 1));
  }
  std::string missing;
  for (const auto& k : required_keys())
    if (!seen.contains(k)) missing += (missing.empty() ? "" : ", ") + k;
  if (!missing.empty()) throw ConfigError("missing required keys: " + missing);
  validate(c);
  return c;
}

ExperimentConfig parse_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_config_text(ss.str());
}

void validate(const ExperimentConfig& config) {
  const auto& t = config.train;
  std::vector<std::string> errs;
  auto require = [&](bool ok, const std::string& msg) {
    if (!ok) errs.push_back(msg);
  };
  const auto names = problems::problem_names();
  require(std::find(names.begin(), names.end(), t.problem) != names.end(),
          "problem: unknown problem '" + t.problem + "'");
  require(t.model_depth >= 1, "model_depth must be at least 1");
  require(t.hidden_dim >= 1, "hidden_dim must be at least 1");
  require(std::isfinite(t.lr) && t.lr > 0.0, "lr must be positive");
  require(t.num_points >= 1, "num_points must be at least 1");
  require(std::isfinite(t.pinn_reg_factor) && t.pinn_reg_factor >= 0.0, "pinn_reg_factor must be non-negative");
  require(std::isfinite(t.hardnet_reg_factor) && t.hardnet_reg_factor >= 0.0,
          "hardnet_reg_factor must be non-negative");
  require(std::isfinite(t.taylor_offset) && t.taylor_offset > 0.0, "taylor_offset must be positive");
  require(t.taylor_order == 1 || t.taylor_order == 2, "taylor_order must be 1 or 2");
  require(!std::isnan(t.eta) && t.eta >= 0.0, "eta must be non-negative");
  require(std::isfinite(t.newton_step_length) && t.newton_step_length > 0.0 && t.newton_step_length <= 1.0,
          "newton_step_length must be in (0, 1]");
  require(t.max_newton_iter >= 1, "max_newton_iter must be at least 1");
  require(std::isfinite(t.noise_std) && t.noise_std >= 0.0, "noise_std must be non-negative");
  require(std::isfinite(t.noise_mean), "noise_mean must be finite");
  require(std::isfinite(t.noise_scale) && t.noise_scale >= 0.0, "noise_scale must be non-negative");
  require(t.eval_every >= 1, "eval_every must be at least 1");
  require(std::isfinite(t.residual_tol) && t.residual_tol > 0.0, "residual_tol must be positive");
  require(std::isfinite(t.jacobian_regularization) && t.jacobian_regularization >= 0.0,
          "jacobian_regularization must be non-negative");
  require(!config.out_dir.empty(), "out_dir must not be empty");
  if (errs.empty()) return;
  std::string msg = "invalid config: ";
  for (std::size_t i = 0; i < errs.size(); ++i) msg += (i ? "; " : "") + errs[i];
  throw ConfigError(msg);
}

std::string serialize(const ExperimentConfig& config) {
  std::string out;
  for (const auto* keys : {&required_keys(), &optional_keys()})
    for (const auto& k : *keys) out += k + " = " + fields().at(k).get(config) + "\n";
  return out;
}

}  // namespace daehn::cli
