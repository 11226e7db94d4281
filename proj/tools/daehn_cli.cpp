#include <algorithm>
#include <iostream>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "daehn/cli/run.hpp"

using namespace daehn;

namespace {

cli::ExperimentConfig load(const std::string& path, const std::optional<std::string>& model,
                           const std::optional<std::string>& problem, const std::optional<std::uint64_t>& seed,
                           const std::optional<std::string>& out_dir) {
  auto c = cli::parse_config(path);
  if (model) cli::set_value(c, "model", *model);
  if (problem) cli::set_value(c, "problem", *problem);
  if (seed) c.train.seed = *seed;
  if (out_dir) c.out_dir = *out_dir;
  cli::validate(c);
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hard-constrained neural surrogates for differential-algebraic systems"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::string> model, problem, out_dir;
  std::optional<std::uint64_t> seed;
  auto* run = app.add_subcommand("run", "train one model and write its artifacts");
  run->add_option("--config", config_path, "experiment file")->required();
  run->add_option("--model", model, "mlp | pinn | daehn");
  run->add_option("--problem", problem, "problem name");
  run->add_option("--seed", seed, "random seed");
  run->add_option("--out-dir", out_dir, "output directory");

  auto* list = app.add_subcommand("list-problems", "print the registered problems");

  std::string validate_path;
  auto* val = app.add_subcommand("validate", "parse and validate an experiment file");
  val->add_option("--config", validate_path, "experiment file")->required();

  std::vector<std::string> sweep_paths;
  unsigned jobs = std::max(1u, std::thread::hardware_concurrency());
  auto* sweep = app.add_subcommand("sweep", "run several experiment files concurrently");
  sweep->add_option("--config", sweep_paths, "experiment files (each needs its own out_dir)")->required();
  sweep->add_option("--jobs", jobs, "concurrent runs")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : cli::kConfigError;
  }

  if (list->parsed()) {
    for (const auto& name : problems::problem_names()) {
      const auto spec = problems::build_problem(name);
      std::cout << name << "  " << spec.summary << '\n';
    }
    return cli::kOk;
  }

  if (val->parsed()) {
    try {
      std::cout << cli::serialize(cli::parse_config(validate_path));
      return cli::kOk;
    } catch (const cli::ConfigError& e) {
      std::cerr << "config error: " << e.what() << '\n';
      return cli::kConfigError;
    }
  }

  if (run->parsed()) {
    cli::ExperimentConfig c;
    try {
      c = load(config_path, model, problem, seed, out_dir);
    } catch (const cli::ConfigError& e) {
      std::cerr << "config error: " << e.what() << '\n';
      return cli::kConfigError;
    }
    const auto s = cli::run_experiment(c, std::cout);
    if (s.exit_code != cli::kOk) std::cerr << s.message << '\n';
    return s.exit_code;
  }

  std::vector<cli::ExperimentConfig> configs;
  std::set<std::string> dirs;
  try {
    for (const auto& p : sweep_paths) {
      configs.push_back(load(p, std::nullopt, std::nullopt, std::nullopt, std::nullopt));
      if (!dirs.insert(configs.back().out_dir).second)
        throw cli::ConfigError(p + ": out_dir " + configs.back().out_dir + " is shared with another run");
    }
  } catch (const cli::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return cli::kConfigError;
  }
  std::vector<cli::RunSummary> results(configs.size());
  std::vector<std::string> logs(configs.size());
  std::size_t next = 0;
  std::mutex mu;
  auto worker = [&] {
    for (;;) {
      std::size_t k;
      {
        std::lock_guard lock(mu);
        if (next == configs.size()) return;
        k = next++;
      }
      std::ostringstream log;
      results[k] = cli::run_experiment(configs[k], log);
      logs[k] = log.str();
    }
  };
  std::vector<std::jthread> pool;
  for (unsigned t = 0; t < std::min<std::size_t>(jobs, configs.size()); ++t) pool.emplace_back(worker);
  pool.clear();
  int worst = cli::kOk;
  for (std::size_t k = 0; k < configs.size(); ++k) {
    std::cout << "== " << sweep_paths[k] << " -> " << configs[k].out_dir << " (exit " << results[k].exit_code
              << ")\n"
              << logs[k];
    worst = std::max(worst, results[k].exit_code);
  }
  return worst;
}
