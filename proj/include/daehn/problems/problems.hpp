#pragma once

// Benchmark problem registry: constraints, domains, data generators, oracles
// and the boundary/initial condition pool of projection systems.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "daehn/symbolic/kkt.hpp"

namespace daehn::problems {

struct Trajectory {
  std::vector<double> t;
  std::vector<std::vector<double>> y;
};

using Rhs = std::function<std::vector<double>(double t, const std::vector<double>& y)>;

/// Classical RK4 on [t0, t1] with step dt (the last step is shortened to land
/// on t1). Throws std::runtime_error naming the time of a non-finite state.
Trajectory rk4_integrate(const Rhs& rhs, std::vector<double> y0, double t0, double t1, double dt);

struct Axis {
  std::string name;
  double lo = 0.0, hi = 1.0;
  std::size_t grid = 0;  // tensor grid points along this axis (0: num_points)
};

/// Equality appended to the projection when the point lies on `axis` at one of
/// `at` (within tolerance).
struct SideCondition {
  std::string name;
  std::size_t axis = 0;
  std::vector<double> at;
  sym::Expr equality;
};

struct ProblemSpec {
  std::string name;
  std::string summary;
  std::vector<Axis> axes;
  std::vector<std::string> outputs;
  std::vector<std::string> param_names;
  std::vector<double> true_params;
  std::vector<double> estimate_init;  // inverse-mode starting values
  std::optional<sym::TaylorCoupling> coupling;
  std::vector<SideCondition> boundary;
  std::vector<SideCondition> initial;
  std::size_t default_points = 0;
  std::string provenance;  // analytic | rk4

  std::function<sym::ConstraintSet()> constraints;
  std::function<std::vector<double>(std::span<const double>)> oracle;
  /// d^order y_output / d x_axis^order at a point.
  std::function<double(std::span<const double>, const sym::DerivVar&)> oracle_derivative;

  std::size_t input_dim() const { return axes.size(); }
  std::size_t output_dim() const { return outputs.size(); }
  std::size_t grid_size() const;
};

std::vector<std::string> problem_names();
/// Throws std::invalid_argument for an unknown name.
ProblemSpec build_problem(const std::string& name);

struct Dataset {
  std::size_t input_dim = 0, output_dim = 0;
  std::vector<double> inputs;   // rows of input_dim
  std::vector<double> targets;  // rows of output_dim
  std::vector<std::uint8_t> train;  // 1 train, 0 validation
  std::string provenance;

  std::size_t size() const { return input_dim ? inputs.size() / input_dim : 0; }
  std::span<const double> x(std::size_t i) const { return {inputs.data() + i * input_dim, input_dim}; }
  std::span<const double> y(std::size_t i) const { return {targets.data() + i * output_dim, output_dim}; }
  Dataset subset(bool train_split) const;
};

/// Grid or trajectory samples with an 80/20 train/validation split. When
/// num_points is below the grid size, rows are subsampled without replacement.
Dataset generate_dataset(const ProblemSpec& spec, std::size_t num_points, std::uint64_t seed);

/// Reads the CSV written by write_dataset_csv. Without a split column the rows
/// get a seeded 80/20 split.
Dataset read_dataset_csv(const ProblemSpec& spec, const std::string& path, std::uint64_t seed);

/// CSV with header x-names,y-names[,split].
void write_dataset_csv(const ProblemSpec& spec, const Dataset& data, const std::string& path, bool with_split);

constexpr double kBoundaryTol = 1e-9;

struct PoolKey {
  bool bc = false;
  bool ic = false;
  auto operator<=>(const PoolKey&) const = default;
};

/// One projection system per BC/IC combination the problem declares. The
/// no-condition system is the base used in training.
std::map<PoolKey, sym::KktSystem> kkt_pool(const ProblemSpec& spec, const std::optional<sym::TaylorCoupling>& coupling);

PoolKey select_pool(const ProblemSpec& spec, std::span<const double> point);

std::vector<double> oracle_solution(const ProblemSpec& spec, std::span<const double> point);

}  // namespace daehn::problems
