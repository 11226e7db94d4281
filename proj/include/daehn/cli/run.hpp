#pragma once

// Experiment orchestration and result files.

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "daehn/cli/config.hpp"

namespace daehn::cli {

enum ExitCode { kOk = 0, kConfigError = 1, kDiverged = 2, kIoError = 3 };

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// One parity row: quantity label, ground truth, prediction.
struct ParityRow {
  std::string quantity;
  double truth = 0.0, predicted = 0.0;
};

struct HeatmapRow {
  double x1 = 0.0, x2 = 0.0, truth = 0.0, predicted = 0.0, abs_error = 0.0, abs_violation = 0.0;
};

struct Series {
  std::string label;
  std::vector<double> x, y;
};

void emit_learning_curve(const std::vector<train::CurveRow>& rows, const std::string& path);
void emit_parity(const std::vector<ParityRow>& rows, const std::string& path);
void emit_heatmap(const std::vector<HeatmapRow>& rows, const std::string& path);
/// Line plot with a log10 y axis; non-positive and non-finite points are dropped.
void emit_svg_plot(const std::vector<Series>& series, const std::string& title, const std::string& xlabel,
                   const std::string& path);

/// Coefficient of determination of predictions against truth.
double r_squared(const std::vector<double>& truth, const std::vector<double>& predicted);

/// Label of a derivative quantity, e.g. dy1/dx1 or d2T/dx2.
std::string derivative_label(const problems::ProblemSpec& spec, const sym::DerivVar& v);

struct RunSummary {
  int exit_code = kOk;
  std::string message;
  std::string out_dir;
  /// R^2 per parity quantity (validation split).
  std::vector<std::pair<std::string, double>> parity_r2;
};

/// Trains, evaluates and writes every artifact into config.out_dir.
RunSummary run_experiment(const ExperimentConfig& config, std::ostream& log);

}  // namespace daehn::cli
