#pragma once

// Flat key = value experiment files.
//
//   # comment
//   model = daehn
//   problem = ode_system
//   lr = 1e-3
//
// Unknown and duplicate keys are errors; every missing required key is listed.

#include <stdexcept>
#include <string>
#include <vector>

#include "daehn/training/train.hpp"

namespace daehn::cli {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ExperimentConfig {
  train::TrainConfig train;
  std::string out_dir = "results";
  bool emit_plots = true;
  bool inference_bypass_projection = false;
  std::string init_checkpoint;  // start from these parameters instead of the seeded init
  std::string data_file;        // CSV to train on instead of the generated dataset
};

const std::vector<std::string>& required_keys();
const std::vector<std::string>& optional_keys();

ExperimentConfig parse_config_text(const std::string& text);
/// Throws ConfigError (parse or validation) or std::ios_base::failure.
ExperimentConfig parse_config(const std::string& path);
/// Throws ConfigError naming every offending field.
void validate(const ExperimentConfig& config);
std::string serialize(const ExperimentConfig& config);

/// Applies one key = value assignment (used for command-line overrides).
void set_value(ExperimentConfig& config, const std::string& key, const std::string& value);

}  // namespace daehn::cli
