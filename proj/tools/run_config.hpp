#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ellip/dataset.hpp"
#include "ellip/invert.hpp"
#include "ellip/model.hpp"
#include "ellip/train.hpp"

namespace ellip::cli {

/// A film or substrate entry: a built-in table name, or a name plus a CSV
/// table path.
struct MaterialRef {
  std::string name;
  std::string csv;  // empty for built-ins
};

struct SynthSettings {
  std::vector<MaterialRef> films;
  std::vector<MaterialRef> substrates;
  std::size_t wavelengths = 64;
  double lambda_min = 380.28;
  double lambda_max = 999.87;
  std::size_t thickness_levels = 20;
  double d_min = 1.0;
  double d_max = 96.0;
  data::SplitRatios ratios;
  unsigned workers = 1;
};

struct InvertSettings {
  invert::Bounds bounds;
  std::size_t starts = 32;
  double tol = 1e-12;
  double dedup_radius = 0.02;
  std::size_t max_iterations = 1000;
  std::size_t workers = 1;
};

struct RunConfig {
  std::uint64_t seed = 0;
  double theta1_deg = 70.0;
  double n1 = 1.0;
  double k1 = 0.0;
  SynthSettings synth;
  nn::NetConfig net;
  train::TrainConfig train;
  InvertSettings invert;
  std::string device_precision = "float64";

  static RunConfig defaults();
  /// Pushes the top-level seed into the sub-configs.
  void sync_seeds();
  void validate() const;
};

class ConfigError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Fields missing from the file keep their defaults; unknown keys throw.
RunConfig parse_run_config(const std::string& json_text, RunConfig base = RunConfig::defaults());
RunConfig load_run_config(const std::filesystem::path& path);
std::string run_config_json(const RunConfig& config);

data::SynthesisPlan synthesis_plan(const RunConfig& config);

/// "a,b" -> LossWeights.
loss::LossWeights parse_loss_weights(const std::string& text);

}  // namespace ellip::cli
