#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "ellip/optics.hpp"

namespace ellip::data {

enum class MaterialRole { Film, Substrate };

struct MaterialSample {
  double lambda_nm = 0.0;
  double n = 1.0;
  double k = 0.0;
};

struct MaterialTable {
  std::string name;
  MaterialRole role = MaterialRole::Film;
  std::vector<MaterialSample> samples;  // strictly increasing lambda

  void validate() const;
  double lambda_min() const { return samples.front().lambda_nm; }
  double lambda_max() const { return samples.back().lambda_nm; }
};

class ExtrapolationError : public std::out_of_range {
  using std::out_of_range::out_of_range;
};

class ParseError : public std::runtime_error {
public:
  ParseError(std::size_t line, const std::string& what)
      : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

private:
  std::size_t line_;
};

/// Piecewise-linear (n, k) at lambda. No extrapolation.
std::pair<double, double> interpolate_nk(const MaterialTable& table, double lambda_nm);

/// CSV with header `lambda_nm,n,k`.
MaterialTable read_material_csv(const std::filesystem::path& path, std::string name,
                                MaterialRole role);

/// Built-in synthetic dispersion library covering 380-1000 nm.
std::vector<MaterialTable> builtin_films();
std::vector<MaterialTable> builtin_substrates();
const MaterialTable& find_material(const std::vector<MaterialTable>& tables,
                                   const std::string& name);

enum class Split : std::uint8_t { Train, Val, Test };
const char* split_name(Split s);
Split parse_split(const std::string& s);

struct EllipsometricRecord {
  std::string film_id;
  std::string substrate_id;
  double lambda = 0.0;  // nm
  double n2 = 0.0;
  double k2 = 0.0;
  double d = 0.0;  // nm
  double n3 = 0.0;
  double k3 = 0.0;
  double psi = 0.0;    // degrees
  double delta = 0.0;  // degrees
  Split split = Split::Train;

  optics::LayerStack stack() const { return {n2, k2, d, n3, k3}; }
  bool operator==(const EllipsometricRecord&) const = default;
};

struct SplitRatios {
  double train = 0.8;
  double val = 0.1;
  double test = 0.1;

  void validate() const;
  bool operator==(const SplitRatios&) const = default;
};

struct SynthesisPlan {
  std::vector<MaterialTable> films;
  std::vector<MaterialTable> substrates;
  std::vector<double> lambda_grid;
  std::vector<double> thickness_levels;
  optics::ExperimentConfig cfg;  // cfg.lambda is overridden per record
  SplitRatios ratios;
  std::uint64_t seed = 0;
  unsigned workers = 1;

  void validate() const;
  std::size_t expected_records() const {
    return films.size() * substrates.size() * lambda_grid.size() * thickness_levels.size();
  }
};

std::vector<double> uniform_grid(double lo, double hi, std::size_t count);
/// 64 points on [380.28, 999.87] nm.
std::vector<double> default_lambda_grid(std::size_t count = 64);
/// 20 levels on [1, 96] nm.
std::vector<double> default_thickness_levels(std::size_t count = 20);

struct SkippedRecord {
  std::string film_id;
  std::string substrate_id;
  double lambda = 0.0;
  double d = 0.0;
  std::string reason;
};

struct SynthesisLog {
  std::vector<SkippedRecord> skipped;
};

/// One record per (film, substrate, lambda, thickness), film-major order,
/// then split per (film, substrate) combination.
std::vector<EllipsometricRecord> synthesize(const SynthesisPlan& plan, SynthesisLog* log = nullptr);

/// Seeded shuffle inside every (film, substrate) combination, then a
/// largest-remainder allocation of train/val/test counts.
void split_dataset(std::span<EllipsometricRecord> records, const SplitRatios& ratios,
                   std::uint64_t seed);

struct ColumnStats {
  double mean = 0.0;
  double std = 1.0;
  bool constant = false;
  bool operator==(const ColumnStats&) const = default;
};

inline constexpr std::array<const char*, 5> kInputColumns{"delta", "psi", "n3", "k3", "lambda"};
inline constexpr std::array<const char*, 3> kTargetColumns{"n2", "k2", "d"};

/// Z-score statistics from the training split (population std).
struct NormStats {
  std::array<ColumnStats, 5> inputs;   // delta, psi, n3, k3, lambda
  std::array<ColumnStats, 3> targets;  // n2, k2, d

  std::array<double, 5> normalize_inputs(const EllipsometricRecord& r) const;
  std::array<double, 3> normalize_targets(const EllipsometricRecord& r) const;
  double denormalize_target(std::size_t i, double z) const {
    return z * targets[i].std + targets[i].mean;
  }
  bool operator==(const NormStats&) const = default;
};

NormStats compute_norm_stats(std::span<const EllipsometricRecord> records);

inline constexpr const char* kGeneratorVersion = "ellip-synth 1.0";
inline constexpr std::array<const char*, 11> kDatasetColumns{
    "film_id", "substrate_id", "lambda", "n2", "k2", "d", "n3", "k3", "psi", "delta", "split"};

struct Manifest {
  std::string generator_version = kGeneratorVersion;
  double theta1_deg = 70.0;
  double n1 = 1.0;
  double k1 = 0.0;
  std::uint64_t seed = 0;
  SplitRatios ratios;
  NormStats norm;
  std::size_t record_count = 0;
  std::vector<std::string> films;
  std::vector<std::string> substrates;

  optics::ExperimentConfig experiment(double lambda) const {
    return {theta1_deg, n1, k1, lambda};
  }
  bool operator==(const Manifest&) const = default;
};

struct Dataset {
  std::vector<EllipsometricRecord> records;
  Manifest manifest;
};

/// Synthesize + split + stats in one call.
Dataset build_dataset(const SynthesisPlan& plan, SynthesisLog* log = nullptr);

/// Manifest as JSON text (the sidecar format) and back.
std::string manifest_to_json(const Manifest& m);
Manifest manifest_from_json_text(const std::string& text);

/// Sidecar manifest path: `<dataset>.manifest.json`.
std::filesystem::path manifest_path_for(const std::filesystem::path& csv_path);

void write_dataset(const std::filesystem::path& csv_path, const Dataset& dataset);
Dataset read_dataset(const std::filesystem::path& csv_path);

std::vector<EllipsometricRecord> filter_split(std::span<const EllipsometricRecord> records,
                                              Split split);

}  // namespace ellip::data
