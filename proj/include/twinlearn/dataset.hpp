#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "twinlearn/observation.hpp"
#include "twinlearn/surrogate.hpp"

namespace twinlearn {

// One model run over a forecast window under one config, reduced to
// observation space: per-checkpoint predicted observations and their
// discrepancies against the measurements.
struct WindowRun {
  PhysicsConfig config;
  std::vector<Eigen::VectorXd> forecasts;    // o_tau, one per checkpoint
  std::vector<Discrepancy> discrepancies;    // aligned with forecasts
  int window_id = 0;

  int checkpoints() const { return static_cast<int>(forecasts.size()); }
  int observed_count() const { return forecasts.empty() ? 0 : static_cast<int>(forecasts[0].size()); }
};

enum class Grain : int { PerGridpoint = 0, PerRun = 1 };

struct ErrorDataset {
  Eigen::MatrixXd features;  // n_samples x n_features
  Eigen::MatrixXd targets;   // n_samples x n_targets
  std::vector<std::string> feature_names;
  std::vector<std::string> target_names;
  Grain grain = Grain::PerGridpoint;

  Eigen::Index rows() const { return features.rows(); }
  std::string schema_fingerprint() const;
};

struct PhysicsDataset {
  Eigen::MatrixXd features;  // n_samples x 5
  std::vector<PhysicsConfig> targets;
  std::vector<std::string> feature_names;

  Eigen::Index rows() const { return features.rows(); }
};

struct SplitSpec {
  double train_fraction = 0.8;  // strictly in (0, 1)
  std::uint64_t seed = 0;
};

// Concatenated one-hot blocks per package, length 4+3+2+3 = 12.
Eigen::VectorXd encode_config(const PhysicsConfig& config);
PhysicsConfig decode_config(const Eigen::VectorXd& encoded);
std::vector<std::string> config_feature_names();

// Feature row for one observed point of a run: [one-hot config | o at each
// past checkpoint | discrepancy at each past checkpoint | current o]. The
// current checkpoint's discrepancy (the prediction target) never appears.
Eigen::VectorXd error_features_for_point(const WindowRun& run, int point);
std::vector<std::string> error_feature_names(int checkpoints);

// One row per (run, observed point); target = current-checkpoint discrepancy
// at that point.
ErrorDataset build_error_records(const std::vector<WindowRun>& runs);

// Per-run aggregate row: [one-hot config | past ||o|| | past ||delta|| |
// current ||o|| | mean/min/max/variance of current o]; target = ||delta_t||.
Eigen::VectorXd norm_features(const WindowRun& run);
std::vector<std::string> norm_feature_names(int checkpoints);
ErrorDataset build_norm_records(const std::vector<WindowRun>& runs);

// [mean, min, max, population variance, two-norm] of a discrepancy field.
Eigen::VectorXd physics_features(const Eigen::VectorXd& delta);
std::vector<std::string> physics_feature_names();

// One row per run from its current-checkpoint discrepancy; target = config.
PhysicsDataset build_physics_records(const std::vector<WindowRun>& runs);

// Deterministic shuffled split: ceil(f*n) train rows, the rest test.
std::pair<std::vector<int>, std::vector<int>> split_indices(int n, const SplitSpec& spec);
std::pair<ErrorDataset, ErrorDataset> split(const ErrorDataset& ds, const SplitSpec& spec);
std::pair<PhysicsDataset, PhysicsDataset> split(const PhysicsDataset& ds, const SplitSpec& spec);

// CSV persistence: header row names feature columns then target columns;
// row order is construction order. The sidecar <path>.meta.json records
// schema, grain, seed, and generation parameters.
void write_error_dataset(const ErrorDataset& ds, const std::filesystem::path& csv_path,
                         const std::string& metadata_json);
ErrorDataset read_error_dataset(const std::filesystem::path& csv_path);
void write_physics_dataset(const PhysicsDataset& ds, const std::filesystem::path& csv_path,
                           const std::string& metadata_json);

}  // namespace twinlearn
