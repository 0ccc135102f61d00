#pragma once

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "twinlearn/dataset.hpp"
#include "twinlearn/forest.hpp"
#include "twinlearn/network.hpp"
#include "twinlearn/observation.hpp"
#include "twinlearn/surrogate.hpp"

namespace twinlearn {

enum class Learner : int { RandomForest = 0, NeuralNet = 1 };

struct ObservationSpec {
  ObsKind kind = ObsKind::QoiDiagnostic;
  std::vector<int> indices;    // empty means all slow components
  double noise_sigma = 0.005;  // per-component std dev, QoI units

  ObservationOperator make_operator(int state_dim) const;
  Eigen::VectorXd noise_cov(int m) const;
};

struct NetworkHyper {
  int hidden_width = 32;
  int pointwise_hidden_layers = 6;  // per-gridpoint error model
  int aggregate_hidden_layers = 4;  // norm and physics models
  TrainHyper train;
};

struct ExperimentSpec {
  TwinParams twin;
  PackageOptions options;
  ObservationSpec observation;
  ForestParams forest;
  NetworkHyper network;
  Learner learner = Learner::RandomForest;
  double train_fraction = 0.8;
  int top_k = 5;
  std::uint64_t seed = 1;
  int threads = 0;  // 0 = hardware concurrency

  void validate() const;
};

// Shared truth trajectory and observations over two consecutive forecast
// windows, plus the per-config window runs. Window 1 (checkpoints
// 0..window_hours) trains; window 2 (window_hours..2*window_hours) tests.
// Both windows restart the model from the truth at their first checkpoint,
// the analysis-as-initial-condition convention of a twin experiment.
struct EnsembleData {
  std::vector<TruthState> truth;      // 2*window_hours + 1 hourly checkpoints
  std::vector<Observation> obs;       // aligned with truth
  std::vector<WindowRun> train_runs;  // one per config, window_id = flat index
  std::vector<WindowRun> test_runs;
  std::vector<ModelState> test_finals;  // model state at the last test checkpoint
};

EnsembleData generate_ensemble(const ExperimentSpec& spec);

double rmse(const Eigen::VectorXd& predicted, const Eigen::VectorXd& actual);

// Average-rank Spearman correlation.
double spearman_rank_correlation(const Eigen::VectorXd& a, const Eigen::VectorXd& b);

// phi^error approximation: (config, window history, current forecast) ->
// current discrepancy, per observed point.
struct ErrorPredictor {
  Learner kind = Learner::RandomForest;
  Forest forest;
  Network network;
  std::vector<std::string> feature_schema;
  Grain grain = Grain::PerGridpoint;

  double predict_scalar(const Eigen::VectorXd& features) const;
};

ErrorPredictor train_error_model(const std::vector<WindowRun>& train_runs,
                                 const ExperimentSpec& spec);

// One predicted discrepancy per observed point. Only past checkpoints and
// the current forecast feed the features; the target checkpoint's
// discrepancy is never read.
Discrepancy predict_next_window_error(const ErrorPredictor& predictor, const WindowRun& test_run);

struct PointwiseConfigResult {
  PhysicsConfig config;
  double rmse_predicted = 0.0;
  double rmse_zero = 0.0;  // zero-prediction baseline
  double mean_abs_raw = 0.0;
  double mean_abs_corrected = 0.0;
};

struct PointwiseSummary {
  double min = 0.0, avg = 0.0, max = 0.0;
};

struct PointwiseReport {
  Learner learner = Learner::RandomForest;
  std::vector<PointwiseConfigResult> configs;
  PointwiseSummary raw_abs, corrected_abs, rmse_predicted, rmse_zero;
  int plot_config = 0;  // flat index of the worst raw config, used for field plots
  std::vector<Eigen::VectorXd> raw_delta;        // per config, final test checkpoint
  std::vector<Eigen::VectorXd> predicted_delta;
  std::vector<Eigen::VectorXd> corrected_delta;
};

// Test hook: replaces the learned model-space correction with the exact one
// computed from the known truth (delta = truth - forecast).
struct PerfectCorrectionOracle {
  bool enabled = false;
};

PointwiseReport run_problem_one_pointwise(const ExperimentSpec& spec);
PointwiseReport run_problem_one_pointwise(const ExperimentSpec& spec, const EnsembleData& data,
                                          const PerfectCorrectionOracle& oracle = {});

struct NormConfigResult {
  PhysicsConfig config;
  double true_norm = 0.0;
  double rf_predicted = 0.0;
  double nn_predicted = 0.0;
};

struct NormReport {
  std::vector<NormConfigResult> configs;
  double rf_rmse = 0.0, nn_rmse = 0.0;
  double rf_spearman = 0.0, nn_spearman = 0.0;
  bool rf_best_in_top_k = false, nn_best_in_top_k = false;
  int top_k = 5;
  int true_best_config = 0;               // flat index of the true rank-1 config
  std::vector<int> true_ranking;          // config flat indices, ascending norm
  std::vector<int> rf_ranking, nn_ranking;
};

NormReport run_problem_one_norm(const ExperimentSpec& spec);
NormReport run_problem_one_norm(const ExperimentSpec& spec, const EnsembleData& data);

// phi^physics approximation: discrepancy statistics -> package configuration.
struct PhysicsModel {
  Learner kind = Learner::RandomForest;
  std::array<Forest, 4> forests;
  Network network;

  PhysicsConfig predict(const Eigen::VectorXd& features) const;
};

PhysicsModel train_physics_model(const PhysicsDataset& train, const ExperimentSpec& spec);

struct AttributionHistogram {
  std::array<int, 4> change_counts{0, 0, 0, 0};  // package order: closure, forcing,
                                                 // dissipation, integrator
  int test_size = 0;
};

// The five discrepancy statistics rescaled for a halved field: mean, min,
// max and norm halve; the variance quarters.
Eigen::VectorXd halved_physics_features(const Eigen::VectorXd& features);

// Predict a config from each test row, predict again from the halved-error
// features, and count per package how often the option changed.
AttributionHistogram attribute_sensitivity(const PhysicsModel& model, const PhysicsDataset& test);

// Re-simulate the training window under each predicted config and compare
// resulting discrepancy norms with the true ones.
double validate_physics_model(const PhysicsModel& model, const PhysicsDataset& test,
                              const ExperimentSpec& spec, const EnsembleData& data);

// Same re-simulation metric under uniformly random config assignments,
// averaged over n_assignments draws.
double random_config_validation_baseline(const PhysicsDataset& test, const ExperimentSpec& spec,
                                         const EnsembleData& data, int n_assignments = 20);

struct AttributionLearnerResult {
  Learner learner = Learner::RandomForest;
  AttributionHistogram histogram;           // theta1 predicted from the model
  AttributionHistogram histogram_vs_truth;  // theta1 taken from the true labels
  double validation_rmse = 0.0;
  std::vector<PhysicsConfig> predicted;     // theta1 per test row
};

struct AttributionReport {
  AttributionLearnerResult rf, nn;
  double random_baseline_rmse = 0.0;
  int train_size = 0;
  int test_size = 0;
};

AttributionReport run_problem_two(const ExperimentSpec& spec);
AttributionReport run_problem_two(const ExperimentSpec& spec, const EnsembleData& data);

}  // namespace twinlearn
