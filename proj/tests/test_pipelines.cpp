#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "oracles.hpp"
#include "twinlearn/common.hpp"
#include "twinlearn/pipelines.hpp"
#include "twinlearn/rng.hpp"

using namespace twinlearn;

namespace {

// Small twin for fast tests; the acceptance suite runs the full size.
ExperimentSpec small_spec() {
  ExperimentSpec spec;
  spec.twin.slow_dim = 8;
  spec.twin.fast_per_slow = 2;
  spec.twin.spinup_steps = 200;
  spec.twin.window_hours = 3;
  spec.network.train.epochs = 60;
  spec.threads = 1;
  spec.seed = 1;
  return spec;
}

ExperimentSpec perfect_twin_spec() {
  ExperimentSpec spec = small_spec();
  spec.twin.coupling = 0.0;
  spec.observation.noise_sigma = 0.0;
  return spec;
}

}  // namespace

TEST_CASE("rmse definition and symmetry") {
  Eigen::VectorXd a(2), b(2);
  a << 1.0, 2.0;
  b << 1.0, 4.0;
  CHECK(rmse(a, a) == 0.0);
  CHECK(rmse(a, b) == doctest::Approx(std::sqrt(2.0)).epsilon(1e-14));

  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    Eigen::VectorXd x(6), y(6);
    for (int i = 0; i < 6; ++i) {
      x[i] = rng.uniform(-4.0, 4.0);
      y[i] = rng.uniform(-4.0, 4.0);
    }
    CHECK(rmse(x, y) == rmse(y, x));
  }
  Eigen::VectorXd empty;
  CHECK_THROWS_AS(rmse(empty, empty), std::invalid_argument);
}

TEST_CASE("spearman rank correlation") {
  Eigen::VectorXd a(5), b(5);
  a << 1, 2, 3, 4, 5;
  b << 2, 4, 6, 8, 10;
  CHECK(spearman_rank_correlation(a, b) == doctest::Approx(1.0));
  b << 10, 8, 6, 4, 2;
  CHECK(spearman_rank_correlation(a, b) == doctest::Approx(-1.0));
  // Against the closed form on a known permutation: ranks (1,3,2,5,4).
  b << 0.1, 0.3, 0.2, 0.5, 0.4;
  double d_sq = 0.0;
  const double ranks_b[5] = {1, 3, 2, 5, 4};
  for (int i = 0; i < 5; ++i) d_sq += (ranks_b[i] - (i + 1)) * (ranks_b[i] - (i + 1));
  const double expected = 1.0 - 6.0 * d_sq / (5.0 * 24.0);
  CHECK(spearman_rank_correlation(a, b) == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("ensemble generation is deterministic with aligned windows") {
  const ExperimentSpec spec = small_spec();
  const EnsembleData a = generate_ensemble(spec);
  const EnsembleData b = generate_ensemble(spec);
  REQUIRE(a.train_runs.size() == 72);
  REQUIRE(a.test_runs.size() == 72);
  REQUIRE(a.truth.size() == static_cast<size_t>(2 * spec.twin.window_hours + 1));
  for (int i = 0; i < 72; ++i) {
    CHECK(a.train_runs[i].window_id == i);
    CHECK(a.train_runs[i].checkpoints() == spec.twin.window_hours + 1);
    for (int c = 0; c <= spec.twin.window_hours; ++c) {
      CHECK(a.train_runs[i].forecasts[c] == b.train_runs[i].forecasts[c]);
      CHECK(a.test_runs[i].discrepancies[c].values == b.test_runs[i].discrepancies[c].values);
    }
  }
  // Test window starts where the training window ends, from the truth.
  CHECK(a.test_runs[0].discrepancies[0].time ==
        doctest::Approx(a.train_runs[0].discrepancies.back().time));

  // Threaded and serial generation agree bitwise.
  ExperimentSpec threaded = spec;
  threaded.threads = 2;
  const EnsembleData c = generate_ensemble(threaded);
  for (int i = 0; i < 72; ++i) {
    CHECK(c.test_runs[i].discrepancies.back().values ==
          a.test_runs[i].discrepancies.back().values);
  }
}

TEST_CASE("a perfect-twin-only ensemble trains a predictor that outputs ~zero") {
  // Train exclusively on runs of the config that reproduces the truth
  // exactly (no coupling, no noise, matching schemes): every target is zero.
  const ExperimentSpec spec = perfect_twin_spec();
  const EnsembleData data = generate_ensemble(spec);
  const int perfect = PhysicsConfig{0, 0, 0, 0}.flat_index();
  CHECK(data.train_runs[perfect].discrepancies.back().values.cwiseAbs().maxCoeff() == 0.0);
  const std::vector<WindowRun> perfect_only = {data.train_runs[perfect],
                                               data.test_runs[perfect]};
  const ErrorPredictor predictor = train_error_model(perfect_only, spec);
  for (int i = 0; i < 72; i += 7) {
    const Discrepancy predicted = predict_next_window_error(predictor, data.test_runs[i]);
    CHECK(predicted.values.cwiseAbs().maxCoeff() < 1e-3);
  }
}

TEST_CASE("error model training beats the target-variance baseline for both learners") {
  const ExperimentSpec base = small_spec();
  const EnsembleData data = generate_ensemble(base);
  const ErrorDataset ds = build_error_records(data.train_runs);
  const double target_std =
      std::sqrt((ds.targets.array() - ds.targets.mean()).square().sum() / ds.targets.size());

  for (Learner learner : {Learner::RandomForest, Learner::NeuralNet}) {
    ExperimentSpec spec = base;
    spec.learner = learner;
    const ErrorPredictor predictor = train_error_model(data.train_runs, spec);
    double sq_sum = 0.0;
    for (Eigen::Index r = 0; r < ds.rows(); ++r) {
      const double pred = predictor.predict_scalar(ds.features.row(r));
      sq_sum += (pred - ds.targets(r, 0)) * (pred - ds.targets(r, 0));
    }
    const double training_rmse = std::sqrt(sq_sum / ds.rows());
    CHECK_MESSAGE(training_rmse < target_std, "learner ", static_cast<int>(learner));
  }
}

TEST_CASE("error model training is deterministic") {
  const ExperimentSpec spec = small_spec();
  const EnsembleData data = generate_ensemble(spec);
  const ErrorPredictor a = train_error_model(data.train_runs, spec);
  const ErrorPredictor b = train_error_model(data.train_runs, spec);
  const Eigen::VectorXd probe = build_error_records(data.train_runs).features.row(17);
  CHECK(a.predict_scalar(probe) == b.predict_scalar(probe));
}

TEST_CASE("prediction uses only past checkpoints of the test run") {
  const ExperimentSpec spec = small_spec();
  const EnsembleData data = generate_ensemble(spec);
  const ErrorPredictor predictor = train_error_model(data.train_runs, spec);

  WindowRun mutated = data.test_runs[3];
  const Discrepancy before = predict_next_window_error(predictor, mutated);
  mutated.discrepancies.back().values.setConstant(1e6);  // the target checkpoint
  const Discrepancy after = predict_next_window_error(predictor, mutated);
  CHECK(before.values == after.values);

  // Schema conformance is enforced.
  WindowRun truncated = data.test_runs[3];
  truncated.forecasts.pop_back();
  truncated.discrepancies.pop_back();
  CHECK_THROWS_AS(predict_next_window_error(predictor, truncated), std::invalid_argument);
}

TEST_CASE("predictions are finite for all 72 test configs") {
  const ExperimentSpec spec = small_spec();
  const EnsembleData data = generate_ensemble(spec);
  const ErrorPredictor predictor = train_error_model(data.train_runs, spec);
  for (const auto& run : data.test_runs) {
    const Discrepancy predicted = predict_next_window_error(predictor, run);
    CHECK(predicted.values.allFinite());
  }
}

TEST_CASE("pointwise report structure and summaries") {
  const ExperimentSpec spec = small_spec();
  const EnsembleData data = generate_ensemble(spec);
  const PointwiseReport report = run_problem_one_pointwise(spec, data);
  REQUIRE(report.configs.size() == 72);
  double lo = 1e18, hi = -1e18, sum = 0.0;
  for (const auto& row : report.configs) {
    lo = std::min(lo, row.mean_abs_raw);
    hi = std::max(hi, row.mean_abs_raw);
    sum += row.mean_abs_raw;
  }
  CHECK(report.raw_abs.min == lo);
  CHECK(report.raw_abs.max == hi);
  CHECK(report.raw_abs.avg == doctest::Approx(sum / 72).epsilon(1e-12));
  CHECK(report.plot_config ==
        static_cast<int>(std::max_element(report.configs.begin(), report.configs.end(),
                                          [](const auto& a, const auto& b) {
                                            return a.mean_abs_raw < b.mean_abs_raw;
                                          }) -
                         report.configs.begin()));
}

TEST_CASE("the oracle correction hook zeroes the discrepancy under zero noise") {
  ExperimentSpec spec = small_spec();
  spec.observation.noise_sigma = 0.0;
  const EnsembleData data = generate_ensemble(spec);
  PerfectCorrectionOracle oracle;
  oracle.enabled = true;
  const PointwiseReport report = run_problem_one_pointwise(spec, data, oracle);
  for (const auto& row : report.configs) {
    CHECK(row.mean_abs_corrected < 1e-12);
  }
  CHECK(report.corrected_abs.max < 1e-12);
}

TEST_CASE("correcting with an exactly zero prediction reproduces the raw numbers") {
  // A predictor trained on all-zero targets collapses to single-leaf trees
  // predicting 0.0, and a zero prediction must leave the forecast bitwise
  // untouched through the whole correction chain.
  ExperimentSpec spec = small_spec();
  spec.observation.kind = ObsKind::SubsetLinear;  // full-rank jacobian everywhere
  ExperimentSpec twin = perfect_twin_spec();
  twin.observation.kind = ObsKind::SubsetLinear;
  const EnsembleData zero_data = generate_ensemble(twin);
  const EnsembleData data = generate_ensemble(spec);
  const int perfect = PhysicsConfig{0, 0, 0, 0}.flat_index();
  const std::vector<WindowRun> zero_runs = {zero_data.train_runs[perfect],
                                            zero_data.test_runs[perfect]};
  const ErrorPredictor zero_predictor = train_error_model(zero_runs, spec);

  const ObservationOperator op = spec.observation.make_operator(spec.twin.slow_dim);
  for (int i = 0; i < 72; i += 9) {
    const Discrepancy predicted = predict_next_window_error(zero_predictor, data.test_runs[i]);
    CHECK(predicted.values.cwiseAbs().maxCoeff() == 0.0);

    const ModelState& forecast = data.test_finals[i];
    ModelSpaceError delta = project_to_model_space(predicted, op.jacobian(forecast.values));
    delta.values = -delta.values;
    const ModelState corrected = correct_forecast(forecast, delta);
    CHECK(corrected.values == forecast.values);
    CHECK(observe_model(corrected, op) == data.test_runs[i].forecasts.back());
  }
}

TEST_CASE("norm experiment identifies the perfect config as true rank one") {
  const ExperimentSpec spec = perfect_twin_spec();
  const EnsembleData data = generate_ensemble(spec);
  const NormReport report = run_problem_one_norm(spec, data);
  // none/constant/standard/rk4 reproduces the truth exactly under zero
  // coupling and zero noise.
  CHECK(report.true_best_config == PhysicsConfig{0, 0, 0, 0}.flat_index());
  CHECK(report.configs[report.true_best_config].true_norm == 0.0);
  CHECK(std::isfinite(report.rf_rmse));
  CHECK(std::isfinite(report.nn_rmse));
  REQUIRE(report.true_ranking.size() == 72);
  REQUIRE(report.rf_ranking.size() == 72);
  REQUIRE(report.nn_ranking.size() == 72);
}

TEST_CASE("physics model basics") {
  const ExperimentSpec spec = small_spec();
  const EnsembleData data = generate_ensemble(spec);
  const PhysicsDataset ds = build_physics_records(data.train_runs);

  SUBCASE("single-config dataset always predicts that config") {
    PhysicsDataset single;
    single.feature_names = ds.feature_names;
    single.features = ds.features.topRows(6);
    const PhysicsConfig the_config{2, 1, 1, 2};
    for (int r = 0; r < 6; ++r) single.targets.push_back(the_config);
    for (Learner learner : {Learner::RandomForest, Learner::NeuralNet}) {
      ExperimentSpec s = spec;
      s.learner = learner;
      const PhysicsModel model = train_physics_model(single, s);
      for (int r = 0; r < 6; ++r) {
        CHECK(model.predict(single.features.row(r)) == the_config);
      }
      Eigen::VectorXd far(5);
      far << 9.0, -9.0, 9.0, 81.0, 50.0;
      CHECK(model.predict(far) == the_config);
    }
  }

  SUBCASE("training accuracy meets the majority-class baseline per package") {
    const PhysicsModel model = train_physics_model(ds, spec);
    for (int pkg = 0; pkg < 4; ++pkg) {
      std::vector<int> counts(PhysicsConfig::kOptionCounts[pkg], 0);
      int correct = 0;
      for (Eigen::Index r = 0; r < ds.rows(); ++r) {
        counts[ds.targets[r].option(pkg)]++;
        if (model.predict(ds.features.row(r)).option(pkg) == ds.targets[r].option(pkg)) {
          ++correct;
        }
      }
      const int majority = *std::max_element(counts.begin(), counts.end());
      CHECK_MESSAGE(correct >= majority, "package ", pkg);
    }
  }

  SUBCASE("predictions are always valid configs") {
    const PhysicsModel model = train_physics_model(ds, spec);
    Rng rng(9);
    for (int trial = 0; trial < 40; ++trial) {
      Eigen::VectorXd f(5);
      for (int i = 0; i < 5; ++i) f[i] = rng.uniform(-20.0, 20.0);
      CHECK(model.predict(f).valid());
    }
  }
}

TEST_CASE("halved features equal rebuilding from a halved field") {
  const ExperimentSpec spec = small_spec();
  const EnsembleData data = generate_ensemble(spec);
  for (int i = 0; i < 72; i += 5) {
    const Eigen::VectorXd& delta = data.train_runs[i].discrepancies.back().values;
    const Eigen::VectorXd scaled = halved_physics_features(physics_features(delta));
    const Eigen::VectorXd direct = physics_features(0.5 * delta);
    for (int c = 0; c < 5; ++c) {
      CHECK(scaled[c] == doctest::Approx(direct[c]).epsilon(1e-12));
    }
  }
}

TEST_CASE("attribution histogram bounds and the constant-model case") {
  const ExperimentSpec spec = small_spec();
  const EnsembleData data = generate_ensemble(spec);
  const PhysicsDataset ds = build_physics_records(data.train_runs);

  // Constant predictor: trained on one config, so halving changes nothing.
  PhysicsDataset single;
  single.feature_names = ds.feature_names;
  single.features = ds.features.topRows(10);
  for (int r = 0; r < 10; ++r) single.targets.push_back(PhysicsConfig{1, 2, 0, 1});
  const PhysicsModel constant_model = train_physics_model(single, spec);
  const AttributionHistogram quiet = attribute_sensitivity(constant_model, ds);
  for (int pkg = 0; pkg < 4; ++pkg) CHECK(quiet.change_counts[pkg] == 0);

  const PhysicsModel model = train_physics_model(ds, spec);
  const AttributionHistogram hist = attribute_sensitivity(model, ds);
  CHECK(hist.test_size == 72);
  for (int pkg = 0; pkg < 4; ++pkg) {
    CHECK(hist.change_counts[pkg] >= 0);
    CHECK(hist.change_counts[pkg] <= hist.test_size);
  }

  PhysicsDataset empty;
  empty.features.resize(0, 5);
  CHECK_THROWS_AS(attribute_sensitivity(model, empty), std::invalid_argument);
}

TEST_CASE("an exact-recovery physics model validates with zero RMSE") {
  const ExperimentSpec base = small_spec();
  const EnsembleData data = generate_ensemble(base);
  const PhysicsDataset ds = build_physics_records(data.train_runs);

  // Memorizing forests (full depth, single-sample leaves, no bootstrap,
  // every feature) recover the training configs exactly.
  ExperimentSpec spec = base;
  spec.forest.max_depth = 0;
  spec.forest.min_samples_leaf = 1;
  spec.forest.features_per_split = 5;
  spec.forest.bootstrap = false;
  const PhysicsModel model = train_physics_model(ds, spec);
  for (Eigen::Index r = 0; r < ds.rows(); ++r) {
    REQUIRE(model.predict(ds.features.row(r)) == ds.targets[r]);
  }
  CHECK(validate_physics_model(model, ds, spec, data) == 0.0);
}

TEST_CASE("problem two report is structured and reproducible") {
  const ExperimentSpec spec = small_spec();
  const EnsembleData data = generate_ensemble(spec);
  const AttributionReport a = run_problem_two(spec, data);
  const AttributionReport b = run_problem_two(spec, data);
  CHECK(a.train_size == 58);  // ceil(0.8 * 72)
  CHECK(a.test_size == 14);
  CHECK(a.rf.histogram.test_size == 14);
  CHECK(a.rf.predicted.size() == 14);
  CHECK(a.rf.histogram.change_counts == b.rf.histogram.change_counts);
  CHECK(a.nn.histogram.change_counts == b.nn.histogram.change_counts);
  CHECK(a.random_baseline_rmse == b.random_baseline_rmse);
  CHECK(std::isfinite(a.rf.validation_rmse));
  CHECK(std::isfinite(a.nn.validation_rmse));
}
