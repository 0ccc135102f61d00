#include "twinlearn/pipelines.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <numeric>
#include <stdexcept>
#include <thread>

#include "twinlearn/common.hpp"
#include "twinlearn/rng.hpp"

namespace twinlearn {

namespace {

// Deterministic parallel map over [0, n): results land in index order, the
// lowest-index exception wins.
template <class Fn>
void parallel_for(int n, int threads, Fn&& fn) {
  if (threads <= 0) threads = static_cast<int>(std::thread::hardware_concurrency());
  threads = std::max(1, std::min(threads, n));
  if (threads == 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(n);
  std::vector<std::thread> pool;
  pool.reserve(threads);
  for (int t = 0; t < threads; ++t) {
    pool.emplace_back([&, t] {
      for (int i = t; i < n; i += threads) {
        try {
          fn(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  for (int i = 0; i < n; ++i) {
    if (errors[i]) std::rethrow_exception(errors[i]);
  }
}

NetworkArch make_arch(int inputs, int hidden_layers, int hidden_width, int outputs) {
  NetworkArch arch;
  arch.layer_sizes.push_back(inputs);
  for (int l = 0; l < hidden_layers; ++l) arch.layer_sizes.push_back(hidden_width);
  arch.layer_sizes.push_back(outputs);
  return arch;
}

Network fit_network(const ErrorDataset& data, const ExperimentSpec& spec, int hidden_layers,
                    const std::string& seed_tag) {
  NetworkArch arch = make_arch(static_cast<int>(data.features.cols()), hidden_layers,
                               spec.network.hidden_width, static_cast<int>(data.targets.cols()));
  Network net = init_network(arch, seed_for(spec.seed, seed_tag + "-init"),
                             spec.network.train.init_scale);
  TrainHyper hyper = spec.network.train;
  hyper.seed = seed_for(spec.seed, seed_tag + "-train");
  return train(net, data.features.transpose(), data.targets.transpose(), hyper).network;
}

}  // namespace

ObservationOperator ObservationSpec::make_operator(int state_dim) const {
  ObservationOperator op;
  op.kind = kind;
  op.state_dim = state_dim;
  if (indices.empty()) {
    op.indices.resize(state_dim);
    std::iota(op.indices.begin(), op.indices.end(), 0);
  } else {
    op.indices = indices;
  }
  op.validate();
  return op;
}

Eigen::VectorXd ObservationSpec::noise_cov(int m) const {
  if (noise_sigma < 0.0) throw std::invalid_argument("observation: noise_sigma must be >= 0");
  return Eigen::VectorXd::Constant(m, noise_sigma * noise_sigma);
}

void ExperimentSpec::validate() const {
  if (twin.slow_dim < 4) throw std::invalid_argument("spec: slow_dim must be >= 4");
  if (twin.fast_per_slow < 1) throw std::invalid_argument("spec: fast_per_slow must be >= 1");
  if (twin.window_hours < 1) throw std::invalid_argument("spec: window_hours must be >= 1");
  if (!(twin.dt > 0.0) || !(twin.hour > 0.0)) {
    throw std::invalid_argument("spec: dt and hour must be positive");
  }
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw std::invalid_argument("spec: train_fraction must be in (0, 1)");
  }
  if (top_k < 1) throw std::invalid_argument("spec: top_k must be >= 1");
  observation.make_operator(twin.slow_dim);
}

EnsembleData generate_ensemble(const ExperimentSpec& spec) {
  spec.validate();
  const TwinParams& twin = spec.twin;
  const int wh = twin.window_hours;
  const int n_checkpoints = 2 * wh + 1;
  const ObservationOperator op = spec.observation.make_operator(twin.slow_dim);
  const Eigen::VectorXd cov = spec.observation.noise_cov(op.observed_count());

  EnsembleData data;
  data.truth.reserve(n_checkpoints);
  data.truth.push_back(spun_up_truth(twin, seed_for(spec.seed, "truth-ic")));
  for (int i = 1; i < n_checkpoints; ++i) {
    data.truth.push_back(advance_truth(data.truth.back(), twin, twin.hour));
  }

  const std::uint64_t obs_seed = seed_for(spec.seed, "obs-noise");
  data.obs.reserve(n_checkpoints);
  for (int i = 0; i < n_checkpoints; ++i) {
    data.obs.push_back(observe_truth(data.truth[i], op, cov,
                                     combine_seed(obs_seed, static_cast<std::uint64_t>(i))));
  }

  const auto configs = PhysicsConfig::all();
  const WindowSpec window{wh + 1, twin.hour};
  data.train_runs.resize(configs.size());
  data.test_runs.resize(configs.size());
  data.test_finals.resize(configs.size());

  auto run_one = [&](const PhysicsConfig& config, int first_checkpoint, WindowRun& out,
                     ModelState* final_state) {
    ModelState initial{data.truth[first_checkpoint].slow, data.truth[first_checkpoint].time};
    const Trajectory traj = run_window(initial, config, twin, spec.options, window);
    out.config = config;
    out.window_id = config.flat_index();
    out.forecasts.clear();
    out.discrepancies.clear();
    for (int c = 0; c <= wh; ++c) {
      Eigen::VectorXd o = observe_model(traj.states[c], op);
      out.discrepancies.push_back(discrepancy(o, data.obs[first_checkpoint + c]));
      out.forecasts.push_back(std::move(o));
    }
    if (final_state) *final_state = traj.states.back();
  };

  parallel_for(static_cast<int>(configs.size()), spec.threads, [&](int i) {
    run_one(configs[i], 0, data.train_runs[i], nullptr);
    run_one(configs[i], wh, data.test_runs[i], &data.test_finals[i]);
  });
  return data;
}

double rmse(const Eigen::VectorXd& predicted, const Eigen::VectorXd& actual) {
  if (predicted.size() != actual.size() || predicted.size() == 0) {
    throw std::invalid_argument("rmse: vectors must have equal nonzero length");
  }
  return std::sqrt((predicted - actual).squaredNorm() / static_cast<double>(predicted.size()));
}

namespace {

Eigen::VectorXd average_ranks(const Eigen::VectorXd& v) {
  const Eigen::Index n = v.size();
  std::vector<int> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) { return v[a] < v[b]; });
  Eigen::VectorXd ranks(n);
  Eigen::Index i = 0;
  while (i < n) {
    Eigen::Index j = i;
    while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
    const double rank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (Eigen::Index k = i; k <= j; ++k) ranks[order[k]] = rank;
    i = j + 1;
  }
  return ranks;
}

}  // namespace

double spearman_rank_correlation(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  if (a.size() != b.size() || a.size() < 2) {
    throw std::invalid_argument("spearman: need two equal-length vectors with >= 2 entries");
  }
  const Eigen::VectorXd ra = average_ranks(a);
  const Eigen::VectorXd rb = average_ranks(b);
  const Eigen::VectorXd da = ra.array() - ra.mean();
  const Eigen::VectorXd db = rb.array() - rb.mean();
  const double denom = std::sqrt(da.squaredNorm() * db.squaredNorm());
  if (denom == 0.0) return 0.0;
  return da.dot(db) / denom;
}

double ErrorPredictor::predict_scalar(const Eigen::VectorXd& features) const {
  if (kind == Learner::RandomForest) return forest.predict(features)[0];
  return network.forward(features)[0];
}

ErrorPredictor train_error_model(const std::vector<WindowRun>& train_runs,
                                 const ExperimentSpec& spec) {
  const ErrorDataset data = build_error_records(train_runs);
  ErrorPredictor predictor;
  predictor.kind = spec.learner;
  predictor.feature_schema = data.feature_names;
  predictor.grain = data.grain;
  if (spec.learner == Learner::RandomForest) {
    ForestParams params = spec.forest;
    params.seed = seed_for(spec.seed, "error-forest");
    predictor.forest = fit_forest(data, params);
  } else {
    predictor.network = fit_network(data, spec, spec.network.pointwise_hidden_layers, "error-net");
  }
  return predictor;
}

Discrepancy predict_next_window_error(const ErrorPredictor& predictor,
                                      const WindowRun& test_run) {
  if (predictor.feature_schema != error_feature_names(test_run.checkpoints())) {
    throw std::invalid_argument(
        "predict_next_window_error: test run does not conform to the predictor schema");
  }
  const int m = test_run.observed_count();
  Discrepancy predicted;
  predicted.values.resize(m);
  predicted.time = test_run.discrepancies.back().time;
  for (int point = 0; point < m; ++point) {
    predicted.values[point] = predictor.predict_scalar(error_features_for_point(test_run, point));
  }
  return predicted;
}

namespace {

PointwiseSummary summarize(const std::vector<double>& values) {
  PointwiseSummary s;
  s.min = *std::min_element(values.begin(), values.end());
  s.max = *std::max_element(values.begin(), values.end());
  s.avg = std::accumulate(values.begin(), values.end(), 0.0) / values.size();
  return s;
}

// Model-space correction from a predicted observation-space discrepancy.
// Rows of the linearized operator that vanish (unobserved directions, or the
// flat side of the diagnostic) carry no information and are dropped before
// the minimum-norm reconstruction; the result is negated because the
// discrepancy is model-minus-observation while the correction must point
// from the forecast toward the truth.
ModelSpaceError correction_from_prediction(const Discrepancy& predicted,
                                           const ModelState& forecast,
                                           const ObservationOperator& op) {
  const Eigen::MatrixXd H = op.jacobian(forecast.values);
  std::vector<int> active;
  for (Eigen::Index r = 0; r < H.rows(); ++r) {
    if (H.row(r).any()) active.push_back(static_cast<int>(r));
  }
  ModelSpaceError delta;
  delta.time = predicted.time;
  if (active.empty()) {
    delta.values = Eigen::VectorXd::Zero(forecast.values.size());
    return delta;
  }
  Eigen::MatrixXd H_active(static_cast<Eigen::Index>(active.size()), H.cols());
  Discrepancy active_delta;
  active_delta.time = predicted.time;
  active_delta.values.resize(static_cast<Eigen::Index>(active.size()));
  for (size_t i = 0; i < active.size(); ++i) {
    H_active.row(static_cast<Eigen::Index>(i)) = H.row(active[i]);
    active_delta.values[static_cast<Eigen::Index>(i)] = predicted.values[active[i]];
  }
  delta = project_to_model_space(active_delta, H_active);
  delta.values = -delta.values;
  return delta;
}

}  // namespace

PointwiseReport run_problem_one_pointwise(const ExperimentSpec& spec) {
  return run_problem_one_pointwise(spec, generate_ensemble(spec));
}

PointwiseReport run_problem_one_pointwise(const ExperimentSpec& spec, const EnsembleData& data,
                                          const PerfectCorrectionOracle& oracle) {
  spec.validate();
  const ObservationOperator op = spec.observation.make_operator(spec.twin.slow_dim);
  ErrorPredictor predictor;
  if (!oracle.enabled) predictor = train_error_model(data.train_runs, spec);

  PointwiseReport report;
  report.learner = spec.learner;
  const int n_configs = static_cast<int>(data.test_runs.size());
  report.configs.resize(n_configs);
  report.raw_delta.resize(n_configs);
  report.predicted_delta.resize(n_configs);
  report.corrected_delta.resize(n_configs);

  const TruthState& final_truth = data.truth.back();
  const Observation& final_obs = data.obs.back();

  parallel_for(n_configs, spec.threads, [&](int i) {
    const WindowRun& run = data.test_runs[i];
    const ModelState& forecast = data.test_finals[i];
    const Eigen::VectorXd& actual = run.discrepancies.back().values;

    ModelSpaceError correction;
    Discrepancy predicted;
    predicted.time = run.discrepancies.back().time;
    if (oracle.enabled) {
      correction.values = final_truth.slow - forecast.values;
      correction.time = predicted.time;
      predicted.values = run.forecasts.back() - op.apply(final_truth.slow);
    } else {
      predicted = predict_next_window_error(predictor, run);
      correction = correction_from_prediction(predicted, forecast, op);
    }

    const ModelState corrected = correct_forecast(forecast, correction);
    const Eigen::VectorXd corrected_delta =
        discrepancy(observe_model(corrected, op), final_obs).values;

    PointwiseConfigResult& row = report.configs[i];
    row.config = run.config;
    row.rmse_predicted = rmse(predicted.values, actual);
    row.rmse_zero = rmse(Eigen::VectorXd::Zero(actual.size()), actual);
    row.mean_abs_raw = actual.cwiseAbs().mean();
    row.mean_abs_corrected = corrected_delta.cwiseAbs().mean();

    report.raw_delta[i] = actual;
    report.predicted_delta[i] = predicted.values;
    report.corrected_delta[i] = corrected_delta;
  });

  std::vector<double> raw, corr, rp, rz;
  for (const auto& row : report.configs) {
    raw.push_back(row.mean_abs_raw);
    corr.push_back(row.mean_abs_corrected);
    rp.push_back(row.rmse_predicted);
    rz.push_back(row.rmse_zero);
  }
  report.raw_abs = summarize(raw);
  report.corrected_abs = summarize(corr);
  report.rmse_predicted = summarize(rp);
  report.rmse_zero = summarize(rz);
  report.plot_config = static_cast<int>(std::max_element(raw.begin(), raw.end()) - raw.begin());
  return report;
}

namespace {

std::vector<int> ranking_by(const Eigen::VectorXd& values) {
  std::vector<int> order(static_cast<size_t>(values.size()));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return values[a] < values[b]; });
  return order;
}

}  // namespace

NormReport run_problem_one_norm(const ExperimentSpec& spec) {
  return run_problem_one_norm(spec, generate_ensemble(spec));
}

NormReport run_problem_one_norm(const ExperimentSpec& spec, const EnsembleData& data) {
  spec.validate();
  const ErrorDataset train = build_norm_records(data.train_runs);
  const ErrorDataset test = build_norm_records(data.test_runs);

  ForestParams params = spec.forest;
  params.seed = seed_for(spec.seed, "norm-forest");
  const Forest forest = fit_forest(train, params);
  const Network net = fit_network(train, spec, spec.network.aggregate_hidden_layers, "norm-net");

  const int n = static_cast<int>(test.rows());
  NormReport report;
  report.top_k = spec.top_k;
  report.configs.resize(n);
  Eigen::VectorXd true_norms(n), rf_pred(n), nn_pred(n);
  for (int i = 0; i < n; ++i) {
    const Eigen::VectorXd row = test.features.row(i);
    true_norms[i] = test.targets(i, 0);
    rf_pred[i] = forest.predict(row)[0];
    nn_pred[i] = net.forward(row)[0];
    report.configs[i] = {data.test_runs[i].config, true_norms[i], rf_pred[i], nn_pred[i]};
  }

  report.rf_rmse = rmse(rf_pred, true_norms);
  report.nn_rmse = rmse(nn_pred, true_norms);
  report.rf_spearman = spearman_rank_correlation(rf_pred, true_norms);
  report.nn_spearman = spearman_rank_correlation(nn_pred, true_norms);
  report.true_ranking = ranking_by(true_norms);
  report.rf_ranking = ranking_by(rf_pred);
  report.nn_ranking = ranking_by(nn_pred);
  report.true_best_config = report.true_ranking.front();

  const int k = std::min<int>(spec.top_k, n);
  auto in_top_k = [&](const std::vector<int>& ranking) {
    return std::find(ranking.begin(), ranking.begin() + k, report.true_best_config) !=
           ranking.begin() + k;
  };
  report.rf_best_in_top_k = in_top_k(report.rf_ranking);
  report.nn_best_in_top_k = in_top_k(report.nn_ranking);
  return report;
}

PhysicsConfig PhysicsModel::predict(const Eigen::VectorXd& features) const {
  if (kind == Learner::RandomForest) return predict_physics_config(forests, features);
  const Eigen::VectorXd out = network.forward(features);
  PhysicsConfig config;
  config.closure = decode_option(out[0], PhysicsConfig::kOptionCounts[0]);
  config.forcing = decode_option(out[1], PhysicsConfig::kOptionCounts[1]);
  config.dissipation = decode_option(out[2], PhysicsConfig::kOptionCounts[2]);
  config.integrator = decode_option(out[3], PhysicsConfig::kOptionCounts[3]);
  return config;
}

PhysicsModel train_physics_model(const PhysicsDataset& train, const ExperimentSpec& spec) {
  if (train.rows() == 0) throw std::invalid_argument("train_physics_model: empty dataset");
  PhysicsModel model;
  model.kind = spec.learner;
  if (spec.learner == Learner::RandomForest) {
    ForestParams params = spec.forest;
    params.seed = seed_for(spec.seed, "physics-forest");
    model.forests = fit_physics_classifier(train, params);
  } else {
    // Ordinal head, one output per package, decoded like the forests.
    ErrorDataset as_error;
    as_error.features = train.features;
    as_error.targets.resize(train.rows(), 4);
    for (Eigen::Index r = 0; r < train.rows(); ++r) {
      for (int pkg = 0; pkg < 4; ++pkg) as_error.targets(r, pkg) = train.targets[r].option(pkg);
    }
    model.network = fit_network(as_error, spec, spec.network.aggregate_hidden_layers,
                                "physics-net");
  }
  return model;
}

Eigen::VectorXd halved_physics_features(const Eigen::VectorXd& features) {
  if (features.size() != 5) {
    throw std::invalid_argument("halved_physics_features: expected 5 statistics");
  }
  Eigen::VectorXd halved(5);
  halved[0] = features[0] / 2.0;  // mean
  halved[1] = features[1] / 2.0;  // min
  halved[2] = features[2] / 2.0;  // max
  halved[3] = features[3] / 4.0;  // variance
  halved[4] = features[4] / 2.0;  // two-norm
  return halved;
}

AttributionHistogram attribute_sensitivity(const PhysicsModel& model,
                                           const PhysicsDataset& test) {
  if (test.rows() == 0) throw std::invalid_argument("attribute_sensitivity: empty test set");
  AttributionHistogram hist;
  hist.test_size = static_cast<int>(test.rows());
  for (Eigen::Index r = 0; r < test.rows(); ++r) {
    const Eigen::VectorXd features = test.features.row(r);
    const PhysicsConfig theta1 = model.predict(features);
    const PhysicsConfig theta2 = model.predict(halved_physics_features(features));
    for (int pkg = 0; pkg < 4; ++pkg) {
      if (theta1.option(pkg) != theta2.option(pkg)) ++hist.change_counts[pkg];
    }
  }
  return hist;
}

namespace {

// Run the training window under a config and return the final discrepancy
// norm against the shared observations.
double resimulated_norm(const PhysicsConfig& config, const ExperimentSpec& spec,
                        const EnsembleData& data) {
  const TwinParams& twin = spec.twin;
  const ObservationOperator op = spec.observation.make_operator(twin.slow_dim);
  ModelState initial{data.truth[0].slow, data.truth[0].time};
  const WindowSpec window{twin.window_hours + 1, twin.hour};
  const Trajectory traj = run_window(initial, config, twin, spec.options, window);
  const Eigen::VectorXd o = observe_model(traj.states.back(), op);
  return discrepancy(o, data.obs[twin.window_hours]).values.norm();
}

}  // namespace

double validate_physics_model(const PhysicsModel& model, const PhysicsDataset& test,
                              const ExperimentSpec& spec, const EnsembleData& data) {
  if (test.rows() == 0) throw std::invalid_argument("validate_physics_model: empty test set");
  Eigen::VectorXd resim(test.rows()), truth(test.rows());
  for (Eigen::Index r = 0; r < test.rows(); ++r) {
    const PhysicsConfig predicted = model.predict(test.features.row(r));
    resim[r] = resimulated_norm(predicted, spec, data);
    truth[r] = test.features(r, 4);  // delta_norm column
  }
  return rmse(resim, truth);
}

double random_config_validation_baseline(const PhysicsDataset& test, const ExperimentSpec& spec,
                                         const EnsembleData& data, int n_assignments) {
  if (test.rows() == 0 || n_assignments < 1) {
    throw std::invalid_argument("random baseline: empty test set or no assignments");
  }
  Rng rng(seed_for(spec.seed, "random-config-baseline"));
  double total = 0.0;
  for (int a = 0; a < n_assignments; ++a) {
    Eigen::VectorXd resim(test.rows()), truth(test.rows());
    for (Eigen::Index r = 0; r < test.rows(); ++r) {
      const PhysicsConfig random_config =
          PhysicsConfig::from_flat(static_cast<int>(rng.next_below(PhysicsConfig::kTotal)));
      resim[r] = resimulated_norm(random_config, spec, data);
      truth[r] = test.features(r, 4);
    }
    total += rmse(resim, truth);
  }
  return total / n_assignments;
}

AttributionReport run_problem_two(const ExperimentSpec& spec) {
  return run_problem_two(spec, generate_ensemble(spec));
}

AttributionReport run_problem_two(const ExperimentSpec& spec, const EnsembleData& data) {
  spec.validate();
  const PhysicsDataset all = build_physics_records(data.train_runs);
  const SplitSpec split_spec{spec.train_fraction, seed_for(spec.seed, "physics-split")};
  const auto [train, test] = split(all, split_spec);

  AttributionReport report;
  report.train_size = static_cast<int>(train.rows());
  report.test_size = static_cast<int>(test.rows());

  auto evaluate = [&](Learner learner) {
    ExperimentSpec learner_spec = spec;
    learner_spec.learner = learner;
    const PhysicsModel model = train_physics_model(train, learner_spec);

    AttributionLearnerResult result;
    result.learner = learner;
    result.histogram = attribute_sensitivity(model, test);
    result.histogram_vs_truth.test_size = static_cast<int>(test.rows());
    for (Eigen::Index r = 0; r < test.rows(); ++r) {
      const Eigen::VectorXd features = test.features.row(r);
      result.predicted.push_back(model.predict(features));
      const PhysicsConfig theta2 = model.predict(halved_physics_features(features));
      for (int pkg = 0; pkg < 4; ++pkg) {
        if (test.targets[r].option(pkg) != theta2.option(pkg)) {
          ++result.histogram_vs_truth.change_counts[pkg];
        }
      }
    }
    result.validation_rmse = validate_physics_model(model, test, spec, data);
    return result;
  };

  report.rf = evaluate(Learner::RandomForest);
  report.nn = evaluate(Learner::NeuralNet);
  report.random_baseline_rmse = random_config_validation_baseline(test, spec, data);
  return report;
}

}  // namespace twinlearn
