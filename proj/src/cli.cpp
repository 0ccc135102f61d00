#include "twinlearn/cli.hpp"

#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "twinlearn/common.hpp"
#include "twinlearn/config.hpp"
#include "twinlearn/report_io.hpp"

namespace twinlearn {

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitNumerical = 3;
constexpr int kExitIo = 4;

nlohmann::json load_json_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("invalid JSON in " + path.string() + ": " + e.what());
  }
  return j;
}

struct OutputTracker {
  std::filesystem::path dir;
  std::vector<std::string> files;

  void write(const std::string& name, const std::string& content) {
    write_text_atomic(dir / name, content);
    files.push_back(name);
  }
};

void write_manifest(OutputTracker& out, const RunConfig& run, const ExperimentSpec& spec) {
  nlohmann::json manifest;
  manifest["command"] = run.command;
  manifest["seed"] = spec.seed;
  manifest["learner"] = learner_name(spec.learner);
  manifest["spec"] = spec_to_json(spec);
  manifest["outputs"] = out.files;
  write_text_atomic(out.dir / "manifest.json", manifest.dump(2) + "\n");
}

std::string dataset_metadata(const ExperimentSpec& spec, const ErrorDataset& ds,
                             const std::string& window) {
  nlohmann::json meta;
  meta["schema"] = {{"features", ds.feature_names}, {"targets", ds.target_names}};
  meta["grain"] = ds.grain == Grain::PerRun ? "per-run" : "per-gridpoint";
  meta["seed"] = spec.seed;
  meta["window"] = window;
  meta["variance_convention"] = "population";
  meta["generation"] = spec_to_json(spec);
  return meta.dump(2);
}

std::string physics_metadata(const ExperimentSpec& spec, const PhysicsDataset& ds) {
  nlohmann::json meta;
  meta["schema"] = {{"features", ds.feature_names},
                    {"targets", {"target_closure", "target_forcing", "target_dissipation",
                                 "target_integrator"}}};
  meta["grain"] = "per-run";
  meta["seed"] = spec.seed;
  meta["variance_convention"] = "population";
  meta["generation"] = spec_to_json(spec);
  return meta.dump(2);
}

void cmd_generate(const RunConfig& run, const ExperimentSpec& spec, OutputTracker& out) {
  const EnsembleData data = generate_ensemble(spec);

  const ErrorDataset error_train = build_error_records(data.train_runs);
  const ErrorDataset error_test = build_error_records(data.test_runs);
  const ErrorDataset norm_train = build_norm_records(data.train_runs);
  const ErrorDataset norm_test = build_norm_records(data.test_runs);
  const PhysicsDataset physics = build_physics_records(data.train_runs);

  auto write_error = [&](const ErrorDataset& ds, const std::string& name,
                         const std::string& window) {
    write_error_dataset(ds, out.dir / name, dataset_metadata(spec, ds, window));
    out.files.push_back(name);
    out.files.push_back(name + ".meta.json");
  };
  write_error(error_train, "error_train.csv", "train");
  write_error(error_test, "error_test.csv", "test");
  write_error(norm_train, "norm_train.csv", "train");
  write_error(norm_test, "norm_test.csv", "test");
  write_physics_dataset(physics, out.dir / "physics.csv", physics_metadata(spec, physics));
  out.files.push_back("physics.csv");
  out.files.push_back("physics.csv.meta.json");

  // Closure-coefficient fit for this parameter set, ready to paste into the
  // [packages] section of a config file.
  const ClosureCoefficients fit =
      fit_closure_coefficients(spec.twin, seed_for(spec.seed, "closure-fit"));
  nlohmann::json fit_json;
  fit_json["closure_linear_slope"] = fit.linear_slope;
  fit_json["closure_quadratic"] = fit.quadratic;
  fit_json["closure_cubic"] = fit.cubic;
  out.write("closure_fit.json", fit_json.dump(2) + "\n");

  (void)run;
}

void cmd_train(const RunConfig& run, const ExperimentSpec& spec, OutputTracker& out) {
  const EnsembleData data = generate_ensemble(spec);
  const ErrorPredictor predictor = train_error_model(data.train_runs, spec);

  nlohmann::json model;
  model["learner"] = learner_name(predictor.kind);
  model["schema"] = predictor.feature_schema;
  model["grain"] = predictor.grain == Grain::PerRun ? "per-run" : "per-gridpoint";
  if (predictor.kind == Learner::RandomForest) {
    model["model"] = nlohmann::json::parse(save_forest(predictor.forest));
  } else {
    model["model"] = nlohmann::json::parse(save_network(predictor.network));
  }
  out.write("error_model.json", model.dump(2) + "\n");
  (void)run;
}

ErrorPredictor load_error_model(const std::filesystem::path& path) {
  const nlohmann::json j = load_json_file(path);
  ErrorPredictor predictor;
  try {
    predictor.kind = learner_from_name(j.at("learner").get<std::string>());
    predictor.feature_schema = j.at("schema").get<std::vector<std::string>>();
    predictor.grain =
        j.at("grain").get<std::string>() == "per-run" ? Grain::PerRun : Grain::PerGridpoint;
    if (predictor.kind == Learner::RandomForest) {
      predictor.forest = load_forest(j.at("model").dump());
    } else {
      predictor.network = load_network(j.at("model").dump());
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed model file " + path.string() + ": " + e.what());
  }
  return predictor;
}

void cmd_predict(const RunConfig& run, const ExperimentSpec& spec, OutputTracker& out) {
  const ErrorPredictor predictor = load_error_model(out.dir / "error_model.json");
  const EnsembleData data = generate_ensemble(spec);

  std::string csv = "config_id,point,predicted,actual\n";
  for (const auto& test_run : data.test_runs) {
    const Discrepancy predicted = predict_next_window_error(predictor, test_run);
    const Eigen::VectorXd& actual = test_run.discrepancies.back().values;
    for (Eigen::Index p = 0; p < predicted.values.size(); ++p) {
      csv += std::to_string(test_run.window_id) + "," + std::to_string(p) + "," +
             format_double(predicted.values[p]) + "," + format_double(actual[p]) + "\n";
    }
  }
  out.write("predictions.csv", csv);
  (void)run;
}

void cmd_p1_pointwise(const ExperimentSpec& spec, OutputTracker& out) {
  const PointwiseReport report = run_problem_one_pointwise(spec);
  const nlohmann::json summary = pointwise_report_json(report);
  out.write("report_pointwise.csv", pointwise_report_csv(report));
  out.write("summary.json", summary.dump(2) + "\n");
  for (const auto& name : emit_plot_data(summary, out.dir)) out.files.push_back(name);
}

void cmd_p1_norm(const ExperimentSpec& spec, OutputTracker& out) {
  const NormReport report = run_problem_one_norm(spec);
  const nlohmann::json summary = norm_report_json(report);
  out.write("report_norm.csv", norm_report_csv(report));
  out.write("summary.json", summary.dump(2) + "\n");
  for (const auto& name : emit_plot_data(summary, out.dir)) out.files.push_back(name);
}

void cmd_p2_attribute(const ExperimentSpec& spec, OutputTracker& out) {
  const AttributionReport report = run_problem_two(spec);
  const nlohmann::json summary = attribution_report_json(report);
  out.write("report_attribution.csv", attribution_report_csv(report));
  out.write("summary.json", summary.dump(2) + "\n");
  for (const auto& name : emit_plot_data(summary, out.dir)) out.files.push_back(name);
}

void cmd_report(OutputTracker& out) {
  const nlohmann::json summary = load_json_file(out.dir / "summary.json");
  for (const auto& name : emit_plot_data(summary, out.dir)) out.files.push_back(name);
}

}  // namespace

int dispatch(const RunConfig& run) {
  try {
    ExperimentSpec spec =
        run.config_path.empty() ? ExperimentSpec{} : parse_config(run.config_path);
    if (run.seed) spec.seed = *run.seed;
    if (run.learner) spec.learner = *run.learner;
    spec.validate();

    if (run.out_dir.empty()) throw ConfigError("an output directory is required (--out)");
    OutputTracker out{run.out_dir, {}};
    std::filesystem::create_directories(out.dir);

    if (run.command == "generate") {
      cmd_generate(run, spec, out);
    } else if (run.command == "train") {
      cmd_train(run, spec, out);
    } else if (run.command == "predict") {
      cmd_predict(run, spec, out);
    } else if (run.command == "p1-pointwise") {
      cmd_p1_pointwise(spec, out);
    } else if (run.command == "p1-norm") {
      cmd_p1_norm(spec, out);
    } else if (run.command == "p2-attribute") {
      cmd_p2_attribute(spec, out);
    } else if (run.command == "report") {
      cmd_report(out);
    } else {
      throw ConfigError("unknown command '" + run.command + "'");
    }
    write_manifest(out, run, spec);
    return kExitOk;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const IoError& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitNumerical;
  }
}

int run_cli(const std::vector<std::string>& args) {
  CLI::App app{"twinlearn: learned forecast-error estimation and physics attribution\n"
               "on a two-scale twin model"};
  app.require_subcommand(1);

  RunConfig run;
  std::string seed_text;
  std::string learner_text;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", run.config_path, "experiment config file (INI)");
    cmd->add_option("--out", run.out_dir, "output directory")->required();
    cmd->add_option("--seed", seed_text, "master seed override (u64)");
    cmd->add_option("--learner", learner_text, "learner override: rf | nn")
        ->check(CLI::IsMember({"rf", "nn"}));
  };

  add_common(app.add_subcommand("generate", "emit datasets and closure-fit coefficients"));
  add_common(app.add_subcommand("train", "train the error model and save it"));
  add_common(app.add_subcommand("predict", "predict test-window errors with a saved model"));
  add_common(app.add_subcommand("p1-pointwise", "pointwise error prediction and correction"));
  add_common(app.add_subcommand("p1-norm", "error-norm prediction and config ranking"));
  add_common(app.add_subcommand("p2-attribute", "physics attribution via halved errors"));
  add_common(app.add_subcommand("report", "regenerate plot data from a summary.json"));

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    app.exit(e);
    return kExitConfig;
  }

  run.command = app.get_subcommands().front()->get_name();
  try {
    if (!seed_text.empty()) {
      run.seed = static_cast<std::uint64_t>(std::stoull(seed_text));
    }
    if (!learner_text.empty()) run.learner = learner_from_name(learner_text);
  } catch (const std::exception& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  }
  return dispatch(run);
}

}  // namespace twinlearn
