#include "twinlearn/report_io.hpp"

#include <fstream>
#include <sstream>

#include "twinlearn/common.hpp"
#include "twinlearn/config.hpp"

namespace twinlearn {

void write_text_atomic(const std::filesystem::path& path, const std::string& content) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
    out << content;
    if (!out) throw IoError("write failed: " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("rename failed for " + path.string() + ": " + ec.message());
}

namespace {

const char* kPointwiseHeader =
    "row_type,id,closure,forcing,dissipation,integrator,"
    "rmse_predicted,rmse_zero,mean_abs_raw,mean_abs_corrected,"
    "abs_min,abs_avg,abs_max,rmse_min,rmse_avg,rmse_max\n";

std::vector<std::string> config_option_names(const PhysicsConfig& c) {
  std::stringstream ss(c.describe());
  std::vector<std::string> parts;
  std::string item;
  while (std::getline(ss, item, '/')) parts.push_back(item);
  return parts;
}

nlohmann::json config_json(const PhysicsConfig& c) {
  return {{"id", c.flat_index()},
          {"closure", c.closure},
          {"forcing", c.forcing},
          {"dissipation", c.dissipation},
          {"integrator", c.integrator},
          {"name", c.describe()}};
}

nlohmann::json summary_json(const PointwiseSummary& s) {
  return {{"min", s.min}, {"avg", s.avg}, {"max", s.max}};
}

nlohmann::json vector_json(const Eigen::VectorXd& v) {
  return std::vector<double>(v.data(), v.data() + v.size());
}

nlohmann::json histogram_json(const AttributionHistogram& h) {
  return {{"counts", h.change_counts}, {"test_size", h.test_size}};
}

AttributionHistogram histogram_from_json(const nlohmann::json& j) {
  AttributionHistogram h;
  h.change_counts = j.at("counts").get<std::array<int, 4>>();
  h.test_size = j.at("test_size").get<int>();
  return h;
}

}  // namespace

std::string pointwise_report_csv(const PointwiseReport& report) {
  std::string out = kPointwiseHeader;
  for (const auto& row : report.configs) {
    const auto names = config_option_names(row.config);
    out += "config," + std::to_string(row.config.flat_index()) + "," + names[0] + "," + names[1] +
           "," + names[2] + "," + names[3] + "," + format_double(row.rmse_predicted) + "," +
           format_double(row.rmse_zero) + "," + format_double(row.mean_abs_raw) + "," +
           format_double(row.mean_abs_corrected) + ",,,,,,\n";
  }
  auto summary_row = [](const char* label, const PointwiseSummary& abs,
                        const PointwiseSummary& rm) {
    return std::string("summary,") + label + ",,,,,,,,," + format_double(abs.min) + "," +
           format_double(abs.avg) + "," + format_double(abs.max) + "," + format_double(rm.min) +
           "," + format_double(rm.avg) + "," + format_double(rm.max) + "\n";
  };
  out += summary_row("raw", report.raw_abs, report.rmse_zero);
  out += summary_row("corrected", report.corrected_abs, report.rmse_predicted);
  return out;
}

nlohmann::json pointwise_report_json(const PointwiseReport& report) {
  nlohmann::json j;
  j["experiment"] = "p1-pointwise";
  j["learner"] = learner_name(report.learner);
  nlohmann::json configs = nlohmann::json::array();
  for (const auto& row : report.configs) {
    configs.push_back({{"config", config_json(row.config)},
                       {"rmse_predicted", row.rmse_predicted},
                       {"rmse_zero", row.rmse_zero},
                       {"mean_abs_raw", row.mean_abs_raw},
                       {"mean_abs_corrected", row.mean_abs_corrected}});
  }
  j["configs"] = std::move(configs);
  j["summary"] = {{"raw_abs", summary_json(report.raw_abs)},
                  {"corrected_abs", summary_json(report.corrected_abs)},
                  {"rmse_predicted", summary_json(report.rmse_predicted)},
                  {"rmse_zero", summary_json(report.rmse_zero)}};
  j["plot_config"] = report.plot_config;
  j["fields"] = {{"raw", vector_json(report.raw_delta[report.plot_config])},
                 {"predicted", vector_json(report.predicted_delta[report.plot_config])},
                 {"corrected", vector_json(report.corrected_delta[report.plot_config])}};
  return j;
}

std::string norm_report_csv(const NormReport& report) {
  std::string out =
      "config_id,closure,forcing,dissipation,integrator,true_norm,rf_predicted,nn_predicted\n";
  for (const auto& row : report.configs) {
    const auto names = config_option_names(row.config);
    out += std::to_string(row.config.flat_index()) + "," + names[0] + "," + names[1] + "," +
           names[2] + "," + names[3] + "," + format_double(row.true_norm) + "," +
           format_double(row.rf_predicted) + "," + format_double(row.nn_predicted) + "\n";
  }
  return out;
}

nlohmann::json norm_report_json(const NormReport& report) {
  nlohmann::json j;
  j["experiment"] = "p1-norm";
  nlohmann::json configs = nlohmann::json::array();
  for (const auto& row : report.configs) {
    configs.push_back({{"config", config_json(row.config)},
                       {"true_norm", row.true_norm},
                       {"rf_predicted", row.rf_predicted},
                       {"nn_predicted", row.nn_predicted}});
  }
  j["configs"] = std::move(configs);
  j["rf"] = {{"rmse", report.rf_rmse},
             {"spearman", report.rf_spearman},
             {"best_in_top_k", report.rf_best_in_top_k},
             {"ranking", report.rf_ranking}};
  j["nn"] = {{"rmse", report.nn_rmse},
             {"spearman", report.nn_spearman},
             {"best_in_top_k", report.nn_best_in_top_k},
             {"ranking", report.nn_ranking}};
  j["true_ranking"] = report.true_ranking;
  j["true_best_config"] = report.true_best_config;
  j["top_k"] = report.top_k;
  return j;
}

std::string attribution_report_csv(const AttributionReport& report) {
  std::string out = "package,rf_changes,nn_changes,rf_changes_vs_truth,nn_changes_vs_truth\n";
  for (int pkg = 0; pkg < 4; ++pkg) {
    out += std::string(PhysicsConfig::kPackageNames[pkg]) + "," +
           std::to_string(report.rf.histogram.change_counts[pkg]) + "," +
           std::to_string(report.nn.histogram.change_counts[pkg]) + "," +
           std::to_string(report.rf.histogram_vs_truth.change_counts[pkg]) + "," +
           std::to_string(report.nn.histogram_vs_truth.change_counts[pkg]) + "\n";
  }
  return out;
}

nlohmann::json attribution_report_json(const AttributionReport& report) {
  auto learner_json = [](const AttributionLearnerResult& r) {
    nlohmann::json predicted = nlohmann::json::array();
    for (const auto& c : r.predicted) predicted.push_back(config_json(c));
    return nlohmann::json{{"histogram", histogram_json(r.histogram)},
                          {"histogram_vs_truth", histogram_json(r.histogram_vs_truth)},
                          {"validation_rmse", r.validation_rmse},
                          {"predicted_configs", std::move(predicted)}};
  };
  nlohmann::json j;
  j["experiment"] = "p2-attribute";
  j["rf"] = learner_json(report.rf);
  j["nn"] = learner_json(report.nn);
  j["random_baseline_rmse"] = report.random_baseline_rmse;
  j["train_size"] = report.train_size;
  j["test_size"] = report.test_size;
  return j;
}

std::string histogram_csv(const AttributionHistogram& histogram) {
  std::string out = "package,count\n";
  if (histogram.test_size == 0) return out;
  for (int pkg = 0; pkg < 4; ++pkg) {
    out += std::string(PhysicsConfig::kPackageNames[pkg]) + "," +
           std::to_string(histogram.change_counts[pkg]) + "\n";
  }
  return out;
}

std::string field_csv(const Eigen::VectorXd& field) {
  std::string out = "index,value\n";
  for (Eigen::Index i = 0; i < field.size(); ++i) {
    out += std::to_string(i) + "," + format_double(field[i]) + "\n";
  }
  return out;
}

std::vector<std::string> emit_plot_data(const nlohmann::json& summary,
                                        const std::filesystem::path& out_dir) {
  std::vector<std::string> written;
  auto write = [&](const std::string& name, const std::string& content) {
    write_text_atomic(out_dir / name, content);
    written.push_back(name);
  };

  const std::string experiment = summary.value("experiment", "");
  if (experiment == "p1-pointwise") {
    const auto& fields = summary.at("fields");
    auto as_vector = [](const nlohmann::json& a) {
      const auto v = a.get<std::vector<double>>();
      return Eigen::Map<const Eigen::VectorXd>(v.data(), v.size()).eval();
    };
    write("field_raw.csv", field_csv(as_vector(fields.at("raw"))));
    write("field_corrected.csv", field_csv(as_vector(fields.at("corrected"))));
    write("field_predicted.csv", field_csv(as_vector(fields.at("predicted"))));
  } else if (experiment == "p2-attribute") {
    write("histogram_rf.csv",
          histogram_csv(histogram_from_json(summary.at("rf").at("histogram"))));
    write("histogram_nn.csv",
          histogram_csv(histogram_from_json(summary.at("nn").at("histogram"))));
  } else if (experiment == "p1-norm") {
    std::string out = "rank,true_config,rf_config,nn_config\n";
    const auto truth = summary.at("true_ranking").get<std::vector<int>>();
    const auto rf = summary.at("rf").at("ranking").get<std::vector<int>>();
    const auto nn = summary.at("nn").at("ranking").get<std::vector<int>>();
    for (size_t i = 0; i < truth.size(); ++i) {
      out += std::to_string(i + 1) + "," + std::to_string(truth[i]) + "," +
             std::to_string(rf[i]) + "," + std::to_string(nn[i]) + "\n";
    }
    write("ranking.csv", out);
  } else {
    throw ConfigError("emit_plot_data: unrecognized experiment '" + experiment + "'");
  }
  return written;
}

}  // namespace twinlearn
