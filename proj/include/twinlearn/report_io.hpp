#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "twinlearn/pipelines.hpp"

namespace twinlearn {

// Write-temp-then-rename so report files appear whole or not at all.
void write_text_atomic(const std::filesystem::path& path, const std::string& content);

std::string pointwise_report_csv(const PointwiseReport& report);
nlohmann::json pointwise_report_json(const PointwiseReport& report);

std::string norm_report_csv(const NormReport& report);
nlohmann::json norm_report_json(const NormReport& report);

std::string attribution_report_csv(const AttributionReport& report);
nlohmann::json attribution_report_json(const AttributionReport& report);

// 2-column (package, count) CSV; a histogram with no test rows yields the
// header only.
std::string histogram_csv(const AttributionHistogram& histogram);

// (index, value) CSV of a per-gridpoint field.
std::string field_csv(const Eigen::VectorXd& field);

// Regenerate plot-friendly CSVs from a stored summary JSON. Returns the file
// names written into out_dir.
std::vector<std::string> emit_plot_data(const nlohmann::json& summary,
                                        const std::filesystem::path& out_dir);

}  // namespace twinlearn
