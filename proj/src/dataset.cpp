#include "twinlearn/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "twinlearn/common.hpp"
#include "twinlearn/rng.hpp"

namespace twinlearn {

namespace {

void require_consistent(const std::vector<WindowRun>& runs) {
  if (runs.empty()) throw std::invalid_argument("dataset builder: no runs");
  const int n = runs[0].checkpoints();
  const int m = runs[0].observed_count();
  if (n < 2) throw std::invalid_argument("dataset builder: runs need >= 2 checkpoints");
  for (const auto& run : runs) {
    if (run.checkpoints() != n) {
      throw std::invalid_argument("dataset builder: inconsistent checkpoint counts");
    }
    if (run.observed_count() != m ||
        run.discrepancies.size() != static_cast<size_t>(n)) {
      throw std::invalid_argument("dataset builder: misaligned forecast/discrepancy arrays");
    }
    for (int c = 0; c < n; ++c) {
      if (run.discrepancies[c].values.size() != m || run.forecasts[c].size() != m) {
        throw std::invalid_argument("dataset builder: vector length mismatch");
      }
    }
  }
}

void require_finite(const Eigen::MatrixXd& mat, const char* what) {
  if (!mat.allFinite()) {
    throw NumericalError(std::string("dataset builder: non-finite ") + what);
  }
}

double population_variance(const Eigen::VectorXd& v) {
  const double mean = v.mean();
  return (v.array() - mean).square().sum() / static_cast<double>(v.size());
}

}  // namespace

std::string ErrorDataset::schema_fingerprint() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto eat = [&h](const std::string& s) {
    for (unsigned char c : s) {
      h ^= c;
      h *= 0x100000001b3ULL;
    }
    h ^= 0x1f;
    h *= 0x100000001b3ULL;
  };
  for (const auto& n : feature_names) eat(n);
  for (const auto& n : target_names) eat(n);
  eat(grain == Grain::PerGridpoint ? "per-gridpoint" : "per-run");
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

Eigen::VectorXd encode_config(const PhysicsConfig& config) {
  if (!config.valid()) throw std::invalid_argument("encode_config: invalid config");
  Eigen::VectorXd v = Eigen::VectorXd::Zero(12);
  int offset = 0;
  for (int pkg = 0; pkg < 4; ++pkg) {
    v[offset + config.option(pkg)] = 1.0;
    offset += PhysicsConfig::kOptionCounts[pkg];
  }
  return v;
}

PhysicsConfig decode_config(const Eigen::VectorXd& encoded) {
  if (encoded.size() != 12) throw std::invalid_argument("decode_config: expected 12 entries");
  PhysicsConfig c;
  int offset = 0;
  for (int pkg = 0; pkg < 4; ++pkg) {
    const int n = PhysicsConfig::kOptionCounts[pkg];
    int hot = -1;
    for (int i = 0; i < n; ++i) {
      if (encoded[offset + i] == 1.0) {
        if (hot >= 0) throw std::invalid_argument("decode_config: multiple hot entries in block");
        hot = i;
      } else if (encoded[offset + i] != 0.0) {
        throw std::invalid_argument("decode_config: entry is neither 0 nor 1");
      }
    }
    if (hot < 0) throw std::invalid_argument("decode_config: empty one-hot block");
    switch (pkg) {
      case 0: c.closure = hot; break;
      case 1: c.forcing = hot; break;
      case 2: c.dissipation = hot; break;
      case 3: c.integrator = hot; break;
    }
    offset += n;
  }
  return c;
}

std::vector<std::string> config_feature_names() {
  std::vector<std::string> names;
  for (int pkg = 0; pkg < 4; ++pkg) {
    for (int i = 0; i < PhysicsConfig::kOptionCounts[pkg]; ++i) {
      names.push_back(std::string("theta_") + PhysicsConfig::kPackageNames[pkg] + "_" +
                      std::to_string(i));
    }
  }
  return names;
}

Eigen::VectorXd error_features_for_point(const WindowRun& run, int point) {
  const int n = run.checkpoints();
  if (n < 2) throw std::invalid_argument("error_features_for_point: run needs >= 2 checkpoints");
  if (point < 0 || point >= run.observed_count()) {
    throw std::invalid_argument("error_features_for_point: point out of range");
  }
  const int past = n - 1;
  Eigen::VectorXd row(12 + 2 * past + 1);
  row.head(12) = encode_config(run.config);
  for (int c = 0; c < past; ++c) {
    row[12 + c] = run.forecasts[c][point];
    row[12 + past + c] = run.discrepancies[c].values[point];
  }
  row[12 + 2 * past] = run.forecasts[n - 1][point];
  return row;
}

std::vector<std::string> error_feature_names(int checkpoints) {
  std::vector<std::string> names = config_feature_names();
  const int past = checkpoints - 1;
  for (int c = 0; c < past; ++c) names.push_back("o_tau_" + std::to_string(c));
  for (int c = 0; c < past; ++c) names.push_back("delta_tau_" + std::to_string(c));
  names.push_back("o_t");
  return names;
}

ErrorDataset build_error_records(const std::vector<WindowRun>& runs) {
  require_consistent(runs);
  const int n = runs[0].checkpoints();
  const int m = runs[0].observed_count();

  ErrorDataset ds;
  ds.grain = Grain::PerGridpoint;
  ds.feature_names = error_feature_names(n);
  ds.target_names = {"target"};
  ds.features.resize(static_cast<Eigen::Index>(runs.size()) * m, ds.feature_names.size());
  ds.targets.resize(ds.features.rows(), 1);

  Eigen::Index row = 0;
  for (const auto& run : runs) {
    for (int point = 0; point < m; ++point, ++row) {
      ds.features.row(row) = error_features_for_point(run, point);
      ds.targets(row, 0) = run.discrepancies[n - 1].values[point];
    }
  }
  require_finite(ds.features, "features");
  require_finite(ds.targets, "targets");
  return ds;
}

Eigen::VectorXd norm_features(const WindowRun& run) {
  const int n = run.checkpoints();
  const int past = n - 1;
  Eigen::VectorXd row(12 + 2 * past + 5);
  row.head(12) = encode_config(run.config);
  for (int c = 0; c < past; ++c) {
    row[12 + c] = run.forecasts[c].norm();
    row[12 + past + c] = run.discrepancies[c].values.norm();
  }
  const Eigen::VectorXd& current = run.forecasts[n - 1];
  row[12 + 2 * past + 0] = current.norm();
  row[12 + 2 * past + 1] = current.mean();
  row[12 + 2 * past + 2] = current.minCoeff();
  row[12 + 2 * past + 3] = current.maxCoeff();
  row[12 + 2 * past + 4] = population_variance(current);
  return row;
}

std::vector<std::string> norm_feature_names(int checkpoints) {
  std::vector<std::string> names = config_feature_names();
  const int past = checkpoints - 1;
  for (int c = 0; c < past; ++c) names.push_back("o_norm_tau_" + std::to_string(c));
  for (int c = 0; c < past; ++c) names.push_back("delta_norm_tau_" + std::to_string(c));
  names.push_back("o_norm_t");
  names.push_back("o_mean_t");
  names.push_back("o_min_t");
  names.push_back("o_max_t");
  names.push_back("o_var_t");
  return names;
}

ErrorDataset build_norm_records(const std::vector<WindowRun>& runs) {
  require_consistent(runs);
  const int n = runs[0].checkpoints();

  ErrorDataset ds;
  ds.grain = Grain::PerRun;
  ds.feature_names = norm_feature_names(n);
  ds.target_names = {"target"};
  ds.features.resize(static_cast<Eigen::Index>(runs.size()), ds.feature_names.size());
  ds.targets.resize(ds.features.rows(), 1);
  for (size_t r = 0; r < runs.size(); ++r) {
    ds.features.row(static_cast<Eigen::Index>(r)) = norm_features(runs[r]);
    ds.targets(static_cast<Eigen::Index>(r), 0) = runs[r].discrepancies[n - 1].values.norm();
  }
  require_finite(ds.features, "features");
  require_finite(ds.targets, "targets");
  return ds;
}

Eigen::VectorXd physics_features(const Eigen::VectorXd& delta) {
  if (delta.size() == 0) throw std::invalid_argument("physics_features: empty discrepancy");
  Eigen::VectorXd row(5);
  row[0] = delta.mean();
  row[1] = delta.minCoeff();
  row[2] = delta.maxCoeff();
  row[3] = population_variance(delta);
  row[4] = delta.norm();
  return row;
}

std::vector<std::string> physics_feature_names() {
  return {"delta_mean", "delta_min", "delta_max", "delta_var", "delta_norm"};
}

PhysicsDataset build_physics_records(const std::vector<WindowRun>& runs) {
  require_consistent(runs);
  const int n = runs[0].checkpoints();
  PhysicsDataset ds;
  ds.feature_names = physics_feature_names();
  ds.features.resize(static_cast<Eigen::Index>(runs.size()), 5);
  ds.targets.reserve(runs.size());
  for (size_t r = 0; r < runs.size(); ++r) {
    ds.features.row(static_cast<Eigen::Index>(r)) =
        physics_features(runs[r].discrepancies[n - 1].values);
    ds.targets.push_back(runs[r].config);
  }
  require_finite(ds.features, "features");
  return ds;
}

std::pair<std::vector<int>, std::vector<int>> split_indices(int n, const SplitSpec& spec) {
  if (!(spec.train_fraction > 0.0 && spec.train_fraction < 1.0)) {
    throw std::invalid_argument("split: train_fraction must be strictly between 0 and 1");
  }
  if (n < 2) throw std::invalid_argument("split: need at least 2 rows");
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(combine_seed(spec.seed, 0x5b717ULL));
  for (int i = n - 1; i > 0; --i) {
    std::swap(order[i], order[rng.next_below(static_cast<std::uint64_t>(i) + 1)]);
  }
  const int n_train = static_cast<int>(std::ceil(spec.train_fraction * n));
  return {std::vector<int>(order.begin(), order.begin() + n_train),
          std::vector<int>(order.begin() + n_train, order.end())};
}

namespace {

ErrorDataset take_rows(const ErrorDataset& ds, const std::vector<int>& idx) {
  ErrorDataset out;
  out.feature_names = ds.feature_names;
  out.target_names = ds.target_names;
  out.grain = ds.grain;
  out.features.resize(static_cast<Eigen::Index>(idx.size()), ds.features.cols());
  out.targets.resize(static_cast<Eigen::Index>(idx.size()), ds.targets.cols());
  for (size_t i = 0; i < idx.size(); ++i) {
    out.features.row(static_cast<Eigen::Index>(i)) = ds.features.row(idx[i]);
    out.targets.row(static_cast<Eigen::Index>(i)) = ds.targets.row(idx[i]);
  }
  return out;
}

PhysicsDataset take_rows(const PhysicsDataset& ds, const std::vector<int>& idx) {
  PhysicsDataset out;
  out.feature_names = ds.feature_names;
  out.features.resize(static_cast<Eigen::Index>(idx.size()), ds.features.cols());
  out.targets.reserve(idx.size());
  for (size_t i = 0; i < idx.size(); ++i) {
    out.features.row(static_cast<Eigen::Index>(i)) = ds.features.row(idx[i]);
    out.targets.push_back(ds.targets[idx[i]]);
  }
  return out;
}

}  // namespace

std::pair<ErrorDataset, ErrorDataset> split(const ErrorDataset& ds, const SplitSpec& spec) {
  auto [train_idx, test_idx] = split_indices(static_cast<int>(ds.rows()), spec);
  return {take_rows(ds, train_idx), take_rows(ds, test_idx)};
}

std::pair<PhysicsDataset, PhysicsDataset> split(const PhysicsDataset& ds, const SplitSpec& spec) {
  auto [train_idx, test_idx] = split_indices(static_cast<int>(ds.rows()), spec);
  return {take_rows(ds, train_idx), take_rows(ds, test_idx)};
}

namespace {

void write_table(const std::filesystem::path& path, const std::vector<std::string>& header,
                 const Eigen::MatrixXd& left, const Eigen::MatrixXd& right) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  for (size_t i = 0; i < header.size(); ++i) {
    if (i) out << ',';
    out << header[i];
  }
  out << '\n';
  for (Eigen::Index r = 0; r < left.rows(); ++r) {
    for (Eigen::Index c = 0; c < left.cols(); ++c) {
      if (c) out << ',';
      out << format_double(left(r, c));
    }
    for (Eigen::Index c = 0; c < right.cols(); ++c) {
      out << ',' << format_double(right(r, c));
    }
    out << '\n';
  }
  if (!out) throw IoError("write failed: " + path.string());
}

void write_sidecar(const std::filesystem::path& csv_path, const std::string& metadata_json) {
  std::filesystem::path meta = csv_path;
  meta += ".meta.json";
  std::ofstream out(meta, std::ios::binary);
  if (!out) throw IoError("cannot open " + meta.string() + " for writing");
  out << metadata_json;
  if (!metadata_json.empty() && metadata_json.back() != '\n') out << '\n';
}

}  // namespace

void write_error_dataset(const ErrorDataset& ds, const std::filesystem::path& csv_path,
                         const std::string& metadata_json) {
  std::vector<std::string> header = ds.feature_names;
  header.insert(header.end(), ds.target_names.begin(), ds.target_names.end());
  write_table(csv_path, header, ds.features, ds.targets);
  write_sidecar(csv_path, metadata_json);
}

ErrorDataset read_error_dataset(const std::filesystem::path& csv_path) {
  std::ifstream in(csv_path, std::ios::binary);
  if (!in) throw IoError("cannot open " + csv_path.string());

  std::filesystem::path meta_path = csv_path;
  meta_path += ".meta.json";
  std::ifstream meta_in(meta_path, std::ios::binary);
  if (!meta_in) throw IoError("missing dataset sidecar " + meta_path.string());
  nlohmann::json meta;
  try {
    meta_in >> meta;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("invalid dataset sidecar " + meta_path.string() + ": " + e.what());
  }

  ErrorDataset ds;
  ds.feature_names = meta.at("schema").at("features").get<std::vector<std::string>>();
  ds.target_names = meta.at("schema").at("targets").get<std::vector<std::string>>();
  ds.grain = meta.at("grain").get<std::string>() == "per-run" ? Grain::PerRun : Grain::PerGridpoint;

  std::string line;
  if (!std::getline(in, line)) throw IoError("empty dataset file " + csv_path.string());
  std::vector<std::vector<double>> rows;
  int line_no = 1;
  const size_t n_cols = ds.feature_names.size() + ds.target_names.size();
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<double> row;
    row.reserve(n_cols);
    size_t start = 0;
    while (start <= line.size()) {
      size_t comma = line.find(',', start);
      if (comma == std::string::npos) comma = line.size();
      row.push_back(parse_double(std::string_view(line).substr(start, comma - start),
                                 csv_path.string() + ":" + std::to_string(line_no)));
      start = comma + 1;
    }
    if (row.size() != n_cols) {
      throw IoError(csv_path.string() + ":" + std::to_string(line_no) + ": expected " +
                    std::to_string(n_cols) + " columns, got " + std::to_string(row.size()));
    }
    rows.push_back(std::move(row));
  }

  const Eigen::Index nf = static_cast<Eigen::Index>(ds.feature_names.size());
  const Eigen::Index nt = static_cast<Eigen::Index>(ds.target_names.size());
  ds.features.resize(static_cast<Eigen::Index>(rows.size()), nf);
  ds.targets.resize(static_cast<Eigen::Index>(rows.size()), nt);
  for (size_t r = 0; r < rows.size(); ++r) {
    for (Eigen::Index c = 0; c < nf; ++c) ds.features(static_cast<Eigen::Index>(r), c) = rows[r][c];
    for (Eigen::Index c = 0; c < nt; ++c) {
      ds.targets(static_cast<Eigen::Index>(r), c) = rows[r][nf + c];
    }
  }
  return ds;
}

void write_physics_dataset(const PhysicsDataset& ds, const std::filesystem::path& csv_path,
                           const std::string& metadata_json) {
  std::vector<std::string> header = ds.feature_names;
  for (int pkg = 0; pkg < 4; ++pkg) {
    header.push_back(std::string("target_") + PhysicsConfig::kPackageNames[pkg]);
  }
  Eigen::MatrixXd targets(ds.rows(), 4);
  for (Eigen::Index r = 0; r < ds.rows(); ++r) {
    for (int pkg = 0; pkg < 4; ++pkg) targets(r, pkg) = ds.targets[r].option(pkg);
  }
  write_table(csv_path, header, ds.features, targets);
  write_sidecar(csv_path, metadata_json);
}

}  // namespace twinlearn
