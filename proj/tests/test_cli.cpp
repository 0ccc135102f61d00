#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "twinlearn/cli.hpp"
#include "twinlearn/common.hpp"
#include "twinlearn/config.hpp"
#include "twinlearn/report_io.hpp"

using namespace twinlearn;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

void write_file(const fs::path& p, const std::string& content) {
  std::ofstream out(p, std::ios::binary);
  out << content;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

// Desk-size experiment so CLI runs stay fast.
const char* kSmallConfig =
    "[surrogate]\n"
    "slow_dim = 8\n"
    "fast_per_slow = 2\n"
    "spinup_steps = 200\n"
    "window_hours = 3\n"
    "[network]\n"
    "epochs = 40\n"
    "[experiment]\n"
    "threads = 1\n";

}  // namespace

TEST_CASE("an empty config yields the documented defaults") {
  TempDir dir("twinlearn_cli_defaults");
  write_file(dir.path / "empty.ini", "");
  const ExperimentSpec spec = parse_config(dir.path / "empty.ini");
  CHECK(spec.twin.slow_dim == 40);
  CHECK(spec.twin.fast_per_slow == 8);
  CHECK(spec.twin.forcing == 8.0);
  CHECK(spec.twin.dt == 0.005);
  CHECK(spec.twin.hour == 0.01);
  CHECK(spec.twin.window_hours == 6);
  CHECK(spec.twin.spinup_steps == 500);
  CHECK(spec.forest.n_trees == 10);
  CHECK(spec.forest.max_depth == 12);
  CHECK(spec.forest.min_samples_leaf == 2);
  CHECK(spec.network.hidden_width == 32);
  CHECK(spec.network.pointwise_hidden_layers == 6);
  CHECK(spec.network.aggregate_hidden_layers == 4);
  CHECK(spec.network.train.learning_rate == 0.01);
  CHECK(spec.network.train.epochs == 300);
  CHECK(spec.network.train.batch_size == 32);
  CHECK(spec.learner == Learner::RandomForest);
  CHECK(spec.train_fraction == 0.8);
  CHECK(spec.top_k == 5);
  CHECK(spec.seed == 1);
}

TEST_CASE("config keys are applied and validated") {
  SUBCASE("values land in the spec") {
    const ExperimentSpec spec = parse_config_text(
        "[forest]\nn_trees = 10\nmax_depth = 7\n[experiment]\nlearner = nn\nseed = 99\n"
        "[observation]\nkind = subset\nindices = 0, 2, 5\nnoise_sigma = 0.25\n",
        "inline");
    CHECK(spec.forest.n_trees == 10);
    CHECK(spec.forest.max_depth == 7);
    CHECK(spec.learner == Learner::NeuralNet);
    CHECK(spec.seed == 99);
    CHECK(spec.observation.kind == ObsKind::SubsetLinear);
    CHECK(spec.observation.indices == std::vector<int>{0, 2, 5});
    CHECK(spec.observation.noise_sigma == 0.25);
  }

  SUBCASE("malformed numerics name the key and line") {
    try {
      parse_config_text("[surrogate]\nslow_dim = 40\nforcing = abc\n", "bad.ini");
      FAIL("expected a parse error");
    } catch (const ConfigError& e) {
      const std::string what = e.what();
      CHECK(what.find("bad.ini:3") != std::string::npos);
      CHECK(what.find("surrogate.forcing") != std::string::npos);
    }
  }

  SUBCASE("unknown keys and sections are rejected") {
    CHECK_THROWS_AS(parse_config_text("[forest]\nn_tres = 10\n", "typo"), ConfigError);
    CHECK_THROWS_AS(parse_config_text("[forests]\nn_trees = 10\n", "typo"), ConfigError);
    CHECK_THROWS_AS(parse_config_text("n_trees = 10\n", "no-section"), ConfigError);
  }

  SUBCASE("comments and blank lines are ignored") {
    const ExperimentSpec spec = parse_config_text(
        "# leading comment\n\n[forest]\nn_trees = 4  # trailing comment\n", "inline");
    CHECK(spec.forest.n_trees == 4);
  }

  SUBCASE("missing files are I/O errors") {
    CHECK_THROWS_AS(parse_config("/nonexistent/twinlearn.ini"), IoError);
  }
}

TEST_CASE("spec json round-trips through the manifest encoding") {
  ExperimentSpec spec;
  spec.twin.slow_dim = 12;
  spec.options.forcing_sin_amplitude = 3.5;
  spec.observation.noise_sigma = 0.02;
  spec.learner = Learner::NeuralNet;
  spec.seed = 77;
  const ExperimentSpec back = spec_from_json(spec_to_json(spec));
  CHECK(back.twin.slow_dim == 12);
  CHECK(back.options.forcing_sin_amplitude == 3.5);
  CHECK(back.observation.noise_sigma == 0.02);
  CHECK(back.learner == Learner::NeuralNet);
  CHECK(back.seed == 77);
  CHECK(back.options.closure.cubic == spec.options.closure.cubic);
}

TEST_CASE("unknown commands exit nonzero with usage text") {
  CHECK(run_cli({"frobnicate", "--out", "/tmp/x"}) != 0);
  CHECK(run_cli({}) != 0);
}

TEST_CASE("dispatch maps error classes to exit codes") {
  TempDir dir("twinlearn_cli_codes");

  SUBCASE("missing config file is an I/O error") {
    RunConfig run{"p1-norm", (dir.path / "absent.ini").string(), (dir.path / "out").string(),
                  {}, {}};
    CHECK(dispatch(run) == 4);
  }

  SUBCASE("malformed config is a config error") {
    write_file(dir.path / "bad.ini", "[forest]\nn_trees = ten\n");
    RunConfig run{"p1-norm", (dir.path / "bad.ini").string(), (dir.path / "out").string(),
                  {}, {}};
    CHECK(dispatch(run) == 2);
  }

  SUBCASE("missing output directory is a config error") {
    RunConfig run{"p1-norm", "", "", {}, {}};
    CHECK(dispatch(run) == 2);
  }

  SUBCASE("predict without a trained model is an I/O error") {
    write_file(dir.path / "small.ini", kSmallConfig);
    RunConfig run{"predict", (dir.path / "small.ini").string(), (dir.path / "out").string(),
                  {}, {}};
    CHECK(dispatch(run) == 4);
  }

  SUBCASE("an integration blowup is a numerical error") {
    // A 5-unit step makes the quadratic advection terms explode during
    // spin-up.
    write_file(dir.path / "blowup.ini",
               "[surrogate]\nslow_dim = 8\nfast_per_slow = 2\ndt = 5.0\nhour = 10.0\n"
               "spinup_steps = 50\nwindow_hours = 2\n[experiment]\nthreads = 1\n");
    RunConfig run{"p1-norm", (dir.path / "blowup.ini").string(), (dir.path / "out").string(),
                  {}, {}};
    CHECK(dispatch(run) == 3);
  }
}

TEST_CASE("p1-pointwise produces a manifest, report, summary, and plot data") {
  TempDir dir("twinlearn_cli_p1");
  write_file(dir.path / "small.ini", kSmallConfig);
  RunConfig run{"p1-pointwise", (dir.path / "small.ini").string(),
                (dir.path / "out").string(), {}, {}};
  REQUIRE(dispatch(run) == 0);
  for (const char* name : {"manifest.json", "report_pointwise.csv", "summary.json",
                           "field_raw.csv", "field_corrected.csv", "field_predicted.csv"}) {
    CHECK_MESSAGE(fs::exists(dir.path / "out" / name), name);
  }

  // 72 config rows plus the raw and corrected summary rows.
  std::ifstream in(dir.path / "out" / "report_pointwise.csv");
  std::string line;
  int config_rows = 0, summary_rows = 0, lines = 0;
  while (std::getline(in, line)) {
    ++lines;
    if (line.rfind("config,", 0) == 0) ++config_rows;
    if (line.rfind("summary,", 0) == 0) ++summary_rows;
  }
  CHECK(config_rows == 72);
  CHECK(summary_rows == 2);
  CHECK(lines == 1 + 72 + 2);

  // Discrepancy-field rows match the observed point count (8 here).
  std::ifstream field(dir.path / "out" / "field_raw.csv");
  int field_rows = -1;  // skip header
  while (std::getline(field, line)) ++field_rows;
  CHECK(field_rows == 8);

  // The manifest lists every emitted file and the seed.
  nlohmann::json manifest;
  std::ifstream(dir.path / "out" / "manifest.json") >> manifest;
  CHECK(manifest.at("seed").get<std::uint64_t>() == 1);
  CHECK(manifest.at("command").get<std::string>() == "p1-pointwise");
  const auto outputs = manifest.at("outputs").get<std::vector<std::string>>();
  for (const auto& name : outputs) CHECK(fs::exists(dir.path / "out" / name));
  CHECK(manifest.at("spec").at("surrogate").at("slow_dim").get<int>() == 8);
}

TEST_CASE("two identical runs produce byte-identical outputs") {
  TempDir dir("twinlearn_cli_determinism");
  write_file(dir.path / "small.ini", kSmallConfig);
  for (const char* out : {"a", "b"}) {
    RunConfig run{"p1-pointwise", (dir.path / "small.ini").string(),
                  (dir.path / out).string(), {}, {}};
    REQUIRE(dispatch(run) == 0);
  }
  for (const auto& entry : fs::directory_iterator(dir.path / "a")) {
    const auto name = entry.path().filename();
    CHECK_MESSAGE(read_file(entry.path()) == read_file(dir.path / "b" / name),
                  name.string());
  }
}

TEST_CASE("train then predict reuses the saved model across processes") {
  TempDir dir("twinlearn_cli_train_predict");
  write_file(dir.path / "small.ini", kSmallConfig);
  const std::string out = (dir.path / "out").string();
  REQUIRE(dispatch({"train", (dir.path / "small.ini").string(), out, {}, {}}) == 0);
  CHECK(fs::exists(dir.path / "out" / "error_model.json"));
  REQUIRE(dispatch({"predict", (dir.path / "small.ini").string(), out, {}, {}}) == 0);
  CHECK(fs::exists(dir.path / "out" / "predictions.csv"));

  std::ifstream in(dir.path / "out" / "predictions.csv");
  std::string line;
  int rows = -1;
  while (std::getline(in, line)) ++rows;
  CHECK(rows == 72 * 8);  // one per (config, observed point)
}

TEST_CASE("generate emits datasets and the closure fit") {
  TempDir dir("twinlearn_cli_generate");
  write_file(dir.path / "small.ini", kSmallConfig);
  RunConfig run{"generate", (dir.path / "small.ini").string(), (dir.path / "out").string(),
                {}, {}};
  REQUIRE(dispatch(run) == 0);
  for (const char* name :
       {"error_train.csv", "error_train.csv.meta.json", "error_test.csv", "norm_train.csv",
        "norm_test.csv", "physics.csv", "physics.csv.meta.json", "closure_fit.json",
        "manifest.json"}) {
    CHECK_MESSAGE(fs::exists(dir.path / "out" / name), name);
  }
  const ErrorDataset back = read_error_dataset(dir.path / "out" / "error_train.csv");
  CHECK(back.rows() == 72 * 8);
  CHECK(back.feature_names == error_feature_names(4));
}

TEST_CASE("the report command regenerates plot data from a summary") {
  TempDir dir("twinlearn_cli_report");
  write_file(dir.path / "small.ini", kSmallConfig);
  const std::string out = (dir.path / "out").string();
  REQUIRE(dispatch({"p2-attribute", (dir.path / "small.ini").string(), out, {}, {}}) == 0);
  CHECK(fs::exists(dir.path / "out" / "histogram_rf.csv"));
  fs::remove(dir.path / "out" / "histogram_rf.csv");
  fs::remove(dir.path / "out" / "histogram_nn.csv");
  REQUIRE(dispatch({"report", "", out, {}, {}}) == 0);
  CHECK(fs::exists(dir.path / "out" / "histogram_rf.csv"));
  CHECK(fs::exists(dir.path / "out" / "histogram_nn.csv"));

  // Histogram CSV: 4 data rows in package order.
  std::ifstream in(dir.path / "out" / "histogram_rf.csv");
  std::string line;
  std::getline(in, line);
  CHECK(line == "package,count");
  std::vector<std::string> packages;
  while (std::getline(in, line)) packages.push_back(line.substr(0, line.find(',')));
  CHECK(packages ==
        std::vector<std::string>{"closure", "forcing", "dissipation", "integrator"});
}

TEST_CASE("plot-data helpers") {
  AttributionHistogram hist;
  hist.change_counts = {3, 1, 12, 9};
  hist.test_size = 20;
  const std::string csv = histogram_csv(hist);
  CHECK(csv ==
        "package,count\nclosure,3\nforcing,1\ndissipation,12\nintegrator,9\n");

  AttributionHistogram empty;
  CHECK(histogram_csv(empty) == "package,count\n");

  Eigen::VectorXd field(3);
  field << 0.5, -1.25, 0.0;
  CHECK(field_csv(field) == "index,value\n0,0.5\n1,-1.25\n2,0\n");
}

TEST_CASE("the shipped config files parse cleanly") {
  const fs::path configs = fs::path(TWINLEARN_SOURCE_DIR) / "configs";

  // default.ini spells out every built-in default explicitly.
  const ExperimentSpec shipped = parse_config(configs / "default.ini");
  const ExperimentSpec defaults;
  CHECK(spec_to_json(shipped) == spec_to_json(defaults));

  // planted.ini rescales the closure coefficient sets off the fit.
  const ExperimentSpec planted = parse_config(configs / "planted.ini");
  CHECK(planted.options.closure.linear_slope == 0.8);
  CHECK(planted.options.closure.quadratic[0] ==
        doctest::Approx(5.0 * defaults.options.closure.quadratic[0]).epsilon(1e-15));
  CHECK(planted.options.closure.cubic[3] ==
        doctest::Approx(11.0 * defaults.options.closure.cubic[3]).epsilon(1e-15));
  CHECK(planted.options.forcing_sin_amplitude == 0.3);
  CHECK(planted.forest.min_samples_leaf == 12);
  CHECK(planted.twin.slow_dim == defaults.twin.slow_dim);
}

TEST_CASE("seed and learner overrides reach the manifest") {
  TempDir dir("twinlearn_cli_overrides");
  write_file(dir.path / "small.ini", kSmallConfig);
  RunConfig run{"p1-norm", (dir.path / "small.ini").string(), (dir.path / "out").string(),
                std::uint64_t{424242}, Learner::NeuralNet};
  REQUIRE(dispatch(run) == 0);
  nlohmann::json manifest;
  std::ifstream(dir.path / "out" / "manifest.json") >> manifest;
  CHECK(manifest.at("seed").get<std::uint64_t>() == 424242);
  CHECK(manifest.at("learner").get<std::string>() == "nn");
}
