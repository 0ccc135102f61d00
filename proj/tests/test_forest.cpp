#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "oracles.hpp"
#include "twinlearn/common.hpp"
#include "twinlearn/forest.hpp"
#include "twinlearn/rng.hpp"

using namespace twinlearn;

namespace {

ForestParams exhaustive_params() {
  ForestParams p;
  p.n_trees = 1;
  p.max_depth = 0;  // unlimited
  p.min_samples_leaf = 1;
  p.features_per_split = 0;
  p.bootstrap = false;
  return p;
}

std::pair<Eigen::MatrixXd, Eigen::MatrixXd> random_dataset(int rows, int cols,
                                                           std::uint64_t seed) {
  Rng rng(seed);
  Eigen::MatrixXd x(rows, cols), y(rows, 1);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) x(r, c) = rng.uniform(-3.0, 3.0);
    y(r, 0) = std::sin(x(r, 0)) + 0.3 * x.row(r).sum() + 0.1 * rng.next_gaussian();
  }
  return {x, y};
}

double training_sse(const Tree& tree, const Eigen::MatrixXd& x, const Eigen::MatrixXd& y,
                    const std::vector<int>& rows) {
  double sse = 0.0;
  for (int r : rows) sse += (tree.predict(x.row(r)) - y.row(r).transpose()).squaredNorm();
  return sse;
}

}  // namespace

TEST_CASE("constant targets collapse to a single leaf") {
  Eigen::MatrixXd x(5, 2);
  x << 0, 1, 2, 3, 4, 5, 6, 7, 8, 9;
  Eigen::MatrixXd y = Eigen::MatrixXd::Constant(5, 1, 3.25);
  ForestParams params = exhaustive_params();
  const Tree tree = fit_tree(x, y, params, SplitCriterion::SumSquaredError, 1);
  REQUIRE(tree.nodes.size() == 1);
  CHECK(tree.nodes[0].is_leaf());
  CHECK(tree.predict(x.row(2))[0] == 3.25);
}

TEST_CASE("the textbook 1-D step function splits at 1.5") {
  Eigen::MatrixXd x(4, 1), y(4, 1);
  x << 0, 1, 2, 3;
  y << 0, 0, 1, 1;
  ForestParams params = exhaustive_params();
  const Tree tree = fit_tree(x, y, params, SplitCriterion::SumSquaredError, 1);
  REQUIRE_FALSE(tree.nodes[0].is_leaf());
  CHECK(tree.nodes[0].feature == 0);
  CHECK(tree.nodes[0].threshold == 1.5);
  Eigen::VectorXd probe(1);
  probe << 0.5;
  CHECK(tree.predict(probe)[0] == 0.0);
  probe << 2.5;
  CHECK(tree.predict(probe)[0] == 1.0);
  // SSE after the split is zero: both leaves are pure.
  std::vector<int> all{0, 1, 2, 3};
  CHECK(training_sse(tree, x, y, all) == 0.0);
}

TEST_CASE("min_samples_leaf equal to n yields the global mean") {
  auto [x, y] = random_dataset(12, 3, 5);
  ForestParams params = exhaustive_params();
  params.min_samples_leaf = 12;
  const Tree tree = fit_tree(x, y, params, SplitCriterion::SumSquaredError, 1);
  REQUIRE(tree.nodes.size() == 1);
  CHECK(tree.predict(x.row(0))[0] == doctest::Approx(y.mean()).epsilon(1e-14));
}

TEST_CASE("splits match exhaustive enumeration on random small datasets") {
  for (std::uint64_t seed = 0; seed < 12; ++seed) {
    const int rows = 8 + static_cast<int>(seed) * 3;
    const int cols = 1 + static_cast<int>(seed % 5);
    auto [x, y] = random_dataset(std::min(rows, 50), cols, 100 + seed);
    ForestParams params = exhaustive_params();
    params.min_samples_leaf = 2;
    params.features_per_split = cols;  // full feature set, so the draw is exhaustive
    const Tree tree = fit_tree(x, y, params, SplitCriterion::SumSquaredError, seed);
    const auto oracle = oracles::exhaustive_best_split(x, y, params.min_samples_leaf);
    REQUIRE(oracle.found);
    REQUIRE_FALSE(tree.nodes[0].is_leaf());
    CHECK(tree.nodes[0].feature == oracle.feature);
    CHECK(tree.nodes[0].threshold == doctest::Approx(oracle.threshold).epsilon(1e-12));
  }
}

TEST_CASE("max depth bounds the tree") {
  auto [x, y] = random_dataset(60, 4, 9);
  ForestParams params = exhaustive_params();
  params.max_depth = 3;
  const Tree tree = fit_tree(x, y, params, SplitCriterion::SumSquaredError, 2);
  CHECK(tree.depth() <= 3);
}

TEST_CASE("forest with one tree and bootstrap disabled equals fit_tree") {
  auto [x, y] = random_dataset(30, 3, 13);
  ForestParams params;
  params.n_trees = 1;
  params.bootstrap = false;
  params.seed = 77;
  const Forest forest = fit_forest(x, y, params);
  const Tree tree = fit_tree(x, y, params, SplitCriterion::SumSquaredError, tree_seed(77, 0));
  for (int r = 0; r < 30; ++r) {
    CHECK(forest.predict(x.row(r))[0] == tree.predict(x.row(r))[0]);
  }
}

TEST_CASE("forests are bitwise deterministic per seed") {
  auto [x, y] = random_dataset(40, 4, 17);
  ForestParams params;
  params.seed = 4242;
  const Forest a = fit_forest(x, y, params);
  const Forest b = fit_forest(x, y, params);
  REQUIRE(a.trees.size() == b.trees.size());
  for (size_t t = 0; t < a.trees.size(); ++t) {
    REQUIRE(a.trees[t].nodes.size() == b.trees[t].nodes.size());
    for (size_t n = 0; n < a.trees[t].nodes.size(); ++n) {
      CHECK(a.trees[t].nodes[n].feature == b.trees[t].nodes[n].feature);
      CHECK(a.trees[t].nodes[n].threshold == b.trees[t].nodes[n].threshold);
      CHECK(a.trees[t].nodes[n].value == b.trees[t].nodes[n].value);
    }
  }
}

TEST_CASE("constant-target forests predict the constant") {
  Eigen::MatrixXd x(8, 2);
  for (int r = 0; r < 8; ++r) x.row(r) << r, -r;
  Eigen::MatrixXd y = Eigen::MatrixXd::Constant(8, 1, -1.5);
  ForestParams params;
  params.seed = 3;
  const Forest forest = fit_forest(x, y, params);
  for (const auto& tree : forest.trees) CHECK(tree.nodes.size() == 1);
  CHECK(forest.predict(x.row(4))[0] == -1.5);
}

TEST_CASE("prediction averages the per-tree leaves") {
  Forest forest;
  forest.n_outputs = 1;
  Tree one, three;
  one.nodes.push_back({-1, 0.0, -1, -1, Eigen::VectorXd::Constant(1, 1.0)});
  three.nodes.push_back({-1, 0.0, -1, -1, Eigen::VectorXd::Constant(1, 3.0)});
  forest.trees = {one, three};
  Eigen::VectorXd probe(2);
  probe << 0.0, 0.0;
  CHECK(forest.predict(probe)[0] == 2.0);
}

TEST_CASE("fully grown single tree interpolates unique rows") {
  auto [x, y] = random_dataset(25, 3, 19);
  ForestParams params = exhaustive_params();
  params.features_per_split = 3;
  const Forest forest = fit_forest(x, y, params);
  for (int r = 0; r < 25; ++r) {
    CHECK(forest.predict(x.row(r))[0] == doctest::Approx(y(r, 0)).epsilon(1e-12));
  }
}

TEST_CASE("permuting training rows leaves predictions unchanged") {
  auto [x, y] = random_dataset(30, 3, 23);
  ForestParams params = exhaustive_params();
  params.features_per_split = 3;
  const Tree tree = fit_tree(x, y, params, SplitCriterion::SumSquaredError, 11);

  std::vector<int> perm(30);
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng(9);
  for (int i = 29; i > 0; --i) std::swap(perm[i], perm[rng.next_below(i + 1)]);
  Eigen::MatrixXd xp(30, 3), yp(30, 1);
  for (int r = 0; r < 30; ++r) {
    xp.row(r) = x.row(perm[r]);
    yp.row(r) = y.row(perm[r]);
  }
  const Tree permuted = fit_tree(xp, yp, params, SplitCriterion::SumSquaredError, 11);
  auto [probe, ignored] = random_dataset(20, 3, 29);
  (void)ignored;
  for (int r = 0; r < 20; ++r) {
    CHECK(tree.predict(probe.row(r))[0] ==
          doctest::Approx(permuted.predict(probe.row(r))[0]).epsilon(1e-12));
  }
}

TEST_CASE("each tree improves on the root SSE of its own bootstrap sample") {
  auto [x, y] = random_dataset(50, 4, 31);
  ForestParams params;
  params.seed = 8;
  params.n_trees = 10;
  const Forest forest = fit_forest(x, y, params);
  // Reconstruct each bootstrap sample through the same documented seeding.
  for (int t = 0; t < params.n_trees; ++t) {
    const std::uint64_t boot_seed =
        seed_for(combine_seed(params.seed, static_cast<std::uint64_t>(t)), "bootstrap");
    Rng rng(boot_seed);
    std::vector<int> rows(50);
    for (auto& r : rows) r = static_cast<int>(rng.next_below(50));
    double mean = 0.0;
    for (int r : rows) mean += y(r, 0);
    mean /= rows.size();
    double root_sse = 0.0;
    for (int r : rows) root_sse += (y(r, 0) - mean) * (y(r, 0) - mean);
    CHECK(training_sse(forest.trees[t], x, y, rows) <= root_sse + 1e-9);
  }
}

TEST_CASE("predictions are piecewise constant between thresholds") {
  auto [x, y] = random_dataset(40, 2, 37);
  ForestParams params;
  params.seed = 5;
  const Forest forest = fit_forest(x, y, params);

  // Collect every threshold per feature; nudging a probe by less than the
  // gap to the nearest one must not change the output.
  std::vector<std::vector<double>> thresholds(2);
  for (const auto& tree : forest.trees) {
    for (const auto& node : tree.nodes) {
      if (!node.is_leaf()) thresholds[node.feature].push_back(node.threshold);
    }
  }
  Rng rng(41);
  for (int trial = 0; trial < 30; ++trial) {
    Eigen::VectorXd probe(2);
    probe << rng.uniform(-3.0, 3.0), rng.uniform(-3.0, 3.0);
    double gap = 1e9;
    for (int f = 0; f < 2; ++f) {
      for (double thr : thresholds[f]) gap = std::min(gap, std::abs(probe[f] - thr));
    }
    if (gap < 1e-9) continue;
    const double base = forest.predict(probe)[0];
    for (int f = 0; f < 2; ++f) {
      Eigen::VectorXd nudged = probe;
      nudged[f] += 0.5 * gap;
      CHECK(forest.predict(nudged)[0] == base);
      nudged[f] = probe[f] - 0.5 * gap;
      CHECK(forest.predict(nudged)[0] == base);
    }
  }
}

TEST_CASE("classification forests") {
  SUBCASE("a constant label is always predicted") {
    PhysicsDataset data;
    data.feature_names = physics_feature_names();
    data.features = Eigen::MatrixXd::Random(20, 5);
    for (int r = 0; r < 20; ++r) {
      data.targets.push_back(PhysicsConfig{2, r % 3, r % 2, r % 3});
    }
    ForestParams params;
    params.seed = 10;
    const auto forests = fit_physics_classifier(data, params);
    for (int r = 0; r < 20; ++r) {
      CHECK(predict_physics_config(forests, data.features.row(r)).closure == 2);
    }
  }

  SUBCASE("a separable 1-D two-class problem is learned exactly") {
    Eigen::MatrixXd x(10, 1);
    std::vector<int> labels;
    for (int r = 0; r < 10; ++r) {
      x(r, 0) = r;
      labels.push_back(r < 5 ? 0 : 1);
    }
    ForestParams params = exhaustive_params();
    params.n_trees = 3;
    params.features_per_split = 1;
    const Forest forest = fit_classification_forest(x, labels, 2, params);
    for (int r = 0; r < 10; ++r) {
      CHECK(forest.predict_class(x.row(r)) == labels[r]);
    }
  }

  SUBCASE("a separable two-config physics table is recovered exactly") {
    PhysicsDataset data;
    data.feature_names = physics_feature_names();
    data.features.resize(12, 5);
    data.features.setZero();
    for (int r = 0; r < 12; ++r) {
      data.features(r, 4) = r < 6 ? 0.5 : 3.0;  // two error-norm levels
      data.targets.push_back(r < 6 ? PhysicsConfig{0, 1, 0, 2} : PhysicsConfig{3, 1, 1, 2});
    }
    ForestParams params;
    params.seed = 11;
    params.bootstrap = false;
    const auto forests = fit_physics_classifier(data, params);
    for (int r = 0; r < 12; ++r) {
      CHECK(predict_physics_config(forests, data.features.row(r)) == data.targets[r]);
    }
  }

  SUBCASE("predicted configs stay within the valid option ranges") {
    PhysicsDataset data;
    data.feature_names = physics_feature_names();
    data.features = Eigen::MatrixXd::Random(30, 5);
    Rng rng(12);
    for (int r = 0; r < 30; ++r) {
      data.targets.push_back(PhysicsConfig::from_flat(static_cast<int>(rng.next_below(72))));
    }
    ForestParams params;
    params.seed = 13;
    const auto forests = fit_physics_classifier(data, params);
    for (int trial = 0; trial < 50; ++trial) {
      Eigen::VectorXd probe(5);
      for (int i = 0; i < 5; ++i) probe[i] = rng.uniform(-5.0, 5.0);
      CHECK(predict_physics_config(forests, probe).valid());
    }
  }
}

TEST_CASE("forest JSON round-trip is prediction-identical") {
  auto [x, y] = random_dataset(35, 3, 43);
  ForestParams params;
  params.seed = 21;
  const Forest forest = fit_forest(x, y, params, "schema-abc");
  const Forest reloaded = load_forest(save_forest(forest));
  CHECK(reloaded.schema_fingerprint == "schema-abc");
  CHECK(reloaded.params.n_trees == params.n_trees);
  CHECK(reloaded.criterion == forest.criterion);
  auto [probe, ignored] = random_dataset(20, 3, 47);
  (void)ignored;
  for (int r = 0; r < 20; ++r) {
    CHECK(reloaded.predict(probe.row(r))[0] == forest.predict(probe.row(r))[0]);
  }
  CHECK_THROWS_AS(load_forest("not json"), IoError);
}

TEST_CASE("empty training data is rejected") {
  Eigen::MatrixXd x(0, 3), y(0, 1);
  ForestParams params;
  CHECK_THROWS_AS(fit_forest(x, y, params), std::invalid_argument);
  CHECK_THROWS_AS(fit_tree(x, y, params, SplitCriterion::SumSquaredError, 1),
                  std::invalid_argument);
}
