#include "twinlearn/forest.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "twinlearn/common.hpp"
#include "twinlearn/rng.hpp"

namespace twinlearn {

namespace {

// Split-cost accumulators. Both expose the same interface so the scan over
// candidate thresholds is shared between regression and classification.

struct RegressionStats {
  Eigen::Index n = 0;
  Eigen::VectorXd sum;
  double sum_sq = 0.0;  // total squared norm over all target dims

  explicit RegressionStats(Eigen::Index dims) : sum(Eigen::VectorXd::Zero(dims)) {}
  void add(const Eigen::MatrixXd& targets, int row) {
    ++n;
    sum += targets.row(row).transpose();
    sum_sq += targets.row(row).squaredNorm();
  }
  void remove(const Eigen::MatrixXd& targets, int row) {
    --n;
    sum -= targets.row(row).transpose();
    sum_sq -= targets.row(row).squaredNorm();
  }
  // Sum of squared errors around the node mean.
  double cost() const {
    if (n == 0) return 0.0;
    return sum_sq - sum.squaredNorm() / static_cast<double>(n);
  }
  bool pure() const { return cost() <= 1e-24 * std::max(1.0, sum_sq); }
  Eigen::VectorXd leaf_value() const { return sum / static_cast<double>(n); }
};

struct GiniStats {
  Eigen::Index n = 0;
  Eigen::VectorXd counts;

  explicit GiniStats(Eigen::Index n_classes) : counts(Eigen::VectorXd::Zero(n_classes)) {}
  void add(const Eigen::MatrixXd& targets, int row) {
    ++n;
    counts[static_cast<int>(targets(row, 0))] += 1.0;
  }
  void remove(const Eigen::MatrixXd& targets, int row) {
    --n;
    counts[static_cast<int>(targets(row, 0))] -= 1.0;
  }
  // n * gini impurity, so child costs are additive like SSE.
  double cost() const {
    if (n == 0) return 0.0;
    return static_cast<double>(n) - counts.squaredNorm() / static_cast<double>(n);
  }
  bool pure() const { return (counts.array() > 0.0).count() <= 1; }
  Eigen::VectorXd leaf_value() const { return counts; }
};

struct BestSplit {
  int feature = -1;
  double threshold = 0.0;
  double score = 0.0;
  bool found = false;
};

template <class Stats>
class TreeBuilder {
 public:
  TreeBuilder(const Eigen::MatrixXd& features, const Eigen::MatrixXd& targets,
              const ForestParams& params, std::uint64_t seed, Stats prototype)
      : x_(features), y_(targets), params_(params), rng_(seed), prototype_(prototype) {
    n_candidates_ = params.features_per_split > 0
                        ? params.features_per_split
                        : static_cast<int>(std::ceil(std::sqrt(static_cast<double>(x_.cols()))));
    n_candidates_ = std::min<int>(n_candidates_, static_cast<int>(x_.cols()));
    if (n_candidates_ < 1) throw std::invalid_argument("fit_tree: features_per_split < 1");
    scratch_features_.resize(x_.cols());
    std::iota(scratch_features_.begin(), scratch_features_.end(), 0);
  }

  Tree build(std::vector<int> rows) {
    Tree tree;
    build_node(tree, std::move(rows), 0);
    return tree;
  }

 private:
  int build_node(Tree& tree, std::vector<int> rows, int depth) {
    Stats stats = prototype_;
    for (int r : rows) stats.add(y_, r);

    const int node_index = static_cast<int>(tree.nodes.size());
    tree.nodes.emplace_back();

    const bool depth_stop = params_.max_depth > 0 && depth >= params_.max_depth;
    const bool size_stop = static_cast<Eigen::Index>(rows.size()) < 2 * params_.min_samples_leaf;
    BestSplit best;
    if (!depth_stop && !size_stop && !stats.pure()) best = find_split(rows, stats);

    if (!best.found) {
      tree.nodes[node_index].value = stats.leaf_value();
      return node_index;
    }

    std::vector<int> left_rows, right_rows;
    left_rows.reserve(rows.size());
    right_rows.reserve(rows.size());
    for (int r : rows) {
      (x_(r, best.feature) <= best.threshold ? left_rows : right_rows).push_back(r);
    }
    rows.clear();
    rows.shrink_to_fit();

    tree.nodes[node_index].feature = best.feature;
    tree.nodes[node_index].threshold = best.threshold;
    const int left = build_node(tree, std::move(left_rows), depth + 1);
    tree.nodes[node_index].left = left;
    const int right = build_node(tree, std::move(right_rows), depth + 1);
    tree.nodes[node_index].right = right;
    return node_index;
  }

  BestSplit find_split(const std::vector<int>& rows, const Stats& node_stats) {
    // Partial Fisher-Yates, then ascending order so equal scores resolve to
    // the lowest feature index.
    for (int i = 0; i < n_candidates_; ++i) {
      const auto j = i + rng_.next_below(scratch_features_.size() - i);
      std::swap(scratch_features_[i], scratch_features_[j]);
    }
    std::vector<int> candidates(scratch_features_.begin(),
                                scratch_features_.begin() + n_candidates_);
    std::sort(candidates.begin(), candidates.end());

    BestSplit best;
    std::vector<std::pair<double, int>> order(rows.size());
    for (int f : candidates) {
      for (size_t i = 0; i < rows.size(); ++i) order[i] = {x_(rows[i], f), rows[i]};
      std::sort(order.begin(), order.end());

      Stats left = prototype_;
      Stats right = node_stats;
      const Eigen::Index n = static_cast<Eigen::Index>(order.size());
      for (Eigen::Index i = 0; i + 1 < n; ++i) {
        left.add(y_, order[i].second);
        right.remove(y_, order[i].second);
        if (order[i].first == order[i + 1].first) continue;
        if (left.n < params_.min_samples_leaf || right.n < params_.min_samples_leaf) continue;
        const double score = left.cost() + right.cost();
        const double threshold = 0.5 * (order[i].first + order[i + 1].first);
        if (!best.found || score < best.score) {
          best = {f, threshold, score, true};
        }
      }
    }
    return best;
  }

  const Eigen::MatrixXd& x_;
  const Eigen::MatrixXd& y_;
  const ForestParams& params_;
  Rng rng_;
  Stats prototype_;
  int n_candidates_ = 0;
  std::vector<int> scratch_features_;
};

std::vector<int> all_rows(Eigen::Index n) {
  std::vector<int> rows(static_cast<size_t>(n));
  std::iota(rows.begin(), rows.end(), 0);
  return rows;
}

std::vector<int> bootstrap_rows(Eigen::Index n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<int> rows(static_cast<size_t>(n));
  for (auto& r : rows) r = static_cast<int>(rng.next_below(static_cast<std::uint64_t>(n)));
  return rows;
}

void check_training_data(const Eigen::MatrixXd& features, const Eigen::MatrixXd& targets,
                         const ForestParams& params) {
  if (features.rows() == 0) throw std::invalid_argument("forest fit: empty training data");
  if (features.rows() != targets.rows()) {
    throw std::invalid_argument("forest fit: feature/target row mismatch");
  }
  if (!targets.allFinite() || !features.allFinite()) {
    throw std::invalid_argument("forest fit: non-finite training data");
  }
  if (params.n_trees < 1) throw std::invalid_argument("forest fit: n_trees must be >= 1");
  if (params.min_samples_leaf < 1) {
    throw std::invalid_argument("forest fit: min_samples_leaf must be >= 1");
  }
  if (params.features_per_split > features.cols()) {
    throw std::invalid_argument("forest fit: features_per_split exceeds feature count");
  }
}

}  // namespace

const Tree::Node& Tree::leaf_for(const Eigen::VectorXd& x) const {
  int i = 0;
  while (!nodes[i].is_leaf()) {
    i = x[nodes[i].feature] <= nodes[i].threshold ? nodes[i].left : nodes[i].right;
  }
  return nodes[i];
}

Eigen::VectorXd Tree::predict(const Eigen::VectorXd& x) const {
  return leaf_for(x).value;
}

int Tree::depth() const {
  // Arena is preorder; recompute by walking.
  struct Walker {
    const std::vector<Node>& nodes;
    int walk(int i) const {
      if (nodes[i].is_leaf()) return 0;
      return 1 + std::max(walk(nodes[i].left), walk(nodes[i].right));
    }
  };
  return Walker{nodes}.walk(0);
}

Eigen::VectorXd Forest::predict(const Eigen::VectorXd& x) const {
  Eigen::VectorXd acc = Eigen::VectorXd::Zero(n_outputs);
  for (const auto& tree : trees) acc += tree.predict(x);
  return acc / static_cast<double>(trees.size());
}

int Forest::predict_class(const Eigen::VectorXd& x) const {
  Eigen::VectorXi votes = Eigen::VectorXi::Zero(n_outputs);
  for (const auto& tree : trees) {
    const Eigen::VectorXd counts = tree.predict(x);
    int cls = 0;
    counts.maxCoeff(&cls);  // Eigen returns the first (lowest) max index
    votes[cls] += 1;
  }
  int winner = 0;
  votes.maxCoeff(&winner);
  return winner;
}

Tree fit_tree(const Eigen::MatrixXd& features, const Eigen::MatrixXd& targets,
              const ForestParams& params, SplitCriterion criterion, std::uint64_t rng_seed) {
  check_training_data(features, targets, params);
  if (criterion == SplitCriterion::Gini) {
    const int n_classes = static_cast<int>(targets.col(0).maxCoeff()) + 1;
    TreeBuilder<GiniStats> builder(features, targets, params, rng_seed, GiniStats(n_classes));
    return builder.build(all_rows(features.rows()));
  }
  TreeBuilder<RegressionStats> builder(features, targets, params, rng_seed,
                                       RegressionStats(targets.cols()));
  return builder.build(all_rows(features.rows()));
}

std::uint64_t tree_seed(std::uint64_t forest_seed, int tree_index) {
  return seed_for(combine_seed(forest_seed, static_cast<std::uint64_t>(tree_index)), "tree");
}

namespace {

std::uint64_t bootstrap_seed(std::uint64_t forest_seed, int tree_index) {
  return seed_for(combine_seed(forest_seed, static_cast<std::uint64_t>(tree_index)), "bootstrap");
}

template <class Stats>
Forest fit_forest_impl(const Eigen::MatrixXd& features, const Eigen::MatrixXd& targets,
                       const ForestParams& params, SplitCriterion criterion, int n_outputs,
                       const std::string& fingerprint, Stats prototype) {
  Forest forest;
  forest.params = params;
  forest.criterion = criterion;
  forest.n_outputs = n_outputs;
  forest.schema_fingerprint = fingerprint;
  forest.trees.reserve(params.n_trees);
  for (int t = 0; t < params.n_trees; ++t) {
    std::vector<int> rows = params.bootstrap
                                ? bootstrap_rows(features.rows(), bootstrap_seed(params.seed, t))
                                : all_rows(features.rows());
    TreeBuilder<Stats> builder(features, targets, params, tree_seed(params.seed, t), prototype);
    forest.trees.push_back(builder.build(std::move(rows)));
  }
  return forest;
}

}  // namespace

Forest fit_forest(const Eigen::MatrixXd& features, const Eigen::MatrixXd& targets,
                  const ForestParams& params, const std::string& schema_fingerprint) {
  check_training_data(features, targets, params);
  return fit_forest_impl(features, targets, params, SplitCriterion::SumSquaredError,
                         static_cast<int>(targets.cols()), schema_fingerprint,
                         RegressionStats(targets.cols()));
}

Forest fit_forest(const ErrorDataset& data, const ForestParams& params) {
  return fit_forest(data.features, data.targets, params, data.schema_fingerprint());
}

Forest fit_classification_forest(const Eigen::MatrixXd& features, const std::vector<int>& labels,
                                 int n_classes, const ForestParams& params,
                                 const std::string& schema_fingerprint) {
  if (labels.size() != static_cast<size_t>(features.rows())) {
    throw std::invalid_argument("fit_classification_forest: label count mismatch");
  }
  Eigen::MatrixXd targets(features.rows(), 1);
  for (Eigen::Index r = 0; r < features.rows(); ++r) {
    if (labels[r] < 0 || labels[r] >= n_classes) {
      throw std::invalid_argument("fit_classification_forest: label out of range");
    }
    targets(r, 0) = labels[r];
  }
  check_training_data(features, targets, params);
  return fit_forest_impl(features, targets, params, SplitCriterion::Gini, n_classes,
                         schema_fingerprint, GiniStats(n_classes));
}

std::array<Forest, 4> fit_physics_classifier(const PhysicsDataset& data,
                                             const ForestParams& params) {
  std::array<Forest, 4> forests;
  for (int pkg = 0; pkg < 4; ++pkg) {
    Eigen::MatrixXd targets(data.rows(), 1);
    for (Eigen::Index r = 0; r < data.rows(); ++r) {
      targets(r, 0) = data.targets[r].option(pkg);
    }
    ForestParams pkg_params = params;
    pkg_params.seed = seed_for(params.seed, std::string("physics-") +
                                                PhysicsConfig::kPackageNames[pkg]);
    forests[pkg] = fit_forest(data.features, targets, pkg_params);
  }
  return forests;
}

int decode_option(double predicted, int n_options) {
  if (!std::isfinite(predicted)) {
    throw NumericalError("decode_option: non-finite prediction");
  }
  const int rounded = static_cast<int>(std::lround(predicted));
  return std::min(n_options - 1, std::max(0, rounded));
}

PhysicsConfig predict_physics_config(const std::array<Forest, 4>& forests,
                                     const Eigen::VectorXd& features) {
  PhysicsConfig c;
  c.closure = decode_option(forests[0].predict(features)[0], PhysicsConfig::kOptionCounts[0]);
  c.forcing = decode_option(forests[1].predict(features)[0], PhysicsConfig::kOptionCounts[1]);
  c.dissipation =
      decode_option(forests[2].predict(features)[0], PhysicsConfig::kOptionCounts[2]);
  c.integrator =
      decode_option(forests[3].predict(features)[0], PhysicsConfig::kOptionCounts[3]);
  return c;
}

namespace {

nlohmann::json node_to_json(const Tree& tree, int index) {
  const Tree::Node& node = tree.nodes[index];
  nlohmann::json j;
  if (node.is_leaf()) {
    j["value"] = std::vector<double>(node.value.data(), node.value.data() + node.value.size());
  } else {
    j["feature"] = node.feature;
    j["threshold"] = node.threshold;
    j["left"] = node_to_json(tree, node.left);
    j["right"] = node_to_json(tree, node.right);
  }
  return j;
}

int node_from_json(const nlohmann::json& j, Tree& tree) {
  const int index = static_cast<int>(tree.nodes.size());
  tree.nodes.emplace_back();
  if (j.contains("value")) {
    const auto vals = j.at("value").get<std::vector<double>>();
    tree.nodes[index].value = Eigen::Map<const Eigen::VectorXd>(vals.data(), vals.size());
  } else {
    tree.nodes[index].feature = j.at("feature").get<int>();
    tree.nodes[index].threshold = j.at("threshold").get<double>();
    const int left = node_from_json(j.at("left"), tree);
    tree.nodes[index].left = left;
    const int right = node_from_json(j.at("right"), tree);
    tree.nodes[index].right = right;
  }
  return index;
}

}  // namespace

std::string save_forest(const Forest& forest) {
  nlohmann::json j;
  j["params"] = {{"n_trees", forest.params.n_trees},
                 {"max_depth", forest.params.max_depth},
                 {"min_samples_leaf", forest.params.min_samples_leaf},
                 {"features_per_split", forest.params.features_per_split},
                 {"seed", forest.params.seed},
                 {"bootstrap", forest.params.bootstrap}};
  j["criterion"] = forest.criterion == SplitCriterion::Gini ? "gini" : "sse";
  j["n_outputs"] = forest.n_outputs;
  j["schema_fingerprint"] = forest.schema_fingerprint;
  nlohmann::json trees = nlohmann::json::array();
  for (const auto& tree : forest.trees) trees.push_back(node_to_json(tree, 0));
  j["trees"] = std::move(trees);
  return j.dump(2);
}

Forest load_forest(const std::string& json_text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("load_forest: invalid JSON: ") + e.what());
  }
  Forest forest;
  try {
    const auto& p = j.at("params");
    forest.params.n_trees = p.at("n_trees").get<int>();
    forest.params.max_depth = p.at("max_depth").get<int>();
    forest.params.min_samples_leaf = p.at("min_samples_leaf").get<int>();
    forest.params.features_per_split = p.at("features_per_split").get<int>();
    forest.params.seed = p.at("seed").get<std::uint64_t>();
    forest.params.bootstrap = p.at("bootstrap").get<bool>();
    forest.criterion = j.at("criterion").get<std::string>() == "gini"
                           ? SplitCriterion::Gini
                           : SplitCriterion::SumSquaredError;
    forest.n_outputs = j.at("n_outputs").get<int>();
    forest.schema_fingerprint = j.at("schema_fingerprint").get<std::string>();
    for (const auto& t : j.at("trees")) {
      Tree tree;
      node_from_json(t, tree);
      forest.trees.push_back(std::move(tree));
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("load_forest: malformed model: ") + e.what());
  }
  return forest;
}

}  // namespace twinlearn
