#pragma once

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "twinlearn/dataset.hpp"

namespace twinlearn {

struct ForestParams {
  int n_trees = 10;
  int max_depth = 12;          // <= 0 means unlimited
  int min_samples_leaf = 2;
  int features_per_split = 0;  // 0 resolves to ceil(sqrt(n_features)) at fit time
  std::uint64_t seed = 0;
  bool bootstrap = true;       // test hook: false trains every tree on the full data
};

enum class SplitCriterion : int { SumSquaredError = 0, Gini = 1 };

// CART tree stored as a node arena; nodes[0] is the root. Internal nodes
// send a sample left iff x[feature] <= threshold. Leaves hold the mean
// target (regression) or per-class sample counts (classification).
struct Tree {
  struct Node {
    int feature = -1;  // -1 marks a leaf
    double threshold = 0.0;
    int left = -1;
    int right = -1;
    Eigen::VectorXd value;
    bool is_leaf() const { return feature < 0; }
  };
  std::vector<Node> nodes;

  const Node& leaf_for(const Eigen::VectorXd& x) const;
  Eigen::VectorXd predict(const Eigen::VectorXd& x) const;
  int depth() const;
};

struct Forest {
  std::vector<Tree> trees;
  ForestParams params;
  SplitCriterion criterion = SplitCriterion::SumSquaredError;
  int n_outputs = 0;
  std::string schema_fingerprint;

  // Regression: mean of per-tree leaf values.
  Eigen::VectorXd predict(const Eigen::VectorXd& x) const;
  // Classification: majority vote over per-tree argmax, lowest class on ties.
  int predict_class(const Eigen::VectorXd& x) const;
};

// Greedy top-down CART fit on all rows of (features, targets). At each node
// features_per_split distinct candidate features are drawn from the seeded
// stream; every midpoint between consecutive distinct sorted values is
// scored; ties break to the lowest feature index, then lowest threshold.
Tree fit_tree(const Eigen::MatrixXd& features, const Eigen::MatrixXd& targets,
              const ForestParams& params, SplitCriterion criterion, std::uint64_t rng_seed);

// Seed each tree of a forest draws its bootstrap sample and split features
// from; exposed so tests can reproduce single trees.
std::uint64_t tree_seed(std::uint64_t forest_seed, int tree_index);

Forest fit_forest(const Eigen::MatrixXd& features, const Eigen::MatrixXd& targets,
                  const ForestParams& params, const std::string& schema_fingerprint = {});
Forest fit_forest(const ErrorDataset& data, const ForestParams& params);

// Gini-criterion forest over integer labels in [0, n_classes).
Forest fit_classification_forest(const Eigen::MatrixXd& features,
                                 const std::vector<int>& labels, int n_classes,
                                 const ForestParams& params,
                                 const std::string& schema_fingerprint = {});

// One forest per physics package, regressing the option index; predictions
// decode by rounding to the nearest valid option. Regression keeps the
// prediction field near the label mean where the statistics carry no signal
// for a package, so only genuinely sensitive packages respond to input
// changes.
std::array<Forest, 4> fit_physics_classifier(const PhysicsDataset& data,
                                             const ForestParams& params);
int decode_option(double predicted, int n_options);
PhysicsConfig predict_physics_config(const std::array<Forest, 4>& forests,
                                     const Eigen::VectorXd& features);

// JSON round-trip; reloaded forests predict identically.
std::string save_forest(const Forest& forest);
Forest load_forest(const std::string& json_text);

}  // namespace twinlearn
