#include "twinlearn/network.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "twinlearn/common.hpp"
#include "twinlearn/rng.hpp"

namespace twinlearn {

void NetworkArch::validate() const {
  if (layer_sizes.size() < 3) {
    throw std::invalid_argument("network arch: need input, >=1 hidden, and output layer");
  }
  for (int s : layer_sizes) {
    if (s < 1) throw std::invalid_argument("network arch: layer sizes must be >= 1");
  }
}

void TrainHyper::validate() const {
  if (!(learning_rate >= 0.0)) throw std::invalid_argument("train: learning_rate must be >= 0");
  if (epochs < 1) throw std::invalid_argument("train: epochs must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("train: batch_size must be >= 1");
  if (!(init_scale > 0.0)) throw std::invalid_argument("train: init_scale must be > 0");
}

namespace {

Eigen::MatrixXd standardized(const Network& net, const Eigen::MatrixXd& inputs) {
  if (net.input_mean.size() == 0) return inputs;
  if (inputs.rows() != net.input_mean.size()) {
    throw std::invalid_argument("network: input dimension does not match stored statistics");
  }
  return (inputs.colwise() - net.input_mean).array().colwise() / net.input_scale.array();
}

void check_shapes(const Network& net, const Eigen::MatrixXd& inputs,
                  const Eigen::MatrixXd& targets) {
  if (inputs.rows() != net.arch.inputs() || targets.rows() != net.arch.outputs() ||
      inputs.cols() != targets.cols()) {
    throw std::invalid_argument("network: batch shape mismatch");
  }
  if (inputs.cols() == 0) throw std::invalid_argument("network: empty batch");
}

// Forward pass keeping activations; activations[0] is the (standardized)
// input, activations.back() the linear output.
std::vector<Eigen::MatrixXd> forward_trace(const Network& net, const Eigen::MatrixXd& inputs) {
  const size_t n_layers = net.weights.size();
  std::vector<Eigen::MatrixXd> activations(n_layers + 1);
  activations[0] = standardized(net, inputs);
  for (size_t l = 0; l < n_layers; ++l) {
    Eigen::MatrixXd z = (net.weights[l] * activations[l]).colwise() + net.biases[l];
    activations[l + 1] = l + 1 < n_layers ? z.array().tanh().matrix() : std::move(z);
  }
  return activations;
}

}  // namespace

Eigen::VectorXd Network::forward(const Eigen::VectorXd& x) const {
  return forward_batch(x).col(0);
}

Eigen::MatrixXd Network::forward_batch(const Eigen::MatrixXd& inputs) const {
  if (inputs.rows() != arch.inputs()) {
    throw std::invalid_argument("network forward: input dimension mismatch");
  }
  Eigen::MatrixXd a = standardized(*this, inputs);
  for (size_t l = 0; l < weights.size(); ++l) {
    Eigen::MatrixXd z = (weights[l] * a).colwise() + biases[l];
    a = l + 1 < weights.size() ? z.array().tanh().matrix() : std::move(z);
  }
  return a;
}

Eigen::Index Network::parameter_count() const {
  Eigen::Index n = 0;
  for (size_t l = 0; l < weights.size(); ++l) n += weights[l].size() + biases[l].size();
  return n;
}

Network init_network(const NetworkArch& arch, std::uint64_t seed, double init_scale) {
  arch.validate();
  if (!(init_scale > 0.0)) throw std::invalid_argument("init_network: init_scale must be > 0");
  Network net;
  net.arch = arch;
  net.init_seed = seed;
  Rng rng(combine_seed(seed, 0x2e7ULL));
  const size_t n_layers = arch.layer_sizes.size() - 1;
  net.weights.resize(n_layers);
  net.biases.resize(n_layers);
  for (size_t l = 0; l < n_layers; ++l) {
    const int fan_in = arch.layer_sizes[l];
    const int fan_out = arch.layer_sizes[l + 1];
    const double s = init_scale / std::sqrt(static_cast<double>(fan_in));
    net.weights[l].resize(fan_out, fan_in);
    for (int r = 0; r < fan_out; ++r) {
      for (int c = 0; c < fan_in; ++c) net.weights[l](r, c) = rng.uniform(-s, s);
    }
    net.biases[l] = Eigen::VectorXd::Zero(fan_out);
  }
  return net;
}

double mse_loss(const Network& net, const Eigen::MatrixXd& inputs,
                const Eigen::MatrixXd& targets) {
  check_shapes(net, inputs, targets);
  return (net.forward_batch(inputs) - targets).squaredNorm() /
         static_cast<double>(inputs.cols());
}

Gradients gradient(const Network& net, const Eigen::MatrixXd& inputs,
                   const Eigen::MatrixXd& targets) {
  check_shapes(net, inputs, targets);
  const size_t n_layers = net.weights.size();
  const auto activations = forward_trace(net, inputs);

  Gradients grads;
  grads.weights.resize(n_layers);
  grads.biases.resize(n_layers);

  // d(loss)/d(output) for loss = sum of squared errors / batch size.
  Eigen::MatrixXd delta =
      2.0 / static_cast<double>(inputs.cols()) * (activations[n_layers] - targets);
  for (size_t l = n_layers; l-- > 0;) {
    grads.weights[l] = delta * activations[l].transpose();
    grads.biases[l] = delta.rowwise().sum();
    if (l > 0) {
      delta = (net.weights[l].transpose() * delta).array() *
              (1.0 - activations[l].array().square());
    }
  }
  return grads;
}

TrainResult train(const Network& net, const Eigen::MatrixXd& inputs,
                  const Eigen::MatrixXd& targets, const TrainHyper& hyper,
                  bool standardize_inputs) {
  hyper.validate();
  check_shapes(net, inputs, targets);

  TrainResult result;
  result.network = net;
  Network& model = result.network;
  model.train_seed = hyper.seed;

  if (standardize_inputs) {
    model.input_mean = inputs.rowwise().mean();
    Eigen::VectorXd var = (inputs.colwise() - model.input_mean).array().square().rowwise().sum() /
                          static_cast<double>(inputs.cols());
    model.input_scale = var.array().sqrt();
    // Constant features pass through unscaled. The threshold is relative to
    // the mean: a bitwise-constant column can still show ~1e-15 of variance
    // from summation rounding, and dividing by that would saturate tanh.
    for (Eigen::Index i = 0; i < model.input_scale.size(); ++i) {
      if (model.input_scale[i] <= 1e-9 * std::max(1.0, std::abs(model.input_mean[i]))) {
        model.input_scale[i] = 1.0;
      }
    }
  }

  const Eigen::Index n = inputs.cols();
  std::vector<int> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed_for(hyper.seed, "epoch-shuffle"));

  result.loss_trace.reserve(hyper.epochs);
  Eigen::MatrixXd batch_x, batch_y;
  for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
    for (Eigen::Index i = n - 1; i > 0; --i) {
      std::swap(order[i], order[rng.next_below(static_cast<std::uint64_t>(i) + 1)]);
    }
    for (Eigen::Index start = 0; start < n; start += hyper.batch_size) {
      const Eigen::Index count = std::min<Eigen::Index>(hyper.batch_size, n - start);
      batch_x.resize(inputs.rows(), count);
      batch_y.resize(targets.rows(), count);
      for (Eigen::Index i = 0; i < count; ++i) {
        batch_x.col(i) = inputs.col(order[start + i]);
        batch_y.col(i) = targets.col(order[start + i]);
      }
      const Gradients grads = gradient(model, batch_x, batch_y);
      for (size_t l = 0; l < model.weights.size(); ++l) {
        model.weights[l] -= hyper.learning_rate * grads.weights[l];
        model.biases[l] -= hyper.learning_rate * grads.biases[l];
      }
    }
    const double loss = mse_loss(model, inputs, targets);
    result.loss_trace.push_back(loss);
    if (!std::isfinite(loss) || loss > 1e6) {
      throw NumericalError("train: loss diverged at epoch " + std::to_string(epoch) +
                           " (loss = " + format_double(loss) + ")");
    }
  }
  return result;
}

namespace {

std::vector<double> flatten(const Eigen::MatrixXd& m) {
  std::vector<double> out;
  out.reserve(m.size());
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) out.push_back(m(r, c));
  }
  return out;
}

}  // namespace

std::string save_network(const Network& net) {
  nlohmann::json j;
  j["arch"] = net.arch.layer_sizes;
  j["init_seed"] = net.init_seed;
  j["train_seed"] = net.train_seed;
  nlohmann::json weights = nlohmann::json::array();
  nlohmann::json biases = nlohmann::json::array();
  for (size_t l = 0; l < net.weights.size(); ++l) {
    weights.push_back(flatten(net.weights[l]));  // row-major
    biases.push_back(std::vector<double>(net.biases[l].data(),
                                         net.biases[l].data() + net.biases[l].size()));
  }
  j["weights"] = std::move(weights);
  j["biases"] = std::move(biases);
  j["input_mean"] =
      std::vector<double>(net.input_mean.data(), net.input_mean.data() + net.input_mean.size());
  j["input_scale"] = std::vector<double>(net.input_scale.data(),
                                         net.input_scale.data() + net.input_scale.size());
  return j.dump(2);
}

Network load_network(const std::string& json_text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("load_network: invalid JSON: ") + e.what());
  }
  Network net;
  try {
    net.arch.layer_sizes = j.at("arch").get<std::vector<int>>();
    net.arch.validate();
    net.init_seed = j.at("init_seed").get<std::uint64_t>();
    net.train_seed = j.at("train_seed").get<std::uint64_t>();
    const auto weights = j.at("weights").get<std::vector<std::vector<double>>>();
    const auto biases = j.at("biases").get<std::vector<std::vector<double>>>();
    const size_t n_layers = net.arch.layer_sizes.size() - 1;
    if (weights.size() != n_layers || biases.size() != n_layers) {
      throw IoError("load_network: layer count mismatch");
    }
    net.weights.resize(n_layers);
    net.biases.resize(n_layers);
    for (size_t l = 0; l < n_layers; ++l) {
      const int rows = net.arch.layer_sizes[l + 1];
      const int cols = net.arch.layer_sizes[l];
      if (weights[l].size() != static_cast<size_t>(rows) * cols ||
          biases[l].size() != static_cast<size_t>(rows)) {
        throw IoError("load_network: parameter shape mismatch");
      }
      net.weights[l].resize(rows, cols);
      for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) net.weights[l](r, c) = weights[l][r * cols + c];
      }
      net.biases[l] = Eigen::Map<const Eigen::VectorXd>(biases[l].data(), rows);
    }
    const auto mean = j.at("input_mean").get<std::vector<double>>();
    const auto scale = j.at("input_scale").get<std::vector<double>>();
    net.input_mean = Eigen::Map<const Eigen::VectorXd>(mean.data(), mean.size());
    net.input_scale = Eigen::Map<const Eigen::VectorXd>(scale.data(), scale.size());
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("load_network: malformed model: ") + e.what());
  }
  return net;
}

}  // namespace twinlearn
