#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

namespace twinlearn {

// Feed-forward net: tanh hidden layers, linear output.
struct NetworkArch {
  std::vector<int> layer_sizes;  // [n_in, h_1, ..., h_L, n_out], L >= 1

  void validate() const;
  int inputs() const { return layer_sizes.front(); }
  int outputs() const { return layer_sizes.back(); }
};

struct TrainHyper {
  double learning_rate = 0.01;
  int epochs = 300;
  int batch_size = 32;
  std::uint64_t seed = 0;
  double init_scale = 1.0;

  void validate() const;
};

struct Network {
  NetworkArch arch;
  std::vector<Eigen::MatrixXd> weights;  // weights[l] is (size[l+1] x size[l])
  std::vector<Eigen::VectorXd> biases;
  // Input standardization from training-set statistics; empty means identity.
  Eigen::VectorXd input_mean;
  Eigen::VectorXd input_scale;
  std::uint64_t init_seed = 0;
  std::uint64_t train_seed = 0;

  Eigen::VectorXd forward(const Eigen::VectorXd& x) const;
  Eigen::MatrixXd forward_batch(const Eigen::MatrixXd& inputs) const;  // columns = samples
  Eigen::Index parameter_count() const;
};

// Weights uniform in [-s, s] with s = init_scale / sqrt(fan_in); biases zero.
Network init_network(const NetworkArch& arch, std::uint64_t seed, double init_scale = 1.0);

struct Gradients {
  std::vector<Eigen::MatrixXd> weights;
  std::vector<Eigen::VectorXd> biases;
};

// Loss: mean over samples of the squared error summed over outputs.
double mse_loss(const Network& net, const Eigen::MatrixXd& inputs,
                const Eigen::MatrixXd& targets);

// Exact backprop gradient of mse_loss. Columns are samples.
Gradients gradient(const Network& net, const Eigen::MatrixXd& inputs,
                   const Eigen::MatrixXd& targets);

struct TrainResult {
  Network network;
  std::vector<double> loss_trace;  // full-data loss after each epoch
};

// Seeded mini-batch gradient descent. Aborts with NumericalError if the loss
// exceeds 1e6 or stops being finite.
TrainResult train(const Network& net, const Eigen::MatrixXd& inputs,
                  const Eigen::MatrixXd& targets, const TrainHyper& hyper,
                  bool standardize_inputs = true);

// JSON round-trip preserving forward outputs bitwise.
std::string save_network(const Network& net);
Network load_network(const std::string& json_text);

}  // namespace twinlearn
