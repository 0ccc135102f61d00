#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "twinlearn/surrogate.hpp"

namespace twinlearn {

enum class ObsKind : int { SubsetLinear = 0, QoiDiagnostic = 1 };

// Maps a state vector onto observation space: either a plain component
// subset or the nonnegative diagnostic at a component subset. Also provides
// the linearization H_t = h'(x) at a given point (for the diagnostic the
// derivative is the indicator of x_k > 0, taken as 0 at x_k == 0).
struct ObservationOperator {
  ObsKind kind = ObsKind::SubsetLinear;
  std::vector<int> indices;  // unique, each in [0, state_dim)
  int state_dim = 0;

  int observed_count() const { return static_cast<int>(indices.size()); }
  void validate() const;

  Eigen::VectorXd apply(const Eigen::VectorXd& state) const;
  Eigen::MatrixXd jacobian(const Eigen::VectorXd& state) const;

  static ObservationOperator all_points(ObsKind kind, int state_dim);
};

struct Observation {
  Eigen::VectorXd values;
  double time = 0.0;
  Eigen::VectorXd noise_cov;  // diagonal, length m, entries >= 0
};

// Model error in observation space: predicted observations minus measured.
struct Discrepancy {
  Eigen::VectorXd values;
  double time = 0.0;
};

// Structural error estimate in model space.
struct ModelSpaceError {
  Eigen::VectorXd values;
  double time = 0.0;
};

// y = h(truth) + eps, eps per-component Gaussian with the given diagonal
// covariance. Deterministic for a fixed seed.
Observation observe_truth(const TruthState& truth, const ObservationOperator& op,
                          const Eigen::VectorXd& noise_cov, std::uint64_t seed);

// o = H(x).
Eigen::VectorXd observe_model(const ModelState& state, const ObservationOperator& op);

Discrepancy discrepancy(const Eigen::VectorXd& predicted, const Observation& measured);

// Least-squares reconstruction of the model-space error from an
// observation-space discrepancy: minimum-norm solution of H d = delta for
// wide H, normal-equations solution for tall/square H. Throws NumericalError
// when the Gram matrix is numerically singular (condition > 1e12).
ModelSpaceError project_to_model_space(const Discrepancy& delta, const Eigen::MatrixXd& H);

// Kalman-style estimate d = cov_xo (cov_oo + R)^-1 delta via an SPD solve.
ModelSpaceError kalman_map(const Discrepancy& delta, const Eigen::MatrixXd& cov_xo,
                           const Eigen::MatrixXd& cov_oo, const Eigen::MatrixXd& R);

// x + d, time unchanged.
ModelState correct_forecast(const ModelState& state, const ModelSpaceError& delta);

// Sample cross- and observation-covariances from paired ensembles (columns =
// members), as an ensemble DA system would supply them to kalman_map.
void ensemble_covariances(const Eigen::MatrixXd& states, const Eigen::MatrixXd& observations,
                          Eigen::MatrixXd& cov_xo, Eigen::MatrixXd& cov_oo);

}  // namespace twinlearn
