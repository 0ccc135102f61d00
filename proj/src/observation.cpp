#include "twinlearn/observation.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_set>

#include "twinlearn/common.hpp"
#include "twinlearn/rng.hpp"

namespace twinlearn {

void ObservationOperator::validate() const {
  if (state_dim <= 0) throw std::invalid_argument("observation operator: state_dim must be > 0");
  if (indices.empty()) throw std::invalid_argument("observation operator: no observed indices");
  if (indices.size() > static_cast<size_t>(state_dim)) {
    throw std::invalid_argument("observation operator: more indices than state components");
  }
  std::unordered_set<int> seen;
  for (int i : indices) {
    if (i < 0 || i >= state_dim) {
      throw std::invalid_argument("observation operator: index " + std::to_string(i) +
                                  " out of range");
    }
    if (!seen.insert(i).second) {
      throw std::invalid_argument("observation operator: duplicate index " + std::to_string(i));
    }
  }
}

Eigen::VectorXd ObservationOperator::apply(const Eigen::VectorXd& state) const {
  if (state.size() != state_dim) {
    throw std::invalid_argument("observation operator: state dimension mismatch");
  }
  Eigen::VectorXd out(observed_count());
  for (int i = 0; i < observed_count(); ++i) {
    const double v = state[indices[i]];
    out[i] = kind == ObsKind::QoiDiagnostic ? std::max(v, 0.0) : v;
  }
  return out;
}

Eigen::MatrixXd ObservationOperator::jacobian(const Eigen::VectorXd& state) const {
  if (state.size() != state_dim) {
    throw std::invalid_argument("observation operator: state dimension mismatch");
  }
  Eigen::MatrixXd H = Eigen::MatrixXd::Zero(observed_count(), state_dim);
  for (int i = 0; i < observed_count(); ++i) {
    const int k = indices[i];
    H(i, k) = kind == ObsKind::QoiDiagnostic ? (state[k] > 0.0 ? 1.0 : 0.0) : 1.0;
  }
  return H;
}

ObservationOperator ObservationOperator::all_points(ObsKind kind, int state_dim) {
  ObservationOperator op;
  op.kind = kind;
  op.state_dim = state_dim;
  op.indices.resize(state_dim);
  for (int i = 0; i < state_dim; ++i) op.indices[i] = i;
  return op;
}

Observation observe_truth(const TruthState& truth, const ObservationOperator& op,
                          const Eigen::VectorXd& noise_cov, std::uint64_t seed) {
  op.validate();
  const int m = op.observed_count();
  if (noise_cov.size() != m) {
    throw std::invalid_argument("observe_truth: noise covariance length mismatch");
  }
  if ((noise_cov.array() < 0.0).any()) {
    throw std::invalid_argument("observe_truth: negative noise covariance entry");
  }
  Observation y;
  y.values = op.apply(truth.slow);
  y.time = truth.time;
  y.noise_cov = noise_cov;
  Rng rng(seed);
  for (int i = 0; i < m; ++i) {
    if (noise_cov[i] > 0.0) y.values[i] += std::sqrt(noise_cov[i]) * rng.next_gaussian();
  }
  return y;
}

Eigen::VectorXd observe_model(const ModelState& state, const ObservationOperator& op) {
  op.validate();
  return op.apply(state.values);
}

Discrepancy discrepancy(const Eigen::VectorXd& predicted, const Observation& measured) {
  if (predicted.size() != measured.values.size()) {
    throw std::invalid_argument("discrepancy: length mismatch");
  }
  Discrepancy d;
  d.values = predicted - measured.values;
  d.time = measured.time;
  return d;
}

namespace {

constexpr double kMaxCondition = 1e12;

// Solve G x = rhs for symmetric positive semi-definite G, rejecting
// numerically singular systems.
Eigen::VectorXd checked_spd_solve(const Eigen::MatrixXd& G, const Eigen::VectorXd& rhs,
                                  const char* context) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(G);
  const double lo = eig.eigenvalues().minCoeff();
  const double hi = eig.eigenvalues().maxCoeff();
  if (!(hi > 0.0) || lo <= 0.0 || hi / lo > kMaxCondition) {
    throw NumericalError(std::string(context) + ": Gram matrix is numerically singular");
  }
  return G.llt().solve(rhs);
}

}  // namespace

ModelSpaceError project_to_model_space(const Discrepancy& delta, const Eigen::MatrixXd& H) {
  const Eigen::Index m = H.rows();
  const Eigen::Index K = H.cols();
  if (delta.values.size() != m) {
    throw std::invalid_argument("project_to_model_space: discrepancy length != rows(H)");
  }
  ModelSpaceError out;
  out.time = delta.time;
  if (m < K) {
    // Minimum-norm reconstruction d = H^T (H H^T)^-1 delta.
    out.values = H.transpose() *
                 checked_spd_solve(H * H.transpose(), delta.values, "project_to_model_space");
  } else {
    // Full-column-rank least squares d = (H^T H)^-1 H^T delta.
    out.values = checked_spd_solve(H.transpose() * H, H.transpose() * delta.values,
                                   "project_to_model_space");
  }
  return out;
}

ModelSpaceError kalman_map(const Discrepancy& delta, const Eigen::MatrixXd& cov_xo,
                           const Eigen::MatrixXd& cov_oo, const Eigen::MatrixXd& R) {
  const Eigen::Index m = delta.values.size();
  if (cov_oo.rows() != m || cov_oo.cols() != m || R.rows() != m || R.cols() != m ||
      cov_xo.cols() != m) {
    throw std::invalid_argument("kalman_map: dimension mismatch");
  }
  const Eigen::MatrixXd S = cov_oo + R;
  if (!S.isApprox(S.transpose(), 1e-10)) {
    throw NumericalError("kalman_map: innovation matrix is not symmetric");
  }
  Eigen::LLT<Eigen::MatrixXd> llt(S);
  if (llt.info() != Eigen::Success) {
    throw NumericalError("kalman_map: innovation matrix is not positive definite");
  }
  ModelSpaceError out;
  out.values = cov_xo * llt.solve(delta.values);
  out.time = delta.time;
  return out;
}

ModelState correct_forecast(const ModelState& state, const ModelSpaceError& delta) {
  if (state.values.size() != delta.values.size()) {
    throw std::invalid_argument("correct_forecast: length mismatch");
  }
  ModelState out;
  out.values = state.values + delta.values;
  out.time = state.time;
  return out;
}

void ensemble_covariances(const Eigen::MatrixXd& states, const Eigen::MatrixXd& observations,
                          Eigen::MatrixXd& cov_xo, Eigen::MatrixXd& cov_oo) {
  const Eigen::Index n = states.cols();
  if (observations.cols() != n || n < 2) {
    throw std::invalid_argument("ensemble_covariances: need >= 2 paired members");
  }
  const Eigen::MatrixXd xa = states.colwise() - states.rowwise().mean();
  const Eigen::MatrixXd oa = observations.colwise() - observations.rowwise().mean();
  cov_xo = xa * oa.transpose() / static_cast<double>(n - 1);
  cov_oo = oa * oa.transpose() / static_cast<double>(n - 1);
}

}  // namespace twinlearn
