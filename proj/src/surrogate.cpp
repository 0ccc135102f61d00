#include "twinlearn/surrogate.hpp"

#include <cmath>
#include <stdexcept>

#include "twinlearn/common.hpp"
#include "twinlearn/rng.hpp"

namespace twinlearn {

namespace {

int wrap(int i, int n) { return ((i % n) + n) % n; }

void check_finite(const Eigen::VectorXd& v, const char* what, double time) {
  for (Eigen::Index k = 0; k < v.size(); ++k) {
    if (!std::isfinite(v[k])) {
      throw NumericalError("integration blowup: non-finite " + std::string(what) +
                           " component " + std::to_string(k) + " at time " +
                           std::to_string(time));
    }
  }
}

// Truth tendency: the classic two-scale ring. The fast variables form one
// cyclic ring of length K*J so sectors couple across grid-variable borders.
struct TruthTendency {
  const TwinParams& p;

  void operator()(const Eigen::VectorXd& slow, const Eigen::VectorXd& fast,
                  Eigen::VectorXd& dslow, Eigen::VectorXd& dfast) const {
    const int K = p.slow_dim;
    const int J = p.fast_per_slow;
    const int KJ = K * J;
    const double hcb = p.coupling_scale();
    for (int k = 0; k < K; ++k) {
      double sum_fast = 0.0;
      for (int j = 0; j < J; ++j) sum_fast += fast[k * J + j];
      dslow[k] = -slow[wrap(k - 1, K)] * (slow[wrap(k - 2, K)] - slow[wrap(k + 1, K)]) -
                 slow[k] + p.forcing - hcb * sum_fast;
    }
    const double cb = p.subgrid_speed * p.subgrid_amplitude;
    for (int i = 0; i < KJ; ++i) {
      dfast[i] = -cb * fast[wrap(i + 1, KJ)] * (fast[wrap(i + 2, KJ)] - fast[wrap(i - 1, KJ)]) -
                 p.subgrid_speed * fast[i] + hcb * slow[i / J];
    }
  }
};

double closure_term(const PhysicsConfig& config, const PackageOptions& opt, double x) {
  switch (static_cast<Closure>(config.closure)) {
    case Closure::None:
      return 0.0;
    case Closure::LinearDamping:
      return opt.closure.linear_slope * x;
    case Closure::Quadratic: {
      const auto& q = opt.closure.quadratic;
      return q[0] + x * (q[1] + x * q[2]);
    }
    case Closure::Cubic: {
      const auto& c = opt.closure.cubic;
      return c[0] + x * (c[1] + x * (c[2] + x * c[3]));
    }
  }
  throw std::invalid_argument("invalid closure option");
}

double forcing_at(const PhysicsConfig& config, const TwinParams& p, const PackageOptions& opt,
                  int k, double t) {
  switch (static_cast<ForcingScheme>(config.forcing)) {
    case ForcingScheme::Constant:
      return p.forcing;
    case ForcingScheme::SinusoidalInK:
      return p.forcing + opt.forcing_sin_amplitude * std::sin(2.0 * M_PI * k / p.slow_dim);
    case ForcingScheme::TimeModulated:
      return p.forcing *
             (1.0 + opt.forcing_mod_amplitude * std::sin(2.0 * M_PI * t / opt.forcing_mod_period));
  }
  throw std::invalid_argument("invalid forcing option");
}

// Forecast-model tendency: single-scale ring, subgrid coupling replaced by
// the closure, forcing/damping per the configured schemes.
void model_tendency(const Eigen::VectorXd& x, double t, const PhysicsConfig& config,
                    const TwinParams& p, const PackageOptions& opt, Eigen::VectorXd& dx) {
  const int K = p.slow_dim;
  const double damp = config.dissipation == static_cast<int>(DissipationScheme::Enhanced)
                          ? opt.enhanced_dissipation
                          : 1.0;
  for (int k = 0; k < K; ++k) {
    dx[k] = -x[wrap(k - 1, K)] * (x[wrap(k - 2, K)] - x[wrap(k + 1, K)]) - damp * x[k] +
            forcing_at(config, p, opt, k, t) - closure_term(config, opt, x[k]);
  }
}

}  // namespace

bool PhysicsConfig::valid() const {
  return closure >= 0 && closure < kOptionCounts[0] && forcing >= 0 &&
         forcing < kOptionCounts[1] && dissipation >= 0 && dissipation < kOptionCounts[2] &&
         integrator >= 0 && integrator < kOptionCounts[3];
}

int PhysicsConfig::flat_index() const {
  return ((closure * kOptionCounts[1] + forcing) * kOptionCounts[2] + dissipation) *
             kOptionCounts[3] +
         integrator;
}

PhysicsConfig PhysicsConfig::from_flat(int index) {
  PhysicsConfig c;
  c.integrator = index % kOptionCounts[3];
  index /= kOptionCounts[3];
  c.dissipation = index % kOptionCounts[2];
  index /= kOptionCounts[2];
  c.forcing = index % kOptionCounts[1];
  c.closure = index / kOptionCounts[1];
  return c;
}

std::vector<PhysicsConfig> PhysicsConfig::all() {
  std::vector<PhysicsConfig> out;
  out.reserve(kTotal);
  for (int i = 0; i < kTotal; ++i) out.push_back(from_flat(i));
  return out;
}

int PhysicsConfig::option(int package) const {
  switch (package) {
    case 0: return closure;
    case 1: return forcing;
    case 2: return dissipation;
    case 3: return integrator;
    default: throw std::invalid_argument("package index out of range");
  }
}

std::string PhysicsConfig::describe() const {
  static constexpr std::array<const char*, 4> closures{"none", "linear", "quadratic", "cubic"};
  static constexpr std::array<const char*, 3> forcings{"constant", "sinusoidal", "modulated"};
  static constexpr std::array<const char*, 2> dissipations{"standard", "enhanced"};
  static constexpr std::array<const char*, 3> integrators{"rk4", "rk4x2", "rk2"};
  return std::string(closures[closure]) + "/" + forcings[forcing] + "/" +
         dissipations[dissipation] + "/" + integrators[integrator];
}

TruthState truth_step(const TruthState& state, const TwinParams& params, double dt) {
  if (dt < 0.0) throw std::invalid_argument("truth_step: dt must be nonnegative");
  if (state.slow.size() != params.slow_dim || state.fast.size() != params.fast_dim()) {
    throw std::invalid_argument("truth_step: state dimensions do not match params");
  }
  if (dt == 0.0) return state;

  const TruthTendency f{params};
  const int K = params.slow_dim;
  const int KJ = params.fast_dim();
  Eigen::VectorXd k1s(K), k2s(K), k3s(K), k4s(K);
  Eigen::VectorXd k1f(KJ), k2f(KJ), k3f(KJ), k4f(KJ);

  f(state.slow, state.fast, k1s, k1f);
  f(state.slow + 0.5 * dt * k1s, state.fast + 0.5 * dt * k1f, k2s, k2f);
  f(state.slow + 0.5 * dt * k2s, state.fast + 0.5 * dt * k2f, k3s, k3f);
  f(state.slow + dt * k3s, state.fast + dt * k3f, k4s, k4f);

  TruthState next;
  next.slow = state.slow + (dt / 6.0) * (k1s + 2.0 * k2s + 2.0 * k3s + k4s);
  next.fast = state.fast + (dt / 6.0) * (k1f + 2.0 * k2f + 2.0 * k3f + k4f);
  next.time = state.time + dt;
  check_finite(next.slow, "slow", next.time);
  check_finite(next.fast, "fast", next.time);
  return next;
}

ModelState model_step(const ModelState& state, const PhysicsConfig& config,
                      const TwinParams& params, const PackageOptions& options, double dt) {
  if (dt < 0.0) throw std::invalid_argument("model_step: dt must be nonnegative");
  if (!config.valid()) throw std::invalid_argument("model_step: invalid physics config");
  if (state.values.size() != params.slow_dim) {
    throw std::invalid_argument("model_step: state dimension does not match params");
  }
  if (dt == 0.0) return state;

  const int K = params.slow_dim;
  const double t = state.time;
  Eigen::VectorXd k1(K), k2(K);
  ModelState next;

  if (config.integrator == static_cast<int>(IntegratorScheme::Rk2)) {
    // Heun's method.
    model_tendency(state.values, t, config, params, options, k1);
    model_tendency(state.values + dt * k1, t + dt, config, params, options, k2);
    next.values = state.values + (dt / 2.0) * (k1 + k2);
  } else {
    Eigen::VectorXd k3(K), k4(K);
    model_tendency(state.values, t, config, params, options, k1);
    model_tendency(state.values + 0.5 * dt * k1, t + 0.5 * dt, config, params, options, k2);
    model_tendency(state.values + 0.5 * dt * k2, t + 0.5 * dt, config, params, options, k3);
    model_tendency(state.values + dt * k3, t + dt, config, params, options, k4);
    next.values = state.values + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  }
  next.time = state.time + dt;
  check_finite(next.values, "model", next.time);
  return next;
}

double effective_step(const PhysicsConfig& config, const TwinParams& params) {
  return config.integrator == static_cast<int>(IntegratorScheme::Rk4Coarse) ? 2.0 * params.dt
                                                                            : params.dt;
}

namespace {

int whole_steps(double duration, double step, const char* what) {
  if (step <= 0.0) throw std::invalid_argument(std::string(what) + ": step must be positive");
  const double ratio = duration / step;
  const int n = static_cast<int>(std::llround(ratio));
  if (n < 1 || std::abs(ratio - n) > 1e-9) {
    throw std::invalid_argument(std::string(what) +
                                ": duration is not a whole number of steps");
  }
  return n;
}

}  // namespace

ModelState advance_model(const ModelState& state, const PhysicsConfig& config,
                         const TwinParams& params, const PackageOptions& options,
                         double duration) {
  if (duration == 0.0) return state;
  const double h = effective_step(config, params);
  const int n = whole_steps(duration, h, "advance_model");
  ModelState s = state;
  for (int i = 0; i < n; ++i) s = model_step(s, config, params, options, h);
  return s;
}

Trajectory run_window(const ModelState& initial, const PhysicsConfig& config,
                      const TwinParams& params, const PackageOptions& options,
                      const WindowSpec& window) {
  if (window.checkpoints < 2) {
    throw std::invalid_argument("run_window: need at least 2 checkpoints");
  }
  if (window.spacing <= 0.0) {
    throw std::invalid_argument("run_window: checkpoint spacing must be positive");
  }
  Trajectory traj;
  traj.config = config;
  traj.states.reserve(window.checkpoints);
  traj.states.push_back(initial);
  for (int i = 1; i < window.checkpoints; ++i) {
    try {
      ModelState next = advance_model(traj.states.back(), config, params, options, window.spacing);
      next.time = initial.time + i * window.spacing;  // exact checkpoint times, no drift
      traj.states.push_back(std::move(next));
    } catch (const NumericalError& e) {
      throw NumericalError(std::string(e.what()) + " (checkpoint " + std::to_string(i) + ")");
    }
  }
  return traj;
}

TruthState advance_truth(const TruthState& state, const TwinParams& params, double duration) {
  if (duration == 0.0) return state;
  const int n = whole_steps(duration, params.dt, "advance_truth");
  TruthState s = state;
  for (int i = 0; i < n; ++i) s = truth_step(s, params, params.dt);
  return s;
}

Eigen::VectorXd qoi(const Eigen::VectorXd& state_values) {
  return state_values.cwiseMax(0.0);
}

TruthState initial_truth(const TwinParams& params, std::uint64_t seed) {
  Rng rng(combine_seed(seed, 0x1c1a1ULL));
  TruthState s;
  s.slow.resize(params.slow_dim);
  s.fast.resize(params.fast_dim());
  for (int k = 0; k < params.slow_dim; ++k) s.slow[k] = params.forcing + rng.next_gaussian();
  for (int i = 0; i < params.fast_dim(); ++i) s.fast[i] = 0.1 * rng.next_gaussian();
  s.time = 0.0;
  return s;
}

TruthState spun_up_truth(const TwinParams& params, std::uint64_t seed) {
  TruthState s = initial_truth(params, seed);
  for (int i = 0; i < params.spinup_steps; ++i) s = truth_step(s, params, params.dt);
  return s;
}

ClosureCoefficients fit_closure_coefficients(const TwinParams& params, std::uint64_t seed,
                                             int sample_steps) {
  if (sample_steps < 1) throw std::invalid_argument("fit_closure_coefficients: need samples");
  TruthState s = spun_up_truth(params, seed);
  const int K = params.slow_dim;
  const int J = params.fast_per_slow;
  const double hcb = params.coupling_scale();

  // Sample (x_k, u_k) pairs where u is the subgrid coupling term the closure
  // stands in for.
  const Eigen::Index n = static_cast<Eigen::Index>(sample_steps) * K;
  Eigen::VectorXd xs(n), us(n);
  for (int step = 0; step < sample_steps; ++step) {
    for (int k = 0; k < K; ++k) {
      double sum_fast = 0.0;
      for (int j = 0; j < J; ++j) sum_fast += s.fast[k * J + j];
      xs[step * K + k] = s.slow[k];
      us[step * K + k] = hcb * sum_fast;
    }
    s = truth_step(s, params, params.dt);
  }

  ClosureCoefficients out;
  const double sxx = xs.squaredNorm();
  out.linear_slope = sxx > 0.0 ? xs.dot(us) / sxx : 0.0;

  auto polyfit = [&](int degree) {
    Eigen::MatrixXd vand(n, degree + 1);
    for (Eigen::Index i = 0; i < n; ++i) {
      double p = 1.0;
      for (int d = 0; d <= degree; ++d) {
        vand(i, d) = p;
        p *= xs[i];
      }
    }
    Eigen::VectorXd coef =
        (vand.transpose() * vand).ldlt().solve(vand.transpose() * us);
    return coef;
  };

  const Eigen::VectorXd q = polyfit(2);
  const Eigen::VectorXd c = polyfit(3);
  out.quadratic = {q[0], q[1], q[2]};
  out.cubic = {c[0], c[1], c[2], c[3]};
  return out;
}

}  // namespace twinlearn
