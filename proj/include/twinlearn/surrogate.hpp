#pragma once

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace twinlearn {

// Constants of the twin system. The truth is a two-scale ring of slow
// variables coupled to fast subgrid variables; the forecast model resolves
// only the slow scale and fills the gap with a configurable closure.
struct TwinParams {
  int slow_dim = 40;        // K, number of resolved grid variables
  int fast_per_slow = 8;    // J, subgrid variables per grid variable
  double forcing = 8.0;     // F
  double coupling = 1.0;    // h, truth <-> subgrid coupling strength
  double subgrid_speed = 10.0;      // c, subgrid time-scale ratio
  double subgrid_amplitude = 10.0;  // b, subgrid amplitude ratio
  double dt = 0.005;        // base integration step, model time units
  double hour = 0.01;       // one hourly checkpoint, model time units
  int window_hours = 6;     // checkpoints per forecast window
  int spinup_steps = 500;   // truth steps discarded before any window

  int fast_dim() const { return slow_dim * fast_per_slow; }
  double coupling_scale() const { return coupling * subgrid_speed / subgrid_amplitude; }
};

struct TruthState {
  Eigen::VectorXd slow;   // length K
  Eigen::VectorXd fast;   // length K*J
  double time = 0.0;
};

struct ModelState {
  Eigen::VectorXd values;  // length K
  double time = 0.0;
};

// One choice per physics package.
enum class Closure : int { None = 0, LinearDamping = 1, Quadratic = 2, Cubic = 3 };
enum class ForcingScheme : int { Constant = 0, SinusoidalInK = 1, TimeModulated = 2 };
enum class DissipationScheme : int { Standard = 0, Enhanced = 1 };
enum class IntegratorScheme : int { Rk4 = 0, Rk4Coarse = 1, Rk2 = 2 };

struct PhysicsConfig {
  int closure = 0;
  int forcing = 0;
  int dissipation = 0;
  int integrator = 0;

  static constexpr std::array<int, 4> kOptionCounts{4, 3, 2, 3};
  static constexpr int kTotal = 4 * 3 * 2 * 3;  // 72 combinations
  static constexpr std::array<const char*, 4> kPackageNames{"closure", "forcing",
                                                            "dissipation", "integrator"};

  bool valid() const;
  int flat_index() const;
  static PhysicsConfig from_flat(int index);
  static std::vector<PhysicsConfig> all();
  int option(int package) const;
  std::string describe() const;
  bool operator==(const PhysicsConfig&) const = default;
};

// Closure coefficients approximate the subgrid coupling term as a function
// of the local slow variable. The shipped defaults were produced by
// fit_closure_coefficients over a spun-up truth run (the `generate` command
// re-derives them for any parameter set).
struct ClosureCoefficients {
  double linear_slope = 0.29652929774034958;
  std::array<double, 3> quadratic{0.16572598334854599, 0.36392565602410348,
                                  -0.017484260796206789};
  std::array<double, 4> cubic{0.10832192719670852, 0.36868514914285427,
                              -0.0055001581860010251, -0.0016410587118610544};
};

struct PackageOptions {
  ClosureCoefficients closure;
  double forcing_sin_amplitude = 2.0;
  double forcing_mod_amplitude = 0.3;
  double forcing_mod_period = 0.24;
  double enhanced_dissipation = 1.05;
};

struct WindowSpec {
  int checkpoints = 7;     // n >= 2, hourly-analog states including both ends
  double spacing = 0.01;   // time between checkpoints, > 0
};

struct Trajectory {
  std::vector<ModelState> states;
  PhysicsConfig config;
};

// One classical RK4 step of the joint two-scale system. dt == 0 is a no-op.
TruthState truth_step(const TruthState& state, const TwinParams& params, double dt);

// One step of the forecast model under the given package configuration.
// The step uses the config's scheme (RK4 or RK2) at exactly the requested dt;
// the coarse-step option only changes the substep run_window composes with.
ModelState model_step(const ModelState& state, const PhysicsConfig& config,
                      const TwinParams& params, const PackageOptions& options, double dt);

// Substep size run_window uses for this config: dt for Rk4/Rk2, 2*dt for Rk4Coarse.
double effective_step(const PhysicsConfig& config, const TwinParams& params);

// Advance by `duration`, composing model_step at the config's effective step.
// duration must be a whole number of effective steps.
ModelState advance_model(const ModelState& state, const PhysicsConfig& config,
                         const TwinParams& params, const PackageOptions& options,
                         double duration);

// Model trajectory at uniformly spaced checkpoints; the first checkpoint is
// the initial state.
Trajectory run_window(const ModelState& initial, const PhysicsConfig& config,
                      const TwinParams& params, const PackageOptions& options,
                      const WindowSpec& window);

// Advance the truth by `duration` in base-dt RK4 steps (duration must be a
// whole number of them).
TruthState advance_truth(const TruthState& state, const TwinParams& params, double duration);

// Nonnegative precipitation-like diagnostic: elementwise max(x, 0).
Eigen::VectorXd qoi(const Eigen::VectorXd& state_values);

// Seeded perturbation around the resting state, before spin-up.
TruthState initial_truth(const TwinParams& params, std::uint64_t seed);

// initial_truth advanced through params.spinup_steps to land on the attractor.
TruthState spun_up_truth(const TwinParams& params, std::uint64_t seed);

// Least-squares fit of the subgrid coupling term against the local slow
// variable, sampled over a spun-up truth run. Produces the constants shipped
// in ClosureCoefficients.
ClosureCoefficients fit_closure_coefficients(const TwinParams& params, std::uint64_t seed,
                                             int sample_steps = 4000);

}  // namespace twinlearn
