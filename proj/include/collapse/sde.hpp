#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "collapse/rng.hpp"

namespace collapse {

// One-dimensional Ito SDE  d(theta) = drift(theta) dt + diffusion_amp(theta) dB.
// Both callables must be total and finite on finite inputs. A point where
// drift and diffusion_amp both vanish is a fixed invariant point: the Euler
// scheme preserves it exactly, and tests rely on that.
struct SdeSystem1D {
  std::function<double(double)> drift;
  std::function<double(double)> diffusion_amp;
};

struct IntegratorConfig {
  double dt = 1e-3;
  std::int64_t n_steps = 0;
  std::uint64_t seed = 0;
  std::int64_t record_stride = 1;

  void validate() const;  // throws ConfigError on bad fields
};

// |theta| beyond this, or any non-finite value, flags the run as divergent.
inline constexpr double kDivergenceThreshold = 1e12;

struct Trajectory {
  std::vector<double> times;   // strictly increasing, starts at 0
  std::vector<double> values;  // same length as times
  bool divergent = false;
  std::int64_t divergence_step = -1;  // step index that produced the flag
};

struct EnsembleResult {
  std::int64_t n_traj = 0;
  std::vector<double> final_values;          // last finite state per trajectory
  std::vector<std::uint64_t> trajectory_seeds;
  std::vector<std::int64_t> divergence_steps;  // -1 where the run stayed finite
  std::vector<Trajectory> recorded;            // filled only on request
};

// States of every trajectory sampled at a common list of step indices;
// checkpoint-major layout: values[c][i] is trajectory i at checkpoints[c].
struct CheckpointEnsemble {
  std::vector<std::int64_t> checkpoints;
  std::vector<std::vector<double>> values;
  std::vector<std::int64_t> divergence_steps;
};

// Initial condition for ensembles. The draw comes from the same per-trajectory
// stream as the Brownian increments (init first), keeping trajectories
// independent of each other and of scheduling.
struct InitSampler {
  enum class Kind { constant, gaussian };
  Kind kind = Kind::constant;
  double value = 0.0;
  double mean = 0.0;
  double stddev = 1.0;

  static InitSampler constant(double v);
  static InitSampler gaussian(double mean, double stddev);
  double sample(Xoshiro256pp& rng) const;
};

// Single Euler-Maruyama update with a caller-supplied Brownian increment.
inline double em_step(double theta, const SdeSystem1D& system, double dt,
                      double dB) {
  return theta + system.drift(theta) * dt + system.diffusion_amp(theta) * dB;
}

// n independent N(0, dt) increments, the raw material for shared-path
// comparisons between the integrator and closed-form solutions.
std::vector<double> brownian_increments(Xoshiro256pp& rng, std::int64_t n,
                                        double dt);

Trajectory simulate_trajectory(const SdeSystem1D& system, double theta0,
                               const IntegratorConfig& config);

// Same integrator fed a fixed increment sequence instead of a seed.
Trajectory simulate_trajectory_on_path(const SdeSystem1D& system, double theta0,
                                       double dt,
                                       std::span<const double> increments,
                                       std::int64_t record_stride = 1);

EnsembleResult simulate_ensemble(const SdeSystem1D& system,
                                 const InitSampler& init,
                                 const IntegratorConfig& config,
                                 std::int64_t n_traj,
                                 bool record_trajectories = false);
// Reference implementation without worker parallelism; must agree with
// simulate_ensemble bit for bit.
EnsembleResult simulate_ensemble_serial(const SdeSystem1D& system,
                                        const InitSampler& init,
                                        const IntegratorConfig& config,
                                        std::int64_t n_traj,
                                        bool record_trajectories = false);

CheckpointEnsemble simulate_ensemble_at_steps(
    const SdeSystem1D& system, const InitSampler& init, double dt,
    std::uint64_t seed, std::span<const std::int64_t> checkpoints,
    std::int64_t n_traj);
CheckpointEnsemble simulate_ensemble_at_steps_serial(
    const SdeSystem1D& system, const InitSampler& init, double dt,
    std::uint64_t seed, std::span<const std::int64_t> checkpoints,
    std::int64_t n_traj);

// Geometric Brownian motion  d(theta) = mu theta dt + zeta theta dB.
SdeSystem1D gbm_system(double mu, double zeta);

// Exact GBM state given the Brownian value B_t at time t.
double gbm_closed_form(double mu, double zeta, double theta0, double t,
                       double B_t);

}  // namespace collapse
