#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "collapse/sde.hpp"

namespace collapse {

// Double-well landscape L(theta) = (theta^2 - mu)^2 / 4 with multiplicative
// noise zeta * theta. Minima at +-sqrt(mu); the origin is an invariant point
// that turns attractive once the noise is strong enough.
struct QuarticParams {
  double mu = 1.5;
  double zeta = 0.0;
};

SdeSystem1D quartic_system(const QuarticParams& params);

// Stationary law of |theta| on (0, inf) in the non-collapsed regime,
// p(theta) = Z^-1 theta^exponent exp(-kappa theta^2 / 2) with
// exponent = 2 mu / zeta^2 - 2 and kappa = 2 / zeta^2. At or beyond
// mu = zeta^2 / 2 the normalizer diverges and the law degenerates to a point
// mass at zero (collapsed = true, no evaluator).
struct StationaryDensity {
  QuarticParams params;
  double kappa = 0.0;
  double exponent = 0.0;
  bool collapsed = false;
  double normalizer = 0.0;  // finite iff not collapsed

  double operator()(double theta) const;  // throws in the collapsed regime
  // Unique interior maximizer sqrt(mu - zeta^2); only exists when
  // mu > zeta^2, otherwise the density piles up against 0.
  bool has_interior_mode() const;
  double mode() const;
};

StationaryDensity analytic_stationary_density(const QuarticParams& params);

struct CollapseProbabilities {
  std::vector<std::int64_t> checkpoints;
  std::vector<double> probability;  // per checkpoint
  std::int64_t n_divergent = 0;
};

// Fraction of trajectories with |theta| < eps at each checkpoint step.
// Initial condition: centered Gaussian with variance 4. Divergent runs count
// as not collapsed and are tallied separately. config.dt and config.seed are
// honored; the step count comes from the last checkpoint.
CollapseProbabilities empirical_collapse_probability(
    const QuarticParams& params, const IntegratorConfig& config,
    std::int64_t n_traj, double eps,
    std::span<const std::int64_t> checkpoints);

struct SweepResult {
  std::vector<double> zeta_grid;
  std::vector<std::int64_t> checkpoints;
  // probability[c][z]: collapse probability at checkpoint c, noise level z.
  std::vector<std::vector<double>> probability;
  std::vector<std::int64_t> divergent_per_zeta;
};

SweepResult zeta_sweep(double mu, std::span<const double> zeta_grid,
                       const IntegratorConfig& config, std::int64_t n_traj,
                       double eps, std::span<const std::int64_t> checkpoints);
// Single-worker reference; must agree with zeta_sweep bit for bit.
SweepResult zeta_sweep_serial(double mu, std::span<const double> zeta_grid,
                              const IntegratorConfig& config,
                              std::int64_t n_traj, double eps,
                              std::span<const std::int64_t> checkpoints);

}  // namespace collapse
