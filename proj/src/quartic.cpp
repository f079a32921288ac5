#include "collapse/quartic.hpp"

#include <cmath>

#include "collapse/errors.hpp"
#include "collapse/quadrature.hpp"

namespace collapse {

SdeSystem1D quartic_system(const QuarticParams& params) {
  const double mu = params.mu;
  const double zeta = params.zeta;
  return {[mu](double th) { return -th * th * th + mu * th; },
          [zeta](double th) { return zeta * th; }};
}

double StationaryDensity::operator()(double theta) const {
  if (collapsed)
    throw ConfigError(
        "stationary density: collapsed regime has no density evaluator "
        "(point mass at zero)");
  if (theta <= 0.0) return 0.0;
  return std::pow(theta, exponent) *
         std::exp(-0.5 * kappa * theta * theta) / normalizer;
}

bool StationaryDensity::has_interior_mode() const {
  return !collapsed && params.mu > params.zeta * params.zeta;
}

double StationaryDensity::mode() const {
  if (!has_interior_mode())
    throw ConfigError("stationary density: no interior mode in this regime");
  return std::sqrt(params.mu - params.zeta * params.zeta);
}

StationaryDensity analytic_stationary_density(const QuarticParams& params) {
  if (!(params.mu > 0)) throw ConfigError("stationary density: mu must be > 0");
  if (params.zeta == 0.0)
    throw ConfigError(
        "stationary density: zeta = 0 is deterministic dynamics; no "
        "stationary density in this family");
  const double z2 = params.zeta * params.zeta;

  StationaryDensity d;
  d.params = params;
  d.kappa = 2.0 / z2;
  d.exponent = 2.0 * params.mu / z2 - 2.0;
  // Integrability at 0 needs exponent > -1, i.e. mu > zeta^2/2. The boundary
  // case diverges (log), so it is collapsed too.
  d.collapsed = params.mu <= 0.5 * z2;
  if (d.collapsed) {
    d.normalizer = 0.0;
    return d;
  }
  const double a = d.exponent;
  const double kappa = d.kappa;
  d.normalizer =
      integrate_semi_infinite(
          [a, kappa](double th) {
            return std::pow(th, a) * std::exp(-0.5 * kappa * th * th);
          },
          0.0, 1e-8)
          .value;
  return d;
}

CollapseProbabilities empirical_collapse_probability(
    const QuarticParams& params, const IntegratorConfig& config,
    std::int64_t n_traj, double eps,
    std::span<const std::int64_t> checkpoints) {
  if (!(eps > 0)) throw ConfigError("collapse probability: eps must be > 0");
  const InitSampler init = InitSampler::gaussian(0.0, 2.0);
  const CheckpointEnsemble ens = simulate_ensemble_at_steps(
      quartic_system(params), init, config.dt, config.seed, checkpoints,
      n_traj);

  CollapseProbabilities out;
  out.checkpoints = ens.checkpoints;
  out.probability.resize(checkpoints.size());
  for (std::size_t c = 0; c < checkpoints.size(); ++c) {
    std::int64_t hits = 0;
    for (std::size_t i = 0; i < ens.values[c].size(); ++i) {
      // Once a trajectory diverges it stops counting as collapsed from that
      // step on; earlier checkpoints keep their genuine states.
      const bool diverged_by_then = ens.divergence_steps[i] >= 0 &&
                                    ens.divergence_steps[i] <= checkpoints[c];
      if (!diverged_by_then && std::abs(ens.values[c][i]) < eps) ++hits;
    }
    out.probability[c] =
        static_cast<double>(hits) / static_cast<double>(n_traj);
  }
  for (const auto s : ens.divergence_steps)
    if (s >= 0) ++out.n_divergent;
  return out;
}

namespace {

SweepResult run_sweep(double mu, std::span<const double> zeta_grid,
                      const IntegratorConfig& config, std::int64_t n_traj,
                      double eps, std::span<const std::int64_t> checkpoints,
                      bool parallel) {
  if (zeta_grid.empty()) throw ConfigError("zeta sweep: empty grid");
  if (!(eps > 0)) throw ConfigError("zeta sweep: eps must be > 0");
  if (n_traj < 1) throw ConfigError("zeta sweep: n_traj must be >= 1");

  SweepResult out;
  out.zeta_grid.assign(zeta_grid.begin(), zeta_grid.end());
  out.checkpoints.assign(checkpoints.begin(), checkpoints.end());
  out.probability.assign(checkpoints.size(),
                         std::vector<double>(zeta_grid.size(), 0.0));
  out.divergent_per_zeta.assign(zeta_grid.size(), 0);

  const std::int64_t n_cells = static_cast<std::int64_t>(zeta_grid.size());
  // Each (zeta, trajectory) pair owns stream cell*n_traj + i of the master
  // seed, so the flattened loop can be scheduled any way at all.
#pragma omp parallel for schedule(dynamic) if (parallel)
  for (std::int64_t flat = 0; flat < n_cells * n_traj; ++flat) {
    const std::size_t cell = static_cast<std::size_t>(flat / n_traj);
    const std::int64_t traj = flat % n_traj;
    const QuarticParams p{mu, zeta_grid[cell]};
    const SdeSystem1D system = quartic_system(p);

    auto rng = Xoshiro256pp::for_stream(
        config.seed, static_cast<std::uint64_t>(flat));
    double theta = rng.normal(0.0, 2.0);
    const double sqrt_dt = std::sqrt(config.dt);
    std::size_t next_ck = 0;
    bool diverged = false;
    const std::int64_t n_steps = checkpoints.back();
    for (std::int64_t step = 0; step <= n_steps; ++step) {
      if (next_ck < checkpoints.size() && step == checkpoints[next_ck]) {
        if (!diverged && std::abs(theta) < eps) {
#pragma omp atomic
          out.probability[next_ck][cell] += 1.0;
        }
        ++next_ck;
      }
      if (step == n_steps) break;
      const double db = sqrt_dt * rng.normal();
      if (!diverged) {
        const double next = em_step(theta, system, config.dt, db);
        if (!std::isfinite(next) || std::abs(next) > kDivergenceThreshold) {
          diverged = true;
        } else {
          theta = next;
        }
      }
    }
    if (diverged) {
#pragma omp atomic
      out.divergent_per_zeta[cell] += 1;
    }
    (void)traj;
  }

  for (auto& row : out.probability)
    for (auto& p : row) p /= static_cast<double>(n_traj);
  return out;
}

}  // namespace

SweepResult zeta_sweep(double mu, std::span<const double> zeta_grid,
                       const IntegratorConfig& config, std::int64_t n_traj,
                       double eps, std::span<const std::int64_t> checkpoints) {
  return run_sweep(mu, zeta_grid, config, n_traj, eps, checkpoints, true);
}

SweepResult zeta_sweep_serial(double mu, std::span<const double> zeta_grid,
                              const IntegratorConfig& config,
                              std::int64_t n_traj, double eps,
                              std::span<const std::int64_t> checkpoints) {
  return run_sweep(mu, zeta_grid, config, n_traj, eps, checkpoints, false);
}

}  // namespace collapse
