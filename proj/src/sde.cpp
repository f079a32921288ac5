#include "collapse/sde.hpp"

#include <cmath>
#include <string>

#include "collapse/errors.hpp"

namespace collapse {

void IntegratorConfig::validate() const {
  if (!(dt > 0.0)) throw ConfigError("integrator: dt must be > 0");
  if (n_steps < 0) throw ConfigError("integrator: n_steps must be >= 0");
  if (record_stride < 1)
    throw ConfigError("integrator: record_stride must be >= 1");
}

InitSampler InitSampler::constant(double v) {
  InitSampler s;
  s.kind = Kind::constant;
  s.value = v;
  return s;
}

InitSampler InitSampler::gaussian(double mean, double stddev) {
  InitSampler s;
  s.kind = Kind::gaussian;
  s.mean = mean;
  s.stddev = stddev;
  return s;
}

double InitSampler::sample(Xoshiro256pp& rng) const {
  switch (kind) {
    case Kind::constant:
      return value;
    case Kind::gaussian:
      return rng.normal(mean, stddev);
  }
  throw ConfigError("init sampler: unknown kind");
}

std::vector<double> brownian_increments(Xoshiro256pp& rng, std::int64_t n,
                                        double dt) {
  if (n < 0) throw ConfigError("brownian_increments: n must be >= 0");
  if (!(dt > 0.0)) throw ConfigError("brownian_increments: dt must be > 0");
  std::vector<double> db(static_cast<std::size_t>(n));
  const double sqrt_dt = std::sqrt(dt);
  for (auto& x : db) x = sqrt_dt * rng.normal();
  return db;
}

namespace {

bool out_of_range(double theta) {
  return !std::isfinite(theta) || std::abs(theta) > kDivergenceThreshold;
}

// Core stepping loop shared by the seeded and fixed-path entry points.
// next_db is called once per step, in step order.
template <typename NextIncrement>
Trajectory run_trajectory(const SdeSystem1D& system, double theta0, double dt,
                          std::int64_t n_steps, std::int64_t record_stride,
                          NextIncrement&& next_db) {
  Trajectory traj;
  traj.times.reserve(static_cast<std::size_t>(n_steps / record_stride) + 1);
  traj.values.reserve(traj.times.capacity());
  traj.times.push_back(0.0);
  traj.values.push_back(theta0);

  double theta = theta0;
  std::int64_t last_recorded = 0;
  for (std::int64_t step = 1; step <= n_steps; ++step) {
    const double next = em_step(theta, system, dt, next_db());
    if (out_of_range(next)) {
      traj.divergent = true;
      traj.divergence_step = step;
      // The divergence signal carries the last finite state.
      if (last_recorded != step - 1) {
        traj.times.push_back(static_cast<double>(step - 1) * dt);
        traj.values.push_back(theta);
      }
      return traj;
    }
    theta = next;
    if (step % record_stride == 0) {
      traj.times.push_back(static_cast<double>(step) * dt);
      traj.values.push_back(theta);
      last_recorded = step;
    }
  }
  return traj;
}

}  // namespace

Trajectory simulate_trajectory(const SdeSystem1D& system, double theta0,
                               const IntegratorConfig& config) {
  config.validate();
  Xoshiro256pp rng(config.seed);
  const double sqrt_dt = std::sqrt(config.dt);
  return run_trajectory(system, theta0, config.dt, config.n_steps,
                        config.record_stride,
                        [&] { return sqrt_dt * rng.normal(); });
}

Trajectory simulate_trajectory_on_path(const SdeSystem1D& system,
                                       double theta0, double dt,
                                       std::span<const double> increments,
                                       std::int64_t record_stride) {
  if (!(dt > 0.0)) throw ConfigError("integrator: dt must be > 0");
  if (record_stride < 1)
    throw ConfigError("integrator: record_stride must be >= 1");
  std::size_t cursor = 0;
  return run_trajectory(system, theta0, dt,
                        static_cast<std::int64_t>(increments.size()),
                        record_stride, [&] { return increments[cursor++]; });
}

namespace {

// Ensemble driver: every trajectory writes only to its own preallocated slot,
// so the omp schedule cannot influence results. `parallel` toggles the pragma
// and nothing else.
EnsembleResult run_ensemble(const SdeSystem1D& system, const InitSampler& init,
                            const IntegratorConfig& config, std::int64_t n_traj,
                            bool record_trajectories, bool parallel) {
  config.validate();
  if (n_traj < 1) throw ConfigError("ensemble: n_traj must be >= 1");

  EnsembleResult out;
  out.n_traj = n_traj;
  out.final_values.resize(static_cast<std::size_t>(n_traj));
  out.trajectory_seeds.resize(static_cast<std::size_t>(n_traj));
  out.divergence_steps.assign(static_cast<std::size_t>(n_traj), -1);
  if (record_trajectories)
    out.recorded.resize(static_cast<std::size_t>(n_traj));

#pragma omp parallel for schedule(dynamic) if (parallel)
  for (std::int64_t i = 0; i < n_traj; ++i) {
    auto rng = Xoshiro256pp::for_stream(config.seed,
                                        static_cast<std::uint64_t>(i));
    out.trajectory_seeds[static_cast<std::size_t>(i)] =
        config.seed ^ (0x9E3779B97F4A7C15ULL * (static_cast<std::uint64_t>(i) + 1));
    const double theta0 = init.sample(rng);
    const double sqrt_dt = std::sqrt(config.dt);
    Trajectory traj =
        run_trajectory(system, theta0, config.dt, config.n_steps,
                       config.record_stride, [&] { return sqrt_dt * rng.normal(); });
    out.final_values[static_cast<std::size_t>(i)] = traj.values.back();
    out.divergence_steps[static_cast<std::size_t>(i)] = traj.divergence_step;
    if (record_trajectories)
      out.recorded[static_cast<std::size_t>(i)] = std::move(traj);
  }
  return out;
}

CheckpointEnsemble run_ensemble_at_steps(const SdeSystem1D& system,
                                         const InitSampler& init, double dt,
                                         std::uint64_t seed,
                                         std::span<const std::int64_t> checkpoints,
                                         std::int64_t n_traj, bool parallel) {
  if (!(dt > 0.0)) throw ConfigError("integrator: dt must be > 0");
  if (n_traj < 1) throw ConfigError("ensemble: n_traj must be >= 1");
  if (checkpoints.empty()) throw ConfigError("ensemble: checkpoints empty");
  std::int64_t prev = -1;
  for (const auto c : checkpoints) {
    if (c < 0 || c <= prev)
      throw ConfigError("ensemble: checkpoints must be increasing and >= 0");
    prev = c;
  }

  CheckpointEnsemble out;
  out.checkpoints.assign(checkpoints.begin(), checkpoints.end());
  out.values.assign(checkpoints.size(),
                    std::vector<double>(static_cast<std::size_t>(n_traj)));
  out.divergence_steps.assign(static_cast<std::size_t>(n_traj), -1);
  const std::int64_t n_steps = checkpoints.back();

#pragma omp parallel for schedule(dynamic) if (parallel)
  for (std::int64_t i = 0; i < n_traj; ++i) {
    auto rng = Xoshiro256pp::for_stream(seed, static_cast<std::uint64_t>(i));
    double theta = init.sample(rng);
    const double sqrt_dt = std::sqrt(dt);
    std::size_t next_ck = 0;
    bool diverged = false;
    for (std::int64_t step = 0; step <= n_steps; ++step) {
      if (next_ck < checkpoints.size() && step == checkpoints[next_ck]) {
        out.values[next_ck][static_cast<std::size_t>(i)] = theta;
        ++next_ck;
      }
      if (step == n_steps) break;
      if (!diverged) {
        const double next = em_step(theta, system, dt, sqrt_dt * rng.normal());
        if (out_of_range(next)) {
          diverged = true;
          out.divergence_steps[static_cast<std::size_t>(i)] = step + 1;
        } else {
          theta = next;
        }
      } else {
        // Keep consuming noise so checkpoint alignment of the RNG stream
        // stays step-indexed even for flagged runs.
        (void)rng.normal();
      }
    }
    // Fill any checkpoints skipped by divergence with the last finite state.
    for (; next_ck < checkpoints.size(); ++next_ck)
      out.values[next_ck][static_cast<std::size_t>(i)] = theta;
  }
  return out;
}

}  // namespace

EnsembleResult simulate_ensemble(const SdeSystem1D& system,
                                 const InitSampler& init,
                                 const IntegratorConfig& config,
                                 std::int64_t n_traj,
                                 bool record_trajectories) {
  return run_ensemble(system, init, config, n_traj, record_trajectories, true);
}

EnsembleResult simulate_ensemble_serial(const SdeSystem1D& system,
                                        const InitSampler& init,
                                        const IntegratorConfig& config,
                                        std::int64_t n_traj,
                                        bool record_trajectories) {
  return run_ensemble(system, init, config, n_traj, record_trajectories, false);
}

CheckpointEnsemble simulate_ensemble_at_steps(
    const SdeSystem1D& system, const InitSampler& init, double dt,
    std::uint64_t seed, std::span<const std::int64_t> checkpoints,
    std::int64_t n_traj) {
  return run_ensemble_at_steps(system, init, dt, seed, checkpoints, n_traj,
                               true);
}

CheckpointEnsemble simulate_ensemble_at_steps_serial(
    const SdeSystem1D& system, const InitSampler& init, double dt,
    std::uint64_t seed, std::span<const std::int64_t> checkpoints,
    std::int64_t n_traj) {
  return run_ensemble_at_steps(system, init, dt, seed, checkpoints, n_traj,
                               false);
}

SdeSystem1D gbm_system(double mu, double zeta) {
  return {[mu](double th) { return mu * th; },
          [zeta](double th) { return zeta * th; }};
}

double gbm_closed_form(double mu, double zeta, double theta0, double t,
                       double B_t) {
  if (t < 0) throw ConfigError("gbm_closed_form: t must be >= 0");
  return theta0 * std::exp((mu - 0.5 * zeta * zeta) * t + zeta * B_t);
}

}  // namespace collapse
