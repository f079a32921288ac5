#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <omp.h>

#include <vector>

#include "collapse/detector.hpp"
#include "collapse/networks.hpp"
#include "collapse/quartic.hpp"
#include "collapse/rng.hpp"
#include "collapse/sde.hpp"
#include "collapse/snapshot_io.hpp"
#include "collapse/teacher_student.hpp"

using namespace collapse;

// Every parallel kernel must match its serial reference bit for bit, for any
// worker count: work is pre-assigned per-trajectory RNG streams and written
// into preallocated slots, so scheduling cannot reorder arithmetic.

namespace {

template <typename F>
auto with_threads(int n, F&& f) {
  const int keep = omp_get_max_threads();
  omp_set_num_threads(n);
  auto result = f();
  omp_set_num_threads(keep);
  return result;
}

bool exact_equal(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i] != b[i]) return false;
  return true;
}

}  // namespace

TEST_CASE("ensemble integration is schedule-independent") {
  const auto system = quartic_system({1.5, 1.0});
  const auto init = InitSampler::gaussian(0.0, 2.0);
  IntegratorConfig cfg;
  cfg.dt = 0.01;
  cfg.n_steps = 400;
  cfg.seed = 123;

  const EnsembleResult serial =
      simulate_ensemble_serial(system, init, cfg, 64, true);
  for (int workers : {1, 2, 5}) {
    const EnsembleResult par = with_threads(workers, [&] {
      return simulate_ensemble(system, init, cfg, 64, true);
    });
    CHECK(exact_equal(par.final_values, serial.final_values));
    CHECK(par.divergence_steps == serial.divergence_steps);
    CHECK(par.trajectory_seeds == serial.trajectory_seeds);
    REQUIRE(par.recorded.size() == serial.recorded.size());
    for (std::size_t i = 0; i < par.recorded.size(); ++i)
      CHECK(exact_equal(par.recorded[i].values, serial.recorded[i].values));
  }
}

TEST_CASE("checkpoint ensembles are schedule-independent") {
  const auto system = quartic_system({1.5, 2.5});
  const auto init = InitSampler::gaussian(0.0, 2.0);
  const std::vector<std::int64_t> checkpoints{0, 100, 250};

  const CheckpointEnsemble serial = simulate_ensemble_at_steps_serial(
      system, init, 0.01, 9, checkpoints, 48);
  const CheckpointEnsemble par = with_threads(3, [&] {
    return simulate_ensemble_at_steps(system, init, 0.01, 9, checkpoints, 48);
  });
  REQUIRE(par.values.size() == serial.values.size());
  for (std::size_t c = 0; c < par.values.size(); ++c)
    CHECK(exact_equal(par.values[c], serial.values[c]));
  CHECK(par.divergence_steps == serial.divergence_steps);
}

TEST_CASE("the noise sweep is schedule-independent") {
  const std::vector<double> zetas{0.0, 0.8, 1.6, 2.4};
  const std::vector<std::int64_t> checkpoints{0, 60, 120};
  IntegratorConfig cfg;
  cfg.dt = 0.01;
  cfg.seed = 31;

  const SweepResult serial =
      zeta_sweep_serial(1.5, zetas, cfg, 50, 1e-15, checkpoints);
  for (int workers : {2, 4}) {
    const SweepResult par = with_threads(workers, [&] {
      return zeta_sweep(1.5, zetas, cfg, 50, 1e-15, checkpoints);
    });
    REQUIRE(par.probability.size() == serial.probability.size());
    for (std::size_t c = 0; c < par.probability.size(); ++c)
      CHECK(exact_equal(par.probability[c], serial.probability[c]));
    CHECK(par.divergent_per_zeta == serial.divergent_per_zeta);
  }
}

TEST_CASE("the learning-rate drop experiment is schedule-independent") {
  LrDropConfig cfg;
  cfg.n = 6;
  cfg.m = 6;
  cfg.k = 3;
  cfg.p = 24;
  cfg.sigma_eps = 0.05;
  cfg.zeta = 1.0;
  cfg.init_scale = 1e-3;
  cfg.schedule = {{0.02, 60, 5}, {0.005, 40, 0}};
  cfg.record_stride = 20;
  cfg.replicates = 5;
  cfg.seed = 77;
  cfg.validate();

  const LrDropResult serial = lr_drop_experiment_serial(cfg);
  const LrDropResult par =
      with_threads(3, [&] { return lr_drop_experiment(cfg); });

  CHECK(par.record_steps == serial.record_steps);
  CHECK(exact_equal(par.mean_e_train, serial.mean_e_train));
  CHECK(exact_equal(par.mean_e_test, serial.mean_e_test));
  CHECK((par.e_train_curves - serial.e_train_curves).cwiseAbs().maxCoeff() ==
        0.0);
  CHECK((par.e_test_curves - serial.e_test_curves).cwiseAbs().maxCoeff() ==
        0.0);
  REQUIRE(par.mode_curves.size() == serial.mode_curves.size());
  for (std::size_t r = 0; r < par.mode_curves.size(); ++r)
    CHECK((par.mode_curves[r] - serial.mode_curves[r]).cwiseAbs().maxCoeff() ==
          0.0);
  CHECK((par.stilde_samples - serial.stilde_samples).cwiseAbs().maxCoeff() ==
        0.0);
}

TEST_CASE("the single-neuron experiment is schedule-independent") {
  SingleNeuronConfig cfg;
  cfg.xs = {1.0, -0.5};
  cfg.ys = {0.4, 0.1};
  cfg.zeta = 1.2;
  cfg.dt = 1e-3;
  cfg.steps = 500;
  cfg.n_runs = 24;
  cfg.record_stride = 250;
  cfg.seed = 5;

  const SingleNeuronResult serial = single_neuron_experiment_serial(cfg);
  for (int workers : {2, 7}) {
    const SingleNeuronResult par =
        with_threads(workers, [&] { return single_neuron_experiment(cfg); });
    CHECK(par.collapse_frequency == serial.collapse_frequency);
    CHECK(exact_equal(par.final_norms, serial.final_norms));
    CHECK(par.divergent == serial.divergent);
    REQUIRE(par.norm_curves.size() == serial.norm_curves.size());
    for (std::size_t r = 0; r < par.norm_curves.size(); ++r)
      CHECK(exact_equal(par.norm_curves[r], serial.norm_curves[r]));
  }
}

TEST_CASE("the two-neuron experiment is schedule-independent") {
  TwoNeuronConfig cfg;
  cfg.n_examples = 8;
  cfg.lr = 0.1;
  cfg.noise_std = 2.0;
  cfg.steps = 400;
  cfg.n_runs = 12;
  cfg.record_stride = 200;
  cfg.seed = 21;

  const TwoNeuronResult serial = two_neuron_experiment_serial(cfg);
  const TwoNeuronResult par =
      with_threads(4, [&] { return two_neuron_experiment(cfg); });
  CHECK(exact_equal(par.final_distance, serial.final_distance));
  CHECK(par.median_final_distance == serial.median_final_distance);
  CHECK(par.divergent == serial.divergent);
  for (std::size_t r = 0; r < par.distance_curves.size(); ++r)
    CHECK(exact_equal(par.distance_curves[r], serial.distance_curves[r]));
}

TEST_CASE("pairwise distance matrices are schedule-independent") {
  auto rng = Xoshiro256pp(99);
  WeightSnapshot snap;
  SnapshotLayer hidden;
  hidden.name = "hidden";
  hidden.in_dim = 10;
  hidden.out_dim = 40;
  hidden.incoming.resize(40, 10);
  for (Eigen::Index i = 0; i < 40; ++i)
    for (Eigen::Index j = 0; j < 10; ++j) hidden.incoming(i, j) = rng.normal();
  hidden.bias = Eigen::VectorXd::Zero(40);
  snap.layers.push_back(hidden);
  SnapshotLayer out;
  out.name = "out";
  out.in_dim = 40;
  out.out_dim = 3;
  out.incoming.resize(3, 40);
  for (Eigen::Index i = 0; i < 3; ++i)
    for (Eigen::Index j = 0; j < 40; ++j) out.incoming(i, j) = rng.normal();
  out.bias = Eigen::VectorXd::Zero(3);
  snap.layers.push_back(out);

  const DistanceMatrix serial = pairwise_matrix_serial(snap, "hidden");
  for (int workers : {2, 6}) {
    const DistanceMatrix par =
        with_threads(workers, [&] { return pairwise_matrix(snap, "hidden"); });
    CHECK((par.entries - serial.entries).cwiseAbs().maxCoeff() == 0.0);
  }
}
