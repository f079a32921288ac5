// Wall-clock comparison of the OpenMP kernels against their serial
// references. Besides the timings, the run asserts that both variants give
// identical results, which is the contract the tests rely on.
//
// Usage: bench_parallel [workers]   (default: the OpenMP runtime's choice)

#include <omp.h>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <string>
#include <vector>

#include "collapse/detector.hpp"
#include "collapse/quartic.hpp"
#include "collapse/rng.hpp"
#include "collapse/sde.hpp"
#include "collapse/snapshot_io.hpp"
#include "collapse/teacher_student.hpp"

using namespace collapse;
using clock_type = std::chrono::steady_clock;

namespace {

double seconds_of(const std::function<void()>& f) {
  const auto t0 = clock_type::now();
  f();
  const auto t1 = clock_type::now();
  return std::chrono::duration<double>(t1 - t0).count();
}

void report(const char* name, double serial_s, double parallel_s,
            bool identical) {
  std::printf("%-22s %10.3fs %12.3fs %9.2fx   %s\n", name, serial_s,
              parallel_s, serial_s / parallel_s,
              identical ? "identical" : "MISMATCH");
}

}  // namespace

int main(int argc, char** argv) {
  if (argc > 1) omp_set_num_threads(std::atoi(argv[1]));
  std::printf("workers: %d\n", omp_get_max_threads());
  std::printf("%-22s %11s %13s %10s\n", "kernel", "serial", "parallel",
              "speedup");

  {
    std::vector<double> zetas(12);
    for (int i = 0; i < 12; ++i) zetas[i] = 0.25 * i;
    IntegratorConfig cfg;
    cfg.dt = 0.005;
    cfg.seed = 2;
    const std::vector<std::int64_t> checkpoints{0, 2000, 4000};
    SweepResult a, b;
    const double ts = seconds_of(
        [&] { a = zeta_sweep_serial(1.5, zetas, cfg, 400, 1e-15, checkpoints); });
    const double tp = seconds_of(
        [&] { b = zeta_sweep(1.5, zetas, cfg, 400, 1e-15, checkpoints); });
    bool same = a.divergent_per_zeta == b.divergent_per_zeta;
    for (std::size_t c = 0; same && c < a.probability.size(); ++c)
      same = a.probability[c] == b.probability[c];
    report("quartic zeta sweep", ts, tp, same);
  }

  {
    LrDropConfig cfg;
    cfg.n = 16;
    cfg.m = 16;
    cfg.k = 4;
    cfg.p = 64;
    cfg.sigma_eps = 0.02;
    cfg.zeta = 2.0;
    cfg.schedule = {{0.02, 400, 0}, {1e-3, 400, 0}};
    cfg.record_stride = 100;
    cfg.replicates = 8;
    cfg.seed = 3;
    cfg.validate();
    LrDropResult a, b;
    const double ts = seconds_of([&] { a = lr_drop_experiment_serial(cfg); });
    const double tp = seconds_of([&] { b = lr_drop_experiment(cfg); });
    bool same = a.mean_e_test == b.mean_e_test &&
                a.mean_e_train == b.mean_e_train;
    same = same && (a.stilde_samples - b.stilde_samples).cwiseAbs().maxCoeff() ==
                       0.0;
    report("lr-drop experiment", ts, tp, same);
  }

  {
    auto rng = Xoshiro256pp(4);
    WeightSnapshot snap;
    SnapshotLayer hidden;
    hidden.name = "hidden";
    hidden.in_dim = 64;
    hidden.out_dim = 768;
    hidden.incoming.resize(768, 64);
    for (Eigen::Index i = 0; i < 768; ++i)
      for (Eigen::Index j = 0; j < 64; ++j) hidden.incoming(i, j) = rng.normal();
    hidden.bias = Eigen::VectorXd::Zero(768);
    snap.layers.push_back(hidden);
    SnapshotLayer out;
    out.name = "out";
    out.in_dim = 768;
    out.out_dim = 16;
    out.incoming.resize(16, 768);
    for (Eigen::Index i = 0; i < 16; ++i)
      for (Eigen::Index j = 0; j < 768; ++j) out.incoming(i, j) = rng.normal();
    out.bias = Eigen::VectorXd::Zero(16);
    snap.layers.push_back(out);

    DistanceMatrix a, b;
    const double ts =
        seconds_of([&] { a = pairwise_matrix_serial(snap, "hidden"); });
    const double tp = seconds_of([&] { b = pairwise_matrix(snap, "hidden"); });
    const bool same = (a.entries - b.entries).cwiseAbs().maxCoeff() == 0.0;
    report("pairwise distances", ts, tp, same);
  }

  return 0;
}
