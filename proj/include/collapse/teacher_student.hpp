#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Core>

#include "collapse/rng.hpp"
#include "collapse/sde.hpp"

namespace collapse {

// Linear teacher-student setup: a low-rank teacher produces noisy labels for
// whitened Gaussian inputs, and a two-layer linear student W2*W1 is trained
// by full-batch gradient descent whose label noise is structured to act mode
// by mode in the singular basis of the data covariance. Under spectral
// balanced initialization the matrix dynamics decouple into independent
// scalar processes per singular mode, which this module also exposes in
// closed form.

struct TeacherSpec {
  Eigen::Index n = 0;      // input dimension
  Eigen::Index m = 0;      // output dimension
  Eigen::Index k = 0;      // teacher rank
  Eigen::VectorXd sbar;    // k singular values, positive, descending
  Eigen::MatrixXd u_bar;   // m x k, orthonormal columns
  Eigen::MatrixXd v_bar;   // n x k, orthonormal columns
  double aspect = 1.0;     // m / n

  Eigen::MatrixXd weight() const;  // u_bar * diag(sbar) * v_bar^T
};

// Orthonormal factors come from QR of seeded Gaussian matrices with the sign
// convention diag(R) > 0. Throws ConfigError when k is out of range or sbar
// is not positive descending of length k.
TeacherSpec generate_teacher(Eigen::Index n, Eigen::Index m, Eigen::Index k,
                             const Eigen::VectorXd& sbar, std::uint64_t seed);

struct TrainingData {
  Eigen::MatrixXd x;         // n x p inputs
  Eigen::MatrixXd y;         // m x p labels
  Eigen::Index p = 0;
  double sigma_eps = 0.0;    // label noise std used at generation
  bool whitened = false;
  Eigen::MatrixXd sigma_xx;  // x * x^T
  Eigen::MatrixXd sigma_yx;  // y * x^T
  // Thin SVD of sigma_yx, cached because both the noise structure and the
  // initialization live in this basis. r = min(m, n) modes, descending.
  Eigen::VectorXd stilde;    // r
  Eigen::MatrixXd u_tilde;   // m x r
  Eigen::MatrixXd v_tilde;   // n x r

  Eigen::Index n_modes() const { return stilde.size(); }
};

// Inputs are Gaussian; with whiten set they are replaced by the nearest
// matrix with x * x^T = I (polar factor via thin SVD), which requires p >= n.
// Labels are teacher outputs plus iid N(0, sigma_eps^2) entries.
TrainingData generate_dataset(const TeacherSpec& teacher, Eigen::Index p,
                              double sigma_eps, bool whiten,
                              std::uint64_t seed);

struct StudentState {
  Eigen::MatrixXd w1;     // d x n
  Eigen::MatrixXd w2;     // m x d
  // Hidden-coordinate rotation chosen at initialization; the balance
  // diagnostics read the factor weights in this basis.
  Eigen::MatrixXd basis;  // d x d, orthonormal

  Eigen::Index hidden_dim() const { return w1.rows(); }
  Eigen::MatrixXd composite() const { return w2 * w1; }
};

// w1 = sqrt(init_scale) * O * Vtilde_d^T and w2 = sqrt(init_scale) *
// Utilde_d * O^T, so every tracked mode starts at init_scale, the two factors
// carry equal power, and the composite is aligned with the data singular
// basis. d = -1 picks full capacity min(m, n); otherwise d <= min(m, n).
StudentState spectral_balanced_init(const TrainingData& data, Eigen::Index d,
                                    double init_scale, std::uint64_t seed);

// Signed per-mode weights: diagonal of Utilde^T * w2 * w1 * Vtilde. Finite
// step sizes leak a little mass off the diagonal; callers that depend on the
// decoupling should watch offdiagonal_leakage.
Eigen::VectorXd mode_signals(const StudentState& student,
                             const TrainingData& data);
// max |offdiagonal| / max |diagonal| of the mode matrix (0 for a 1x1 matrix).
double offdiagonal_leakage(const StudentState& student,
                           const TrainingData& data);
// Per-hidden-coordinate power imbalance diag(O^T (w1 w1^T - w2^T w2) O).
Eigen::VectorXd balance_residuals(const StudentState& student);

// ---------------------------------------------------------------------------
// Scalar mode process
// ---------------------------------------------------------------------------

struct ModeParams {
  double stilde = 0.0;  // data singular value feeding this mode, >= 0
  double eta = 0.0;     // learning rate, > 0
  double zeta = 0.0;    // label noise amplitude, >= 0
  double s0 = 0.0;      // initial mode weight, > 0

  double noise_level() const { return eta * zeta * zeta; }
  double collapse_threshold() const { return 0.5 * noise_level(); }
  void validate() const;  // throws ConfigError
};

// d shat = 2 shat (stilde + eta zeta^2 / 2 - shat) dt
//          + 2 sqrt(eta zeta^2) shat dB.  shat = 0 is an invariant point.
SdeSystem1D mode_sde_system(const ModeParams& mp);

// Brownian motion sampled on a uniform grid, value[0] = 0.
struct BrownianPath {
  double dt = 0.0;
  std::vector<double> value;

  static BrownianPath sample(double dt, std::size_t n_steps, Xoshiro256pp& rng);
  // Every second point of a finer path; increments are sums of fine ones, so
  // coarse and fine runs see the same underlying noise.
  BrownianPath thinned() const;
};

struct ModePath {
  std::vector<double> time;
  std::vector<double> shat;
};

// Pathwise solution of the mode process driven by the given Brownian path:
//   shat(t) = e^{phi(t)} / (2 int_0^t e^{phi}, + 1/s0),
//   phi(t)  = (2 stilde - eta zeta^2) t + 2 sqrt(eta zeta^2) B_t,
// with the integral taken by the trapezoidal rule on the grid. The
// denominator never drops below 1/s0, so the expression is total.
ModePath exact_mode_solution(const ModeParams& mp, const BrownianPath& path);

struct ModeVerdict {
  bool collapsed = false;        // stilde <= eta zeta^2 / 2
  double threshold = 0.0;        // eta zeta^2 / 2
  double stationary_argmax = 0;  // stilde - 1.5 eta zeta^2 when positive
  ModeParams params;

  // Heuristic mean curve. This interpolation between the known t -> 0 and
  // t -> infinity limits is unproven; treat it as a diagnostic only and keep
  // the conjecture label attached wherever it is reported.
  double conjectured_mean(double t) const;
};

ModeVerdict mode_phase_verdict(const ModeParams& mp);

// Stationary law of the mode process, a Gamma distribution in disguise:
//   p(shat) = shat^{shape-1} e^{-shat/scale} / Z,
//   shape = stilde/(eta zeta^2) - 1/2,  scale = eta zeta^2.
// At or below the collapse threshold the normalizer diverges and the mass
// concentrates at zero; the evaluator is unavailable there on purpose.
struct ModeStationaryDensity {
  bool collapsed = false;
  double shape = 0.0;
  double scale = 0.0;
  double log_normalizer = 0.0;  // log Z from quadrature, not the Gamma formula

  double density(double shat) const;  // throws ConfigError when collapsed
};

ModeStationaryDensity stationary_mode_density(const ModeParams& mp);

// ---------------------------------------------------------------------------
// Full matrix training
// ---------------------------------------------------------------------------

struct SchedulePhase {
  double lr = 0.0;
  std::int64_t steps = 0;
  // Linear ramp 0 -> lr over the first warmup_steps of the phase.
  std::int64_t warmup_steps = 0;
};

struct StudentRunConfig {
  std::vector<SchedulePhase> schedule;
  double zeta = 0.0;
  std::int64_t record_stride = 100;
  std::uint64_t seed = 0;

  void validate() const;
};

struct StudentTrajectory {
  std::vector<std::int64_t> steps;          // global step of each record
  std::vector<Eigen::VectorXd> mode_curve;  // signed mode signals, r entries
  std::vector<Eigen::VectorXd> balance;     // residuals, d entries
  std::vector<double> e_train;
  std::vector<double> e_test;
  std::vector<std::size_t> phase_end_records;  // record index per phase end
  double max_offdiagonal = 0.0;  // worst relative leakage seen at records
  bool decoupling_warning = false;  // leakage exceeded 1e-6 at some record
  StudentState final_state;
};

// Full-batch updates with structured label noise, both factors stepped from
// the same old values:
//   M  = w2 w1 sigma_xx - sigma_yx + Utilde diag(z) Vtilde^T sigma_xx
//   w1 -= lr * w2^T M,   w2 -= lr * M w1^T,   z fresh N(0, zeta^2) each step.
StudentTrajectory simulate_student_sgd(const TrainingData& data,
                                       const TeacherSpec& teacher,
                                       StudentState state,
                                       const StudentRunConfig& config);

struct ErrorReport {
  double e_train = 0.0;             // ||w_hat X - Y||_F^2 / ||Y||_F^2, direct
  double e_train_decomposed = 0.0;  // same quantity via the SVD cross terms
  double e_test = 0.0;              // exact expectation over whitened inputs
  // Per-student-mode contributions; e_test = 1 + sum(mode_test_terms).
  Eigen::VectorXd mode_test_terms;
};

ErrorReport error_report(const Eigen::MatrixXd& w_hat,
                         const TeacherSpec& teacher, const TrainingData& data);

// ---------------------------------------------------------------------------
// Random matrix predictions for the data covariance spectrum
// ---------------------------------------------------------------------------

struct RmtPrediction {
  double stilde = 0.0;   // top data singular value produced by this signal
  double overlap = 0.0;  // |<u_bar, u_tilde>| * |<v_bar, v_tilde>|
};

// Transfer of a teacher singular value sbar through additive noise at aspect
// ratio m/n. Below the detectability threshold sbar <= aspect^{1/4} the top
// value sticks to the bulk edge 1 + sqrt(aspect) and the overlap vanishes.
RmtPrediction rmt_alignment(double sbar, double aspect);

// Bulk density of pure-noise singular values; aspect in (0, 1], support
// [1 - sqrt(aspect), 1 + sqrt(aspect)].
double mp_density(double stilde, double aspect);

// ---------------------------------------------------------------------------
// Learning-rate drop experiment
// ---------------------------------------------------------------------------

struct LrDropConfig {
  Eigen::Index n = 64;
  Eigen::Index m = 64;
  Eigen::Index k = 8;
  Eigen::VectorXd sbar;          // defaults to k values evenly from 1 to 0.5
  Eigen::Index p = 1024;
  double sigma_eps = 0.0;
  Eigen::Index hidden_dim = -1;  // -1 = min(m, n)
  double init_scale = 1e-4;
  double zeta = 0.0;
  std::vector<SchedulePhase> schedule;
  std::int64_t record_stride = 100;
  int replicates = 8;
  std::uint64_t seed = 0;

  void validate() const;
  Eigen::VectorXd resolved_sbar() const;
};

struct LrDropResult {
  TeacherSpec teacher;
  std::vector<std::int64_t> record_steps;      // shared across replicates
  std::vector<std::size_t> phase_end_records;  // indices into record_steps
  Eigen::MatrixXd e_train_curves;              // replicates x records
  Eigen::MatrixXd e_test_curves;               // replicates x records
  std::vector<Eigen::MatrixXd> mode_curves;    // per replicate, records x r
  Eigen::MatrixXd stilde_samples;              // replicates x r
  std::vector<double> mean_e_train;            // per record
  std::vector<double> mean_e_test;
  // Phase-1 verdict per mode, evaluated at the median observed stilde.
  std::vector<ModeVerdict> phase1_verdicts;
};

// Fresh data, init, and noise streams per replicate, all derived from the
// master seed; replicates run independently, so two configs differing only
// in zeta see identical teachers, data, and initializations.
LrDropResult lr_drop_experiment(const LrDropConfig& config);
// Reference implementation without worker parallelism; must agree with
// lr_drop_experiment bit for bit.
LrDropResult lr_drop_experiment_serial(const LrDropConfig& config);

}  // namespace collapse
