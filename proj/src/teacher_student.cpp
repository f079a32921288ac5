#include "collapse/teacher_student.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <limits>
#include <numbers>
#include <string>

#include <Eigen/Dense>

#include "collapse/errors.hpp"
#include "collapse/quadrature.hpp"
#include "collapse/stats.hpp"

namespace collapse {

namespace {

Eigen::MatrixXd gaussian_matrix(Eigen::Index rows, Eigen::Index cols,
                                Xoshiro256pp& rng) {
  Eigen::MatrixXd a(rows, cols);
  // Column-major fill; the draw order is part of the reproducibility
  // contract, so keep it in sync with the storage order.
  for (Eigen::Index c = 0; c < cols; ++c)
    for (Eigen::Index r = 0; r < rows; ++r) a(r, c) = rng.normal();
  return a;
}

// Thin Q factor of a seeded Gaussian matrix with diag(R) > 0, which makes the
// result a unique function of the input rather than of QR internals.
Eigen::MatrixXd orthonormal_columns(Eigen::Index rows, Eigen::Index cols,
                                    Xoshiro256pp& rng) {
  const Eigen::MatrixXd a = gaussian_matrix(rows, cols, rng);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
  Eigen::MatrixXd q =
      qr.householderQ() * Eigen::MatrixXd::Identity(rows, cols);
  const auto r_diag = qr.matrixQR().diagonal();
  for (Eigen::Index j = 0; j < cols; ++j)
    if (r_diag(j) < 0.0) q.col(j) = -q.col(j);
  return q;
}

struct ThinSvd {
  Eigen::MatrixXd u;
  Eigen::VectorXd s;
  Eigen::MatrixXd v;
};

ThinSvd thin_svd(const Eigen::MatrixXd& a) {
  ThinSvd out;
  if (std::min(a.rows(), a.cols()) <= 128) {
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(
        a, Eigen::ComputeThinU | Eigen::ComputeThinV);
    out.u = svd.matrixU();
    out.s = svd.singularValues();
    out.v = svd.matrixV();
  } else {
    Eigen::BDCSVD<Eigen::MatrixXd> svd(
        a, Eigen::ComputeThinU | Eigen::ComputeThinV);
    out.u = svd.matrixU();
    out.s = svd.singularValues();
    out.v = svd.matrixV();
  }
  return out;
}

// Signed mode matrix in the data singular basis.
Eigen::MatrixXd mode_matrix(const StudentState& student,
                            const TrainingData& data) {
  return data.u_tilde.transpose() * (student.w2 * student.w1) * data.v_tilde;
}

}  // namespace

Eigen::MatrixXd TeacherSpec::weight() const {
  return u_bar * sbar.asDiagonal() * v_bar.transpose();
}

TeacherSpec generate_teacher(Eigen::Index n, Eigen::Index m, Eigen::Index k,
                             const Eigen::VectorXd& sbar, std::uint64_t seed) {
  if (n < 1 || m < 1) throw ConfigError("teacher: dimensions must be >= 1");
  if (k < 1 || k > std::min(n, m))
    throw ConfigError("teacher: rank k must lie in [1, min(n, m)], got " +
                      std::to_string(k));
  if (sbar.size() != k)
    throw ConfigError("teacher: expected " + std::to_string(k) +
                      " singular values, got " + std::to_string(sbar.size()));
  for (Eigen::Index i = 0; i < k; ++i) {
    if (!(sbar(i) > 0.0))
      throw ConfigError("teacher: singular values must be positive");
    if (i > 0 && sbar(i) > sbar(i - 1))
      throw ConfigError("teacher: singular values must be sorted descending");
  }

  TeacherSpec spec;
  spec.n = n;
  spec.m = m;
  spec.k = k;
  spec.sbar = sbar;
  Xoshiro256pp rng(seed);
  spec.u_bar = orthonormal_columns(m, k, rng);
  spec.v_bar = orthonormal_columns(n, k, rng);
  spec.aspect = static_cast<double>(m) / static_cast<double>(n);
  return spec;
}

TrainingData generate_dataset(const TeacherSpec& teacher, Eigen::Index p,
                              double sigma_eps, bool whiten,
                              std::uint64_t seed) {
  if (p < 1) throw ConfigError("dataset: sample count must be >= 1");
  if (!(sigma_eps >= 0.0))
    throw ConfigError("dataset: label noise std must be >= 0");
  if (whiten && p < teacher.n)
    throw ConfigError("dataset: whitening needs p >= n, got p = " +
                      std::to_string(p) + ", n = " + std::to_string(teacher.n));

  TrainingData data;
  data.p = p;
  data.sigma_eps = sigma_eps;
  data.whitened = whiten;

  Xoshiro256pp rng(seed);
  data.x = gaussian_matrix(teacher.n, p, rng);
  if (whiten) {
    // Polar factor: the closest matrix with orthonormal rows.
    const ThinSvd xs = thin_svd(data.x);
    data.x = xs.u * xs.v.transpose();
  }
  data.y = teacher.weight() * data.x;
  for (Eigen::Index c = 0; c < p; ++c)
    for (Eigen::Index r = 0; r < teacher.m; ++r)
      data.y(r, c) += sigma_eps * rng.normal();

  data.sigma_xx = data.x * data.x.transpose();
  data.sigma_yx = data.y * data.x.transpose();
  const ThinSvd ys = thin_svd(data.sigma_yx);
  data.stilde = ys.s;
  data.u_tilde = ys.u;
  data.v_tilde = ys.v;
  return data;
}

StudentState spectral_balanced_init(const TrainingData& data, Eigen::Index d,
                                    double init_scale, std::uint64_t seed) {
  const Eigen::Index r = data.n_modes();
  if (d == -1) d = r;
  if (d < 1 || d > r)
    throw ConfigError("init: hidden width must lie in [1, min(m, n)], got " +
                      std::to_string(d));
  if (!(init_scale >= 0.0)) throw ConfigError("init: scale must be >= 0");

  Xoshiro256pp rng(seed);
  StudentState state;
  state.basis = orthonormal_columns(d, d, rng);
  const double a = std::sqrt(init_scale);
  state.w1 = a * state.basis * data.v_tilde.leftCols(d).transpose();
  state.w2 = a * data.u_tilde.leftCols(d) * state.basis.transpose();
  return state;
}

Eigen::VectorXd mode_signals(const StudentState& student,
                             const TrainingData& data) {
  return mode_matrix(student, data).diagonal();
}

double offdiagonal_leakage(const StudentState& student,
                           const TrainingData& data) {
  const Eigen::MatrixXd c = mode_matrix(student, data);
  const double diag_max = c.diagonal().cwiseAbs().maxCoeff();
  Eigen::MatrixXd off = c;
  off.diagonal().setZero();
  const double off_max = off.cwiseAbs().maxCoeff();
  if (diag_max == 0.0)
    return off_max == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
  return off_max / diag_max;
}

Eigen::VectorXd balance_residuals(const StudentState& student) {
  const Eigen::MatrixXd g = student.w1 * student.w1.transpose() -
                            student.w2.transpose() * student.w2;
  return (student.basis.transpose() * g * student.basis).diagonal();
}

// ---------------------------------------------------------------------------
// Scalar mode process
// ---------------------------------------------------------------------------

void ModeParams::validate() const {
  if (!(stilde >= 0.0) || !std::isfinite(stilde))
    throw ConfigError("mode params: stilde must be >= 0");
  if (!(eta > 0.0) || !std::isfinite(eta))
    throw ConfigError("mode params: eta must be > 0");
  if (!(zeta >= 0.0) || !std::isfinite(zeta))
    throw ConfigError("mode params: zeta must be >= 0");
  if (!(s0 > 0.0) || !std::isfinite(s0))
    throw ConfigError("mode params: s0 must be > 0");
}

SdeSystem1D mode_sde_system(const ModeParams& mp) {
  mp.validate();
  const double level = mp.stilde + 0.5 * mp.noise_level();
  const double amp = 2.0 * std::sqrt(mp.noise_level());
  SdeSystem1D system;
  system.drift = [level](double s) { return 2.0 * s * (level - s); };
  system.diffusion_amp = [amp](double s) { return amp * s; };
  return system;
}

BrownianPath BrownianPath::sample(double dt, std::size_t n_steps,
                                  Xoshiro256pp& rng) {
  if (!(dt > 0.0)) throw ConfigError("brownian path: dt must be > 0");
  BrownianPath path;
  path.dt = dt;
  path.value.resize(n_steps + 1);
  path.value[0] = 0.0;
  const double scale = std::sqrt(dt);
  for (std::size_t i = 1; i <= n_steps; ++i)
    path.value[i] = path.value[i - 1] + scale * rng.normal();
  return path;
}

BrownianPath BrownianPath::thinned() const {
  if (value.empty()) throw ConfigError("brownian path: empty path");
  BrownianPath out;
  out.dt = 2.0 * dt;
  const std::size_t n_coarse = (value.size() - 1) / 2;
  out.value.resize(n_coarse + 1);
  for (std::size_t i = 0; i <= n_coarse; ++i) out.value[i] = value[2 * i];
  return out;
}

ModePath exact_mode_solution(const ModeParams& mp, const BrownianPath& path) {
  mp.validate();
  if (path.value.empty() || path.value[0] != 0.0)
    throw ConfigError("mode solution: path must start at B_0 = 0");
  if (!(path.dt > 0.0)) throw ConfigError("mode solution: dt must be > 0");

  const double growth = 2.0 * mp.stilde - mp.noise_level();
  const double amp = 2.0 * std::sqrt(mp.noise_level());

  // All exponentials are kept relative to a running shift so that growing
  // configurations cannot overflow: with phi the raw exponent,
  //   shat = e^{phi - shift} / (2 I_shifted + e^{-shift} / s0).
  double shift = 0.0;
  double integral = 0.0;  // trapezoid of e^{phi - shift}
  double prev = 1.0;      // e^{phi_0 - shift}

  ModePath out;
  out.time.resize(path.value.size());
  out.shat.resize(path.value.size());
  out.time[0] = 0.0;
  out.shat[0] = mp.s0;

  for (std::size_t j = 1; j < path.value.size(); ++j) {
    const double t = static_cast<double>(j) * path.dt;
    const double phi = growth * t + amp * path.value[j];
    if (phi > shift + 30.0) {
      const double rescale = std::exp(shift - phi);
      integral *= rescale;
      prev *= rescale;
      shift = phi;
    }
    const double cur = std::exp(phi - shift);
    integral += 0.5 * path.dt * (prev + cur);
    prev = cur;
    out.time[j] = t;
    out.shat[j] = cur / (2.0 * integral + std::exp(-shift) / mp.s0);
  }
  return out;
}

double ModeVerdict::conjectured_mean(double t) const {
  if (!(t >= 0.0)) throw ConfigError("conjectured mean: t must be >= 0");
  const double g = 2.0 * params.stilde - params.noise_level();
  const double s0 = params.s0;
  if (g == 0.0) return 1.0 / (2.0 * t + 1.0 / s0);
  const double gt = g * t;
  if (gt > 30.0) {
    const double e = std::exp(-gt);
    return 0.5 * g / (1.0 - e * (1.0 - 0.5 * g / s0));
  }
  return 0.5 * g * std::exp(gt) / (std::expm1(gt) + 0.5 * g / s0);
}

ModeVerdict mode_phase_verdict(const ModeParams& mp) {
  mp.validate();
  ModeVerdict v;
  v.params = mp;
  v.threshold = mp.collapse_threshold();
  v.collapsed = mp.stilde <= v.threshold;
  const double excess = mp.stilde - 1.5 * mp.noise_level();
  v.stationary_argmax = excess > 0.0 ? excess : 0.0;
  return v;
}

double ModeStationaryDensity::density(double shat) const {
  if (collapsed)
    throw ConfigError(
        "stationary density: collapsed regime concentrates at zero and has "
        "no density evaluator");
  if (shat <= 0.0) return 0.0;
  return std::exp((shape - 1.0) * std::log(shat) - shat / scale -
                  log_normalizer);
}

ModeStationaryDensity stationary_mode_density(const ModeParams& mp) {
  mp.validate();
  const double level = mp.noise_level();
  if (!(level > 0.0))
    throw ConfigError("stationary density: requires eta > 0 and zeta > 0");

  ModeStationaryDensity out;
  out.scale = level;
  out.shape = mp.stilde / level - 0.5;
  out.collapsed = out.shape <= 0.0;
  if (out.collapsed) return out;

  // Normalizer by quadrature after substituting shat = e^u, which removes
  // the endpoint singularity of shat^{shape-1} and turns both tails into
  // clean exponential decays. The integrand is scaled by its peak value.
  const double u_peak = std::log(out.shape * out.scale);
  const double log_peak = out.shape * u_peak - out.shape;
  const double shape = out.shape;
  const double scale = out.scale;
  const auto integrand = [shape, scale, log_peak](double u) {
    return std::exp(shape * u - std::exp(u) / scale - log_peak);
  };
  const auto right = integrate_semi_infinite(integrand, u_peak, 1e-8);
  const auto left = integrate_semi_infinite(
      [&](double v) { return integrand(2.0 * u_peak - v); }, u_peak, 1e-8);
  out.log_normalizer = log_peak + std::log(right.value + left.value);
  return out;
}

// ---------------------------------------------------------------------------
// Full matrix training
// ---------------------------------------------------------------------------

void StudentRunConfig::validate() const {
  if (schedule.empty()) throw ConfigError("student run: empty schedule");
  for (const auto& phase : schedule) {
    if (!(phase.lr > 0.0) || !std::isfinite(phase.lr))
      throw ConfigError("student run: learning rate must be > 0");
    if (phase.steps < 0)
      throw ConfigError("student run: phase step count must be >= 0");
    if (phase.warmup_steps < 0 || phase.warmup_steps > phase.steps)
      throw ConfigError("student run: warmup must lie in [0, steps]");
  }
  if (!(zeta >= 0.0) || !std::isfinite(zeta))
    throw ConfigError("student run: zeta must be >= 0");
  if (record_stride < 1)
    throw ConfigError("student run: record stride must be >= 1");
}

StudentTrajectory simulate_student_sgd(const TrainingData& data,
                                       const TeacherSpec& teacher,
                                       StudentState state,
                                       const StudentRunConfig& config) {
  config.validate();
  const Eigen::Index n = data.x.rows();
  const Eigen::Index m = data.y.rows();
  const Eigen::Index d = state.hidden_dim();
  const Eigen::Index r = data.n_modes();
  if (state.w1.cols() != n || state.w2.rows() != m || state.w2.cols() != d)
    throw ConfigError("student run: state shape does not match data");
  if (state.basis.rows() != d || state.basis.cols() != d)
    throw ConfigError("student run: basis must be hidden_dim x hidden_dim");
  if (teacher.n != n || teacher.m != m)
    throw ConfigError("student run: teacher shape does not match data");

  Xoshiro256pp rng(config.seed);
  const Eigen::MatrixXd vt_sxx = data.v_tilde.transpose() * data.sigma_xx;

  StudentTrajectory out;
  const auto record = [&](std::int64_t step, bool force) {
    if (!force && step % config.record_stride != 0) return;
    if (!out.steps.empty() && out.steps.back() == step) return;
    out.steps.push_back(step);
    const Eigen::MatrixXd c = mode_matrix(state, data);
    out.mode_curve.push_back(c.diagonal());
    const double diag_max = c.diagonal().cwiseAbs().maxCoeff();
    Eigen::MatrixXd off = c;
    off.diagonal().setZero();
    const double off_max = off.cwiseAbs().maxCoeff();
    const double leak =
        diag_max == 0.0
            ? (off_max == 0.0 ? 0.0 : std::numeric_limits<double>::infinity())
            : off_max / diag_max;
    out.max_offdiagonal = std::max(out.max_offdiagonal, leak);
    if (leak > 1e-6) out.decoupling_warning = true;
    out.balance.push_back(balance_residuals(state));
    const ErrorReport err = error_report(state.composite(), teacher, data);
    out.e_train.push_back(err.e_train);
    out.e_test.push_back(err.e_test);
  };
  record(0, true);

  Eigen::MatrixXd w1_sxx(d, n), residual(m, n), noise_rows(r, n);
  Eigen::MatrixXd w1_next(d, n), w2_next(m, d);
  Eigen::VectorXd z(r);

  std::int64_t global = 0;
  for (const auto& phase : config.schedule) {
    for (std::int64_t s = 0; s < phase.steps; ++s) {
      double lr = phase.lr;
      if (s < phase.warmup_steps)
        lr = phase.lr * static_cast<double>(s + 1) /
             static_cast<double>(phase.warmup_steps);

      // The noise is drawn even when zeta = 0 so that runs differing only in
      // zeta consume identical stream positions.
      for (Eigen::Index j = 0; j < r; ++j) z(j) = config.zeta * rng.normal();

      w1_sxx.noalias() = state.w1 * data.sigma_xx;
      residual.noalias() = state.w2 * w1_sxx;
      residual -= data.sigma_yx;
      noise_rows.noalias() = z.asDiagonal() * vt_sxx;
      residual.noalias() += data.u_tilde * noise_rows;

      // Both factors step from the pre-update values.
      w1_next.noalias() = state.w1 - lr * (state.w2.transpose() * residual);
      w2_next.noalias() = state.w2 - lr * (residual * state.w1.transpose());
      state.w1.swap(w1_next);
      state.w2.swap(w2_next);

      ++global;
      record(global, false);
    }
    record(global, true);
    out.phase_end_records.push_back(out.steps.size() - 1);
  }

  out.final_state = std::move(state);
  return out;
}

ErrorReport error_report(const Eigen::MatrixXd& w_hat,
                         const TeacherSpec& teacher, const TrainingData& data) {
  const Eigen::Index m = data.y.rows();
  const Eigen::Index n = data.x.rows();
  if (w_hat.rows() != m || w_hat.cols() != n)
    throw ConfigError("error report: composite weight must be m x n");
  if (teacher.m != m || teacher.n != n)
    throw ConfigError("error report: teacher shape does not match data");
  const double y_norm2 = data.y.squaredNorm();
  if (!(y_norm2 > 0.0))
    throw ConfigError("error report: labels are identically zero");

  ErrorReport report;
  report.e_train = (w_hat * data.x - data.y).squaredNorm() / y_norm2;

  const ThinSvd ws = thin_svd(w_hat);
  const Eigen::Index q = ws.s.size();

  // Student power through the input covariance; the whitened branch is the
  // pure singular-value route.
  const double power =
      data.whitened ? ws.s.squaredNorm()
                    : (w_hat * data.sigma_xx).cwiseProduct(w_hat).sum();
  const Eigen::MatrixXd ua = data.u_tilde.transpose() * ws.u;  // r x q
  const Eigen::MatrixXd va = data.v_tilde.transpose() * ws.v;  // r x q
  const double cross_train = data.stilde.dot(ua.cwiseProduct(va) * ws.s);
  report.e_train_decomposed =
      (power - 2.0 * cross_train + y_norm2) / y_norm2;

  const double teacher_power = teacher.sbar.squaredNorm();
  const Eigen::MatrixXd ub = teacher.u_bar.transpose() * ws.u;  // k x q
  const Eigen::MatrixXd vb = teacher.v_bar.transpose() * ws.v;  // k x q
  const Eigen::VectorXd cross_per_mode =
      (ub.cwiseProduct(vb)).transpose() * teacher.sbar;  // q
  report.mode_test_terms.resize(q);
  for (Eigen::Index j = 0; j < q; ++j)
    report.mode_test_terms(j) =
        (ws.s(j) * ws.s(j) - 2.0 * ws.s(j) * cross_per_mode(j)) /
        teacher_power;
  report.e_test = 1.0 + report.mode_test_terms.sum();
  return report;
}

// ---------------------------------------------------------------------------
// Random matrix predictions
// ---------------------------------------------------------------------------

RmtPrediction rmt_alignment(double sbar, double aspect) {
  if (!(aspect > 0.0)) throw ConfigError("rmt: aspect must be > 0");
  if (!(sbar >= 0.0)) throw ConfigError("rmt: sbar must be >= 0");
  RmtPrediction out;
  const double threshold = std::pow(aspect, 0.25);
  if (sbar <= threshold) {
    out.stilde = 1.0 + std::sqrt(aspect);
    out.overlap = 0.0;
    return out;
  }
  const double s2 = sbar * sbar;
  out.stilde = std::sqrt((1.0 + s2) * (aspect + s2)) / sbar;
  const double excess = s2 * s2 - aspect;
  const double overlap2 =
      (excess / (s2 * (aspect + s2))) * (excess / (s2 * (1.0 + s2)));
  out.overlap = std::sqrt(std::max(0.0, overlap2));
  return out;
}

double mp_density(double stilde, double aspect) {
  if (!(aspect > 0.0) || aspect > 1.0)
    throw ConfigError("mp density: aspect must lie in (0, 1]");
  if (stilde <= 0.0) return 0.0;
  const double root = std::sqrt(aspect);
  if (stilde < 1.0 - root || stilde > 1.0 + root) return 0.0;
  const double centered = stilde * stilde - (1.0 + aspect);
  const double disc = 4.0 * aspect - centered * centered;
  if (disc <= 0.0) return 0.0;
  return std::sqrt(disc) / (std::numbers::pi * aspect * stilde);
}

// ---------------------------------------------------------------------------
// Learning-rate drop experiment
// ---------------------------------------------------------------------------

void LrDropConfig::validate() const {
  if (n < 1 || m < 1) throw ConfigError("lr drop: dimensions must be >= 1");
  if (k < 1 || k > std::min(n, m))
    throw ConfigError("lr drop: rank k out of range");
  if (sbar.size() != 0 && sbar.size() != k)
    throw ConfigError("lr drop: sbar must be empty or of length k");
  if (p < n) throw ConfigError("lr drop: whitening needs p >= n");
  if (!(sigma_eps >= 0.0)) throw ConfigError("lr drop: sigma_eps must be >= 0");
  if (hidden_dim != -1 && (hidden_dim < 1 || hidden_dim > std::min(n, m)))
    throw ConfigError("lr drop: hidden_dim out of range");
  if (!(init_scale >= 0.0)) throw ConfigError("lr drop: init_scale must be >= 0");
  if (replicates < 1) throw ConfigError("lr drop: replicates must be >= 1");
  StudentRunConfig probe;
  probe.schedule = schedule;
  probe.zeta = zeta;
  probe.record_stride = record_stride;
  probe.validate();
}

Eigen::VectorXd LrDropConfig::resolved_sbar() const {
  if (sbar.size() != 0) return sbar;
  // App-style default: k signals evenly spaced from 1 down to 0.5.
  return Eigen::VectorXd::LinSpaced(k, 1.0, 0.5);
}

namespace {

LrDropResult lr_drop_impl(const LrDropConfig& config, bool parallel) {
  config.validate();
  LrDropResult result;
  result.teacher = generate_teacher(config.n, config.m, config.k,
                                    config.resolved_sbar(),
                                    derive_stream_seed(config.seed, 0));

  const int reps = config.replicates;
  std::vector<StudentTrajectory> runs(static_cast<std::size_t>(reps));
  std::vector<Eigen::VectorXd> stilde_rows(static_cast<std::size_t>(reps));
  std::exception_ptr failure = nullptr;

#pragma omp parallel for schedule(dynamic) if (parallel)
  for (int rep = 0; rep < reps; ++rep) {
    try {
      const std::uint64_t rep_seed =
          derive_stream_seed(config.seed, static_cast<std::uint64_t>(rep) + 1);
      const TrainingData data =
          generate_dataset(result.teacher, config.p, config.sigma_eps, true,
                           derive_stream_seed(rep_seed, 0));
      const StudentState init =
          spectral_balanced_init(data, config.hidden_dim, config.init_scale,
                                 derive_stream_seed(rep_seed, 1));
      StudentRunConfig rc;
      rc.schedule = config.schedule;
      rc.zeta = config.zeta;
      rc.record_stride = config.record_stride;
      rc.seed = derive_stream_seed(rep_seed, 2);
      runs[static_cast<std::size_t>(rep)] =
          simulate_student_sgd(data, result.teacher, init, rc);
      stilde_rows[static_cast<std::size_t>(rep)] = data.stilde;
    } catch (...) {
#pragma omp critical
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);

  // Serial aggregation in replicate order keeps the result independent of
  // worker count.
  const auto& grid = runs.front().steps;
  const std::size_t n_records = grid.size();
  const Eigen::Index r = stilde_rows.front().size();
  result.record_steps = grid;
  result.phase_end_records = runs.front().phase_end_records;
  result.e_train_curves.resize(reps, static_cast<Eigen::Index>(n_records));
  result.e_test_curves.resize(reps, static_cast<Eigen::Index>(n_records));
  result.mode_curves.resize(static_cast<std::size_t>(reps));
  result.stilde_samples.resize(reps, r);
  for (int rep = 0; rep < reps; ++rep) {
    const auto& run = runs[static_cast<std::size_t>(rep)];
    if (run.steps != grid)
      throw ConfigError("lr drop: replicate record grids diverged");
    Eigen::MatrixXd modes(static_cast<Eigen::Index>(n_records), r);
    for (std::size_t i = 0; i < n_records; ++i) {
      result.e_train_curves(rep, static_cast<Eigen::Index>(i)) =
          run.e_train[i];
      result.e_test_curves(rep, static_cast<Eigen::Index>(i)) = run.e_test[i];
      modes.row(static_cast<Eigen::Index>(i)) = run.mode_curve[i];
    }
    result.mode_curves[static_cast<std::size_t>(rep)] = std::move(modes);
    result.stilde_samples.row(rep) = stilde_rows[static_cast<std::size_t>(rep)];
  }
  result.mean_e_train.resize(n_records);
  result.mean_e_test.resize(n_records);
  for (std::size_t i = 0; i < n_records; ++i) {
    result.mean_e_train[i] =
        result.e_train_curves.col(static_cast<Eigen::Index>(i)).mean();
    result.mean_e_test[i] =
        result.e_test_curves.col(static_cast<Eigen::Index>(i)).mean();
  }

  result.phase1_verdicts.reserve(static_cast<std::size_t>(r));
  for (Eigen::Index j = 0; j < r; ++j) {
    std::vector<double> samples(static_cast<std::size_t>(reps));
    for (int rep = 0; rep < reps; ++rep)
      samples[static_cast<std::size_t>(rep)] = result.stilde_samples(rep, j);
    ModeParams mp;
    mp.stilde = median(samples);
    mp.eta = config.schedule.front().lr;
    mp.zeta = config.zeta;
    mp.s0 = config.init_scale > 0.0 ? config.init_scale : 1e-12;
    result.phase1_verdicts.push_back(mode_phase_verdict(mp));
  }
  return result;
}

}  // namespace

LrDropResult lr_drop_experiment(const LrDropConfig& config) {
  return lr_drop_impl(config, true);
}

LrDropResult lr_drop_experiment_serial(const LrDropConfig& config) {
  return lr_drop_impl(config, false);
}

}  // namespace collapse
