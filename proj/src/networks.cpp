#include "collapse/networks.hpp"

#include <cmath>
#include <cstddef>
#include <exception>
#include <numbers>
#include <sstream>

#include "collapse/attractivity.hpp"
#include "collapse/errors.hpp"
#include "collapse/snapshot_io.hpp"
#include "collapse/stats.hpp"

namespace collapse {

namespace {

constexpr double kDivergenceNorm = 1e12;

double std_normal_cdf(double z) {
  return 0.5 * (1.0 + std::erf(z / std::numbers::sqrt2));
}

double std_normal_pdf(double z) {
  constexpr double inv_sqrt_2pi = 0.3989422804014326779;
  return inv_sqrt_2pi * std::exp(-0.5 * z * z);
}

}  // namespace

double activate(Activation a, double z) {
  switch (a) {
    case Activation::linear:
      return z;
    case Activation::tanh:
      return std::tanh(z);
    case Activation::leaky_relu:
      return z > 0.0 ? z : 0.01 * z;
    case Activation::elu:
      return z > 0.0 ? z : std::expm1(z);
    case Activation::gelu:
      return z * std_normal_cdf(z);
    case Activation::silu:
      return z / (1.0 + std::exp(-z));
    case Activation::relu:
      return z > 0.0 ? z : 0.0;
  }
  throw ConfigError("unknown activation enum value");
}

double activate_grad(Activation a, double z) {
  switch (a) {
    case Activation::linear:
      return 1.0;
    case Activation::tanh: {
      const double t = std::tanh(z);
      return 1.0 - t * t;
    }
    case Activation::leaky_relu:
      return z > 0.0 ? 1.0 : 0.01;
    case Activation::elu:
      return z > 0.0 ? 1.0 : std::exp(z);
    case Activation::gelu:
      return std_normal_cdf(z) + z * std_normal_pdf(z);
    case Activation::silu: {
      const double s = 1.0 / (1.0 + std::exp(-z));
      return s * (1.0 + z * (1.0 - s));
    }
    case Activation::relu:
      return z > 0.0 ? 1.0 : 0.0;
  }
  throw ConfigError("unknown activation enum value");
}

std::string_view activation_name(Activation a) {
  switch (a) {
    case Activation::linear:
      return "linear";
    case Activation::tanh:
      return "tanh";
    case Activation::leaky_relu:
      return "leaky_relu";
    case Activation::elu:
      return "elu";
    case Activation::gelu:
      return "gelu";
    case Activation::silu:
      return "silu";
    case Activation::relu:
      return "relu";
  }
  throw ConfigError("unknown activation enum value");
}

Activation activation_from_name(std::string_view name) {
  for (Activation a :
       {Activation::linear, Activation::tanh, Activation::leaky_relu,
        Activation::elu, Activation::gelu, Activation::silu,
        Activation::relu}) {
    if (activation_name(a) == name) return a;
  }
  throw ConfigError("unknown activation '" + std::string(name) +
                    "'; expected one of linear, tanh, leaky_relu, elu, gelu, "
                    "silu, relu");
}

bool activation_theory_supported(Activation a) {
  return a != Activation::relu;
}

const ResidualLink* MlpSpec::link_into(std::size_t l) const {
  for (const auto& link : residual_links)
    if (link.to == l) return &link;
  return nullptr;
}

void MlpSpec::validate() const {
  if (layer_dims.size() < 2)
    throw ConfigError("network needs at least an input and an output layer");
  for (Eigen::Index d : layer_dims)
    if (d < 1) throw ConfigError("every layer width must be positive");
  if (activation == Activation::relu && !allow_unsupported_activation)
    throw ConfigError(
        "relu is outside the smooth activation family the analysis covers; "
        "set allow_unsupported_activation to use it anyway");
  if (std::abs(activate(activation, 0.0)) > 1e-12)
    throw ConfigError("activation must map 0 to 0");
  const std::size_t m = n_layers();
  for (const auto& link : residual_links) {
    if (link.from < 1 || link.to <= link.from || link.to > m - 1)
      throw ConfigError(
          "skip connections must run forward between hidden layers");
    if (layer_dims[link.from] != layer_dims[link.to])
      throw ConfigError("skip-connected hidden layers must share a width");
  }
  for (std::size_t i = 0; i < residual_links.size(); ++i)
    for (std::size_t j = i + 1; j < residual_links.size(); ++j)
      if (residual_links[i].to == residual_links[j].to)
        throw ConfigError("at most one skip connection may end at a layer");
}

MlpParams MlpParams::zeros(const MlpSpec& spec) {
  MlpParams p;
  const std::size_t m = spec.n_layers();
  p.w.reserve(m);
  p.b.reserve(m);
  for (std::size_t l = 0; l < m; ++l) {
    p.w.push_back(
        Eigen::MatrixXd::Zero(spec.layer_dims[l + 1], spec.layer_dims[l]));
    p.b.push_back(Eigen::VectorXd::Zero(spec.layer_dims[l + 1]));
  }
  return p;
}

MlpParams MlpParams::random_init(const MlpSpec& spec, double scale,
                                 Xoshiro256pp& rng) {
  MlpParams p = zeros(spec);
  for (std::size_t l = 0; l < p.w.size(); ++l) {
    const double sd = scale / std::sqrt(static_cast<double>(p.w[l].cols()));
    for (Eigen::Index j = 0; j < p.w[l].cols(); ++j)
      for (Eigen::Index i = 0; i < p.w[l].rows(); ++i)
        p.w[l](i, j) = sd * rng.normal();
  }
  return p;
}

double MlpParams::squared_norm() const {
  double s = 0.0;
  for (const auto& m : w) s += m.squaredNorm();
  for (const auto& v : b) s += v.squaredNorm();
  return s;
}

bool MlpParams::all_finite() const {
  for (const auto& m : w)
    if (!m.allFinite()) return false;
  for (const auto& v : b)
    if (!v.allFinite()) return false;
  return true;
}

namespace {

// Forward pass keeping every post-activation layer output; hs[0] is the
// input and hs[l] the output of layer l. zs[l] holds layer l's
// pre-activation for l >= 1.
void forward_states(const MlpSpec& spec, const MlpParams& params,
                    const Eigen::MatrixXd& x, std::vector<Eigen::MatrixXd>& hs,
                    std::vector<Eigen::MatrixXd>& zs) {
  const std::size_t m = spec.n_layers();
  hs.assign(m + 1, Eigen::MatrixXd());
  zs.assign(m + 1, Eigen::MatrixXd());
  hs[0] = x;
  for (std::size_t l = 1; l <= m; ++l) {
    zs[l] = (params.w[l - 1] * hs[l - 1]).colwise() + params.b[l - 1];
    if (l == m) {
      hs[l] = zs[l];
      break;
    }
    hs[l] = zs[l].unaryExpr(
        [&](double v) { return activate(spec.activation, v); });
    if (const ResidualLink* link = spec.link_into(l))
      hs[l] += hs[link->from];
  }
}

}  // namespace

Eigen::MatrixXd forward(const MlpSpec& spec, const MlpParams& params,
                        const Eigen::MatrixXd& x) {
  if (x.rows() != spec.input_dim())
    throw ConfigError("input has the wrong number of rows");
  std::vector<Eigen::MatrixXd> hs, zs;
  forward_states(spec, params, x, hs, zs);
  return hs.back();
}

Eigen::VectorXd forward(const MlpSpec& spec, const MlpParams& params,
                        const Eigen::VectorXd& x) {
  return Eigen::VectorXd(forward(spec, params, Eigen::MatrixXd(x)));
}

double mse_loss(const MlpSpec& spec, const MlpParams& params,
                const Dataset& batch) {
  if (batch.size() == 0) throw ConfigError("loss over an empty batch");
  const Eigen::MatrixXd f = forward(spec, params, batch.x);
  return 0.5 * (f - batch.y).squaredNorm() /
         static_cast<double>(batch.size());
}

MlpParams grad(const MlpSpec& spec, const MlpParams& params,
               const Dataset& batch, double label_noise_std,
               Xoshiro256pp& rng) {
  const std::size_t m = spec.n_layers();
  const Eigen::Index n = batch.size();
  if (n == 0) throw ConfigError("gradient over an empty batch");

  std::vector<Eigen::MatrixXd> hs, zs;
  forward_states(spec, params, batch.x, hs, zs);

  Eigen::MatrixXd targets = batch.y;
  if (label_noise_std != 0.0) {
    for (Eigen::Index j = 0; j < targets.cols(); ++j)
      for (Eigen::Index i = 0; i < targets.rows(); ++i)
        targets(i, j) += label_noise_std * rng.normal();
  }

  MlpParams g = MlpParams::zeros(spec);
  // delta_z[l] is the loss sensitivity to layer l's pre-activation,
  // delta_h[l] to its output (after any skip addition).
  std::vector<Eigen::MatrixXd> delta_z(m + 1), delta_h(m + 1);
  delta_z[m] = (hs[m] - targets) / static_cast<double>(n);
  delta_h[m] = delta_z[m];
  for (std::size_t l = m - 1; l > 0; --l) {
    delta_h[l] = params.w[l].transpose() * delta_z[l + 1];
    // A skip connection copies h_from into h_to, so sensitivity flows back
    // along it unchanged. Links point forward, so delta_h[to] is ready.
    for (const auto& link : spec.residual_links)
      if (link.from == l) delta_h[l] += delta_h[link.to];
    delta_z[l] = delta_h[l].cwiseProduct(zs[l].unaryExpr(
        [&](double v) { return activate_grad(spec.activation, v); }));
  }
  for (std::size_t l = 1; l <= m; ++l) {
    g.w[l - 1].noalias() = delta_z[l] * hs[l - 1].transpose();
    g.b[l - 1] = delta_z[l].rowwise().sum();
  }
  return g;
}

void TrainConfig::validate() const {
  if (lr < 0.0) throw ConfigError("lr must be nonnegative");
  if (batch < 1) throw ConfigError("batch size must be at least 1");
  if (label_noise_std < 0.0)
    throw ConfigError("label_noise_std must be nonnegative");
  if (steps < 0) throw ConfigError("steps must be nonnegative");
  if (loss_stride < 1) throw ConfigError("loss_stride must be positive");
  if (snapshot_stride < 0)
    throw ConfigError("snapshot_stride must be nonnegative");
}

TrainResult sgd_train(const MlpSpec& spec, MlpParams params,
                      const Dataset& data, const TrainConfig& config) {
  spec.validate();
  config.validate();
  const Eigen::Index n = data.size();
  if (n == 0) throw ConfigError("training set is empty");
  if (data.x.rows() != spec.input_dim() || data.y.rows() != spec.output_dim())
    throw ConfigError("dataset shape does not match the network");
  if (data.y.cols() != n)
    throw ConfigError("dataset inputs and targets disagree on size");

  // Separate streams so a zero-noise run consumes the same batch sequence
  // as a noisy one under the same seed.
  auto batch_rng = Xoshiro256pp(derive_stream_seed(config.seed, 0));
  auto noise_rng = Xoshiro256pp(derive_stream_seed(config.seed, 1));

  TrainResult out;
  Dataset batch;
  batch.x.resize(data.x.rows(), config.batch);
  batch.y.resize(data.y.rows(), config.batch);

  const auto record_loss = [&](std::int64_t step) {
    if (!out.loss_steps.empty() && out.loss_steps.back() == step) return;
    out.loss_steps.push_back(step);
    out.loss.push_back(mse_loss(spec, params, data));
  };
  const auto record_snapshot = [&](std::int64_t step) {
    if (config.snapshot_stride == 0) return;
    if (!out.snapshots.empty() && out.snapshots.back().first == step) return;
    out.snapshots.emplace_back(step, params);
  };

  record_loss(0);
  record_snapshot(0);
  MlpParams prev = params;
  for (std::int64_t step = 1; step <= config.steps; ++step) {
    for (Eigen::Index j = 0; j < config.batch; ++j) {
      // Lemire's multiply-shift maps a 64-bit draw to [0, n) without bias
      // for any realistic dataset size.
      const auto idx = static_cast<Eigen::Index>(
          (static_cast<unsigned __int128>(batch_rng.next()) *
           static_cast<unsigned __int128>(n)) >>
          64);
      batch.x.col(j) = data.x.col(idx);
      batch.y.col(j) = data.y.col(idx);
    }
    prev = params;
    const MlpParams g =
        grad(spec, params, batch, config.label_noise_std, noise_rng);
    for (std::size_t l = 0; l < params.w.size(); ++l) {
      params.w[l] -= config.lr * g.w[l];
      params.b[l] -= config.lr * g.b[l];
    }
    if (!params.all_finite() ||
        params.squared_norm() > kDivergenceNorm * kDivergenceNorm) {
      params = prev;
      out.divergent = true;
      out.divergence_step = step;
      break;
    }
    if (step % config.loss_stride == 0) record_loss(step);
    if (config.snapshot_stride > 0 && step % config.snapshot_stride == 0)
      record_snapshot(step);
  }
  const std::int64_t last =
      out.divergent ? out.divergence_step - 1 : config.steps;
  record_loss(last);
  record_snapshot(last);
  out.final_params = std::move(params);
  return out;
}

// ---------------------------------------------------------------------------
// Invariant coordinate sets
// ---------------------------------------------------------------------------

void InvariantSetSpec::validate(const MlpSpec& spec) const {
  const std::size_t m = spec.n_layers();
  if (layer < 1 || layer > m - 1)
    throw ConfigError("invariant sets live on hidden layers");
  const Eigen::Index width = spec.layer_dims[layer];
  if (p < 0 || p >= width)
    throw ConfigError("neuron index p out of range");
  const bool perm = kind == InvariantKind::permutation ||
                    kind == InvariantKind::residual_permutation;
  if (perm) {
    if (q < 0 || q >= width) throw ConfigError("neuron index q out of range");
    if (q == p) throw ConfigError("permutation sets need two distinct neurons");
  }
  const bool residual = kind == InvariantKind::residual_sign ||
                        kind == InvariantKind::residual_permutation;
  if (residual && spec.link_into(layer) == nullptr)
    throw ConfigError("residual invariant sets need a skip connection ending "
                      "at the chosen layer");
}

namespace {

std::vector<std::size_t> affected_layers(const MlpSpec& spec,
                                         const InvariantSetSpec& set) {
  std::vector<std::size_t> layers{set.layer};
  if (set.kind == InvariantKind::residual_sign ||
      set.kind == InvariantKind::residual_permutation)
    layers.push_back(spec.link_into(set.layer)->from);
  return layers;
}

bool is_sign_kind(InvariantKind k) {
  return k == InvariantKind::sign || k == InvariantKind::residual_sign;
}

}  // namespace

MlpParams invariant_set_project(const MlpSpec& spec, const MlpParams& params,
                                const InvariantSetSpec& set) {
  set.validate(spec);
  MlpParams out = params;
  for (std::size_t l : affected_layers(spec, set)) {
    auto& w_in = out.w[l - 1];
    auto& bias = out.b[l - 1];
    auto& w_out = out.w[l];
    if (is_sign_kind(set.kind)) {
      w_in.row(set.p).setZero();
      bias(set.p) = 0.0;
      w_out.col(set.p).setZero();
    } else {
      const Eigen::RowVectorXd row =
          0.5 * (w_in.row(set.p) + w_in.row(set.q));
      const double bmean = 0.5 * (bias(set.p) + bias(set.q));
      const Eigen::VectorXd col = 0.5 * (w_out.col(set.p) + w_out.col(set.q));
      w_in.row(set.p) = row;
      w_in.row(set.q) = row;
      bias(set.p) = bmean;
      bias(set.q) = bmean;
      w_out.col(set.p) = col;
      w_out.col(set.q) = col;
    }
  }
  return out;
}

double distance_to_invariant_set(const MlpSpec& spec, const MlpParams& params,
                                 const InvariantSetSpec& set) {
  set.validate(spec);
  double sq = 0.0;
  for (std::size_t l : affected_layers(spec, set)) {
    const auto& w_in = params.w[l - 1];
    const auto& bias = params.b[l - 1];
    const auto& w_out = params.w[l];
    if (is_sign_kind(set.kind)) {
      sq += w_in.row(set.p).squaredNorm();
      sq += bias(set.p) * bias(set.p);
      sq += w_out.col(set.p).squaredNorm();
    } else {
      double d = w_in.row(set.p).squaredNorm() +
                 w_in.row(set.q).squaredNorm() -
                 2.0 * w_in.row(set.p).dot(w_in.row(set.q));
      const double db = bias(set.p) - bias(set.q);
      d += db * db;
      d += (w_out.col(set.p) - w_out.col(set.q)).squaredNorm();
      sq += 0.5 * d;
    }
  }
  return std::sqrt(sq);
}

double gradient_normal_component(const MlpSpec& spec,
                                 const MlpParams& gradient,
                                 const InvariantSetSpec& set) {
  // The sets are affine with coordinate-aligned (sign) or pair-difference
  // (permutation) normals, so the normal component of any vector is given
  // by the same expression as the distance.
  return distance_to_invariant_set(spec, gradient, set);
}

// ---------------------------------------------------------------------------
// Single-neuron experiment
// ---------------------------------------------------------------------------

void SingleNeuronConfig::validate() const {
  if (xs.empty() || xs.size() != ys.size())
    throw ConfigError("xs and ys must be nonempty and of equal length");
  double sx2 = 0.0;
  for (double x : xs) sx2 += x * x;
  if (sx2 <= 0.0) throw ConfigError("inputs must not all be zero");
  if (eta <= 0.0) throw ConfigError("eta must be positive");
  if (zeta < 0.0) throw ConfigError("zeta must be nonnegative");
  if (init_radius < 0.0) throw ConfigError("init_radius must be nonnegative");
  if (dt <= 0.0) throw ConfigError("dt must be positive");
  if (steps < 1) throw ConfigError("steps must be positive");
  if (n_runs < 1) throw ConfigError("n_runs must be positive");
  if (record_stride < 0)
    throw ConfigError("record_stride must be nonnegative");
}

namespace {

SingleNeuronResult single_neuron_impl(const SingleNeuronConfig& config,
                                      bool parallel) {
  config.validate();
  const int n = static_cast<int>(config.xs.size());
  const double inv_n = 1.0 / static_cast<double>(n);
  const double noise_amp = std::sqrt(config.eta) * config.zeta * inv_n;
  const double sqrt_dt = std::sqrt(config.dt);

  SingleNeuronResult out;
  out.final_norms.assign(static_cast<std::size_t>(config.n_runs), 0.0);
  out.divergent.assign(static_cast<std::size_t>(config.n_runs), 0);
  if (config.record_stride > 0)
    out.norm_curves.resize(static_cast<std::size_t>(config.n_runs));

  std::exception_ptr failure = nullptr;
#pragma omp parallel for schedule(dynamic) if (parallel)
  for (int run = 0; run < config.n_runs; ++run) {
    try {
      auto rng = Xoshiro256pp::for_stream(config.seed,
                                          static_cast<std::uint64_t>(run));
      // Uniform over the disk of radius init_radius.
      const double angle = 2.0 * std::numbers::pi * rng.uniform01();
      const double radius = config.init_radius * std::sqrt(rng.uniform01());
      double w1 = radius * std::cos(angle);
      double w2 = radius * std::sin(angle);
      bool diverged = false;

      std::vector<double>* curve = nullptr;
      if (config.record_stride > 0) {
        curve = &out.norm_curves[static_cast<std::size_t>(run)];
        curve->push_back(std::hypot(w1, w2));
      }

      for (std::int64_t step = 0; step < config.steps && !diverged; ++step) {
        double d1 = 0.0, d2 = 0.0, n1 = 0.0, n2 = 0.0;
        for (int i = 0; i < n; ++i) {
          const double z = w1 * config.xs[i];
          const double s = activate(config.activation, z);
          const double sp = activate_grad(config.activation, z);
          const double resid = w2 * s - config.ys[i];
          d1 += resid * w2 * config.xs[i] * sp;
          d2 += resid * s;
          if (config.zeta > 0.0) {
            // One Brownian channel per example, shared by both weights.
            const double db = sqrt_dt * rng.normal();
            n1 += w2 * config.xs[i] * sp * db;
            n2 += s * db;
          }
        }
        const double w1_next =
            w1 - d1 * inv_n * config.dt + noise_amp * n1;
        const double w2_next =
            w2 - d2 * inv_n * config.dt + noise_amp * n2;
        if (!std::isfinite(w1_next) || !std::isfinite(w2_next) ||
            std::abs(w1_next) > kDivergenceNorm ||
            std::abs(w2_next) > kDivergenceNorm) {
          diverged = true;
        } else {
          w1 = w1_next;
          w2 = w2_next;
        }
        if (curve && ((step + 1) % config.record_stride == 0 ||
                      step + 1 == config.steps))
          curve->push_back(std::hypot(w1, w2));
      }
      out.final_norms[static_cast<std::size_t>(run)] = std::hypot(w1, w2);
      out.divergent[static_cast<std::size_t>(run)] = diverged ? 1 : 0;
    } catch (...) {
#pragma omp critical
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);

  int collapsed = 0;
  for (int run = 0; run < config.n_runs; ++run)
    if (!out.divergent[static_cast<std::size_t>(run)] &&
        out.final_norms[static_cast<std::size_t>(run)] < 1e-8)
      ++collapsed;
  out.collapse_frequency =
      static_cast<double>(collapsed) / static_cast<double>(config.n_runs);

  SingleNeuronData data;
  data.xs = config.xs;
  data.ys = config.ys;
  data.sigma_prime0 = std::abs(activate_grad(config.activation, 0.0));
  data.eta = config.eta;
  data.zeta = config.zeta;
  const SingleNeuronThreshold threshold = single_neuron_threshold(data);
  out.signal = threshold.signal;
  out.noise_term = threshold.noise_term;
  return out;
}

}  // namespace

SingleNeuronResult single_neuron_experiment(const SingleNeuronConfig& config) {
  return single_neuron_impl(config, true);
}

SingleNeuronResult single_neuron_experiment_serial(
    const SingleNeuronConfig& config) {
  return single_neuron_impl(config, false);
}

// ---------------------------------------------------------------------------
// Two-neuron experiment
// ---------------------------------------------------------------------------

void TwoNeuronConfig::validate() const {
  if (n_examples < 1) throw ConfigError("n_examples must be positive");
  if (lr <= 0.0) throw ConfigError("lr must be positive");
  if (noise_std < 0.0) throw ConfigError("noise_std must be nonnegative");
  if (init_scale <= 0.0) throw ConfigError("init_scale must be positive");
  if (steps < 1) throw ConfigError("steps must be positive");
  if (n_runs < 1) throw ConfigError("n_runs must be positive");
  if (record_stride < 0)
    throw ConfigError("record_stride must be nonnegative");
}

namespace {

// Scale-normalized gap between the two neurons' (incoming, outgoing) pairs;
// matches the detector's definition, including 0/0 -> 0 for a fully
// collapsed pair.
double two_neuron_gap(double w1a, double w2a, double w1b, double w2b) {
  const double diff = (w1a - w1b) * (w1a - w1b) + (w2a - w2b) * (w2a - w2b);
  const double scale = w1a * w1a + w2a * w2a + w1b * w1b + w2b * w2b;
  if (scale == 0.0) return 0.0;
  return 2.0 * diff / scale;
}

TwoNeuronResult two_neuron_impl(const TwoNeuronConfig& config, bool parallel) {
  config.validate();
  const int n = config.n_examples;
  const double inv_n = 1.0 / static_cast<double>(n);

  TwoNeuronResult out;
  out.final_distance.assign(static_cast<std::size_t>(config.n_runs), 0.0);
  out.divergent.assign(static_cast<std::size_t>(config.n_runs), 0);
  if (config.record_stride > 0)
    out.distance_curves.resize(static_cast<std::size_t>(config.n_runs));

  std::exception_ptr failure = nullptr;
#pragma omp parallel for schedule(dynamic) if (parallel)
  for (int run = 0; run < config.n_runs; ++run) {
    try {
      auto rng = Xoshiro256pp::for_stream(config.seed,
                                          static_cast<std::uint64_t>(run));
      std::vector<double> xs(static_cast<std::size_t>(n));
      std::vector<double> ys(static_cast<std::size_t>(n));
      for (auto& x : xs) x = rng.normal();
      for (auto& y : ys) y = rng.normal();
      double w1a = config.init_scale * rng.normal();
      double w1b = config.init_scale * rng.normal();
      double w2a = config.init_scale * rng.normal();
      double w2b = config.init_scale * rng.normal();
      bool diverged = false;

      std::vector<double>* curve = nullptr;
      if (config.record_stride > 0) {
        curve = &out.distance_curves[static_cast<std::size_t>(run)];
        curve->push_back(two_neuron_gap(w1a, w2a, w1b, w2b));
      }

      for (std::int64_t step = 0; step < config.steps && !diverged; ++step) {
        double g1a = 0.0, g1b = 0.0, g2a = 0.0, g2b = 0.0;
        for (int i = 0; i < n; ++i) {
          const double x = xs[static_cast<std::size_t>(i)];
          const double sa = activate(config.activation, w1a * x);
          const double sb = activate(config.activation, w1b * x);
          const double target = ys[static_cast<std::size_t>(i)] +
                                config.noise_std * rng.normal();
          const double resid = w2a * sa + w2b * sb - target;
          g1a += resid * w2a * activate_grad(config.activation, w1a * x) * x;
          g1b += resid * w2b * activate_grad(config.activation, w1b * x) * x;
          g2a += resid * sa;
          g2b += resid * sb;
        }
        const double w1a_next = w1a - config.lr * inv_n * g1a;
        const double w1b_next = w1b - config.lr * inv_n * g1b;
        const double w2a_next = w2a - config.lr * inv_n * g2a;
        const double w2b_next = w2b - config.lr * inv_n * g2b;
        const bool finite =
            std::isfinite(w1a_next) && std::isfinite(w1b_next) &&
            std::isfinite(w2a_next) && std::isfinite(w2b_next);
        if (!finite || std::abs(w1a_next) > kDivergenceNorm ||
            std::abs(w1b_next) > kDivergenceNorm ||
            std::abs(w2a_next) > kDivergenceNorm ||
            std::abs(w2b_next) > kDivergenceNorm) {
          diverged = true;
        } else {
          w1a = w1a_next;
          w1b = w1b_next;
          w2a = w2a_next;
          w2b = w2b_next;
        }
        if (curve && ((step + 1) % config.record_stride == 0 ||
                      step + 1 == config.steps))
          curve->push_back(two_neuron_gap(w1a, w2a, w1b, w2b));
      }
      out.final_distance[static_cast<std::size_t>(run)] =
          two_neuron_gap(w1a, w2a, w1b, w2b);
      out.divergent[static_cast<std::size_t>(run)] = diverged ? 1 : 0;
    } catch (...) {
#pragma omp critical
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);

  out.median_final_distance = median(out.final_distance);
  return out;
}

}  // namespace

TwoNeuronResult two_neuron_experiment(const TwoNeuronConfig& config) {
  return two_neuron_impl(config, true);
}

TwoNeuronResult two_neuron_experiment_serial(const TwoNeuronConfig& config) {
  return two_neuron_impl(config, false);
}

TwoNeuronGridResult two_neuron_grid(const TwoNeuronConfig& base,
                                    const std::vector<double>& lrs,
                                    const std::vector<double>& noise_stds) {
  if (lrs.empty() || noise_stds.empty())
    throw ConfigError("grid axes must be nonempty");
  TwoNeuronGridResult out;
  out.lrs = lrs;
  out.noise_stds = noise_stds;
  const auto rows = static_cast<Eigen::Index>(lrs.size());
  const auto cols = static_cast<Eigen::Index>(noise_stds.size());
  out.median_distance.resize(rows, cols);
  out.divergent_fraction.resize(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) {
      TwoNeuronConfig cell = base;
      cell.lr = lrs[static_cast<std::size_t>(i)];
      cell.noise_std = noise_stds[static_cast<std::size_t>(j)];
      cell.seed = derive_stream_seed(
          base.seed, static_cast<std::uint64_t>(i * cols + j));
      const TwoNeuronResult res = two_neuron_experiment(cell);
      out.median_distance(i, j) = res.median_final_distance;
      double divergent = 0.0;
      for (auto d : res.divergent) divergent += d;
      out.divergent_fraction(i, j) =
          divergent / static_cast<double>(res.divergent.size());
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Snapshot export
// ---------------------------------------------------------------------------

void export_snapshot(const MlpSpec& spec, const MlpParams& params,
                     const std::filesystem::path& path) {
  spec.validate();
  WeightSnapshot snapshot;
  const std::size_t m = spec.n_layers();
  snapshot.layers.reserve(m);
  for (std::size_t l = 1; l <= m; ++l) {
    SnapshotLayer layer;
    layer.name = "layer" + std::to_string(l);
    layer.in_dim = spec.layer_dims[l - 1];
    layer.out_dim = spec.layer_dims[l];
    layer.incoming = params.w[l - 1];
    layer.bias = params.b[l - 1];
    if (l < m)
      if (const ResidualLink* link = spec.link_into(l))
        layer.residual_from = "layer" + std::to_string(link->from);
    snapshot.layers.push_back(std::move(layer));
  }
  write_snapshot(snapshot, path);
}

std::pair<MlpSpec, MlpParams> import_snapshot(
    const std::filesystem::path& path, Activation activation) {
  const WeightSnapshot snapshot = read_snapshot(path);
  if (snapshot.layers.empty())
    throw IoError("snapshot has no layers: " + path.string());

  MlpSpec spec;
  spec.activation = activation;
  spec.layer_dims.push_back(snapshot.layers.front().in_dim);
  for (std::size_t l = 0; l < snapshot.layers.size(); ++l) {
    const SnapshotLayer& layer = snapshot.layers[l];
    if (layer.in_dim != spec.layer_dims.back()) {
      std::ostringstream msg;
      msg << "layer '" << layer.name << "' expects input width "
          << layer.in_dim << " but the previous layer produces "
          << spec.layer_dims.back();
      throw IoError(msg.str());
    }
    spec.layer_dims.push_back(layer.out_dim);
    if (layer.residual_from) {
      if (l + 1 == snapshot.layers.size())
        throw IoError("skip connection into the output layer: " + path.string());
      spec.residual_links.push_back(
          {snapshot.index_of(*layer.residual_from) + 1, l + 1});
    }
  }
  try {
    spec.validate();
  } catch (const ConfigError& e) {
    throw IoError("snapshot does not describe a valid network: " +
                  std::string(e.what()));
  }

  MlpParams params = MlpParams::zeros(spec);
  for (std::size_t l = 0; l < snapshot.layers.size(); ++l) {
    params.w[l] = snapshot.layers[l].incoming;
    params.b[l] = snapshot.layers[l].bias;
  }
  return {std::move(spec), std::move(params)};
}

}  // namespace collapse
