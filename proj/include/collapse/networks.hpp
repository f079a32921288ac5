#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "collapse/rng.hpp"

namespace collapse {

// Minimal dense feed-forward networks trained by minibatch SGD with label
// noise, plus the coordinate subsets (sign and permutation structure, with
// and without skip connections) that such training provably cannot leave
// once entered. Everything is value-semantic and CPU-only by design.

enum class Activation {
  linear,
  tanh,
  leaky_relu,
  elu,
  gelu,
  silu,
  relu,  // usable only behind MlpSpec::allow_unsupported_activation
};

double activate(Activation a, double z);
double activate_grad(Activation a, double z);
std::string_view activation_name(Activation a);
Activation activation_from_name(std::string_view name);  // throws ConfigError
// The theory developed here needs smooth activations; relu is provided for
// exploration but is flagged unsupported.
bool activation_theory_supported(Activation a);

// Skip connection between hidden layers of equal width: the output of hidden
// layer `to` becomes sigma(W h + b) + h_from.
struct ResidualLink {
  std::size_t from = 0;  // hidden layer index, 1-based
  std::size_t to = 0;    // hidden layer index, strictly greater than from
};

struct MlpSpec {
  // Input, hidden..., output sizes. layer_dims.size() - 1 weight layers;
  // hidden layers are 1..n_layers()-1, the last layer is affine.
  std::vector<Eigen::Index> layer_dims;
  Activation activation = Activation::tanh;
  std::vector<ResidualLink> residual_links;
  bool allow_unsupported_activation = false;

  std::size_t n_layers() const { return layer_dims.size() - 1; }
  Eigen::Index input_dim() const { return layer_dims.front(); }
  Eigen::Index output_dim() const { return layer_dims.back(); }
  // Link feeding hidden layer l, or nullptr.
  const ResidualLink* link_into(std::size_t l) const;
  void validate() const;  // throws ConfigError
};

struct MlpParams {
  // w[i] maps layer i to layer i+1 (dims[i+1] x dims[i]); b[i] matches rows.
  std::vector<Eigen::MatrixXd> w;
  std::vector<Eigen::VectorXd> b;

  static MlpParams zeros(const MlpSpec& spec);
  // Gaussian entries scaled by scale / sqrt(fan_in); biases start at zero.
  static MlpParams random_init(const MlpSpec& spec, double scale,
                               Xoshiro256pp& rng);

  double squared_norm() const;
  bool all_finite() const;
};

// Columns are examples.
struct Dataset {
  Eigen::MatrixXd x;
  Eigen::MatrixXd y;

  Eigen::Index size() const { return x.cols(); }
};

Eigen::VectorXd forward(const MlpSpec& spec, const MlpParams& params,
                        const Eigen::VectorXd& x);
Eigen::MatrixXd forward(const MlpSpec& spec, const MlpParams& params,
                        const Eigen::MatrixXd& x);

// Half-scaled mean squared error over the batch: (1/2B) sum ||f - y||^2.
double mse_loss(const MlpSpec& spec, const MlpParams& params,
                const Dataset& batch);

// Exact gradient of the half-scaled MSE after corrupting every target entry
// with fresh N(0, label_noise_std^2) noise.
MlpParams grad(const MlpSpec& spec, const MlpParams& params,
               const Dataset& batch, double label_noise_std,
               Xoshiro256pp& rng);

struct TrainConfig {
  double lr = 0.0;
  Eigen::Index batch = 1;
  double label_noise_std = 0.0;
  std::int64_t steps = 0;
  std::uint64_t seed = 0;
  std::int64_t loss_stride = 1;      // record full-data clean loss this often
  std::int64_t snapshot_stride = 0;  // 0 = keep no intermediate snapshots

  void validate() const;
};

struct TrainResult {
  std::vector<std::int64_t> loss_steps;
  std::vector<double> loss;  // clean full-dataset loss
  std::vector<std::pair<std::int64_t, MlpParams>> snapshots;
  bool divergent = false;
  std::int64_t divergence_step = -1;
  MlpParams final_params;
};

// Minibatches are sampled with replacement; lr = 0 is allowed and leaves the
// parameters untouched. On a non-finite update the run stops, keeps the last
// finite parameters, and sets the divergence flag.
TrainResult sgd_train(const MlpSpec& spec, MlpParams params,
                      const Dataset& data, const TrainConfig& config);

// ---------------------------------------------------------------------------
// Invariant coordinate sets
// ---------------------------------------------------------------------------

enum class InvariantKind {
  sign,                  // neuron p of one hidden layer zeroed out
  permutation,           // neurons p, q of one hidden layer tied together
  residual_sign,         // sign condition at both ends of a skip connection
  residual_permutation,  // tie condition at both ends of a skip connection
};

struct InvariantSetSpec {
  InvariantKind kind = InvariantKind::sign;
  std::size_t layer = 1;  // hidden layer; for residual kinds, the link's `to`
  Eigen::Index p = 0;
  Eigen::Index q = 0;  // permutation kinds only

  void validate(const MlpSpec& spec) const;  // throws ConfigError
};

// Euclidean-orthogonal projection: sign kinds zero the neuron's incoming
// row, bias, and outgoing column; permutation kinds replace the two neurons'
// triples by their average. Residual kinds apply the rule at the link's
// `from` layer as well.
MlpParams invariant_set_project(const MlpSpec& spec, const MlpParams& params,
                                const InvariantSetSpec& set);

// Exact Euclidean distance to the set: the norm of the zeroed triple for
// sign kinds, ||triple_p - triple_q|| / sqrt(2) for permutation kinds, with
// residual kinds concatenating both layers.
double distance_to_invariant_set(const MlpSpec& spec, const MlpParams& params,
                                 const InvariantSetSpec& set);

// Norm of the component of a gradient normal to the set at any point on it.
// For these affine sets this is the same functional as the distance.
double gradient_normal_component(const MlpSpec& spec,
                                 const MlpParams& gradient,
                                 const InvariantSetSpec& set);

// ---------------------------------------------------------------------------
// Single-neuron experiment
// ---------------------------------------------------------------------------

// f(x) = w2 sigma(w1 x) trained on a fixed scalar dataset by the
// Euler-Maruyama scheme for the label-noise flow: one Brownian channel per
// example, both weights driven by the same increments,
//   dw1 = -(1/n) sum_i r_i w2 x_i s'(w1 x_i) dt
//         + (sqrt(eta) zeta / n) sum_i w2 x_i s'(w1 x_i) dB_i
// and symmetrically for w2 with s(w1 x_i), where r_i = w2 s(w1 x_i) - y_i.
struct SingleNeuronConfig {
  std::vector<double> xs;
  std::vector<double> ys;
  Activation activation = Activation::tanh;
  double eta = 1.0;
  double zeta = 0.0;
  double init_radius = 0.1;  // start uniformly inside this disk
  double dt = 1e-3;
  std::int64_t steps = 100000;
  int n_runs = 100;
  std::uint64_t seed = 0;
  std::int64_t record_stride = 0;  // 0 = terminal values only

  void validate() const;
};

struct SingleNeuronResult {
  double collapse_frequency = 0.0;  // fraction with ||(w1,w2)|| < 1e-8 at end
  double signal = 0.0;              // |sum x y| / sum x^2
  double noise_term = 0.0;          // |s'(0)| eta zeta^2 / 2
  std::vector<double> final_norms;
  std::vector<std::uint8_t> divergent;
  std::vector<std::vector<double>> norm_curves;  // when recording
};

SingleNeuronResult single_neuron_experiment(const SingleNeuronConfig& config);
SingleNeuronResult single_neuron_experiment_serial(
    const SingleNeuronConfig& config);

// ---------------------------------------------------------------------------
// Two-neuron experiment
// ---------------------------------------------------------------------------

// f(x) = w2a s(w1a x) + w2b s(w1b x), no biases, trained full-batch on a
// fresh scalar Gaussian dataset per run with fresh label noise per example
// per step. The reported distance is the scale-normalized gap between the
// two neurons' concatenated parameter vectors (see detector), which is 0
// when both neurons carry identical weights and also when both vanish.
struct TwoNeuronConfig {
  int n_examples = 16;
  Activation activation = Activation::tanh;
  double lr = 0.4;
  double noise_std = 6.0;
  double init_scale = 1.0;
  std::int64_t steps = 30000;
  int n_runs = 32;
  std::uint64_t seed = 0;
  std::int64_t record_stride = 0;

  void validate() const;
};

struct TwoNeuronResult {
  std::vector<double> final_distance;
  double median_final_distance = 0.0;
  std::vector<std::uint8_t> divergent;
  std::vector<std::vector<double>> distance_curves;  // when recording
};

TwoNeuronResult two_neuron_experiment(const TwoNeuronConfig& config);
TwoNeuronResult two_neuron_experiment_serial(const TwoNeuronConfig& config);

// Median terminal distance and divergence fraction over an (lr, noise) grid.
struct TwoNeuronGridResult {
  std::vector<double> lrs;
  std::vector<double> noise_stds;
  Eigen::MatrixXd median_distance;     // lrs x noise_stds
  Eigen::MatrixXd divergent_fraction;  // same shape
};

TwoNeuronGridResult two_neuron_grid(const TwoNeuronConfig& base,
                                    const std::vector<double>& lrs,
                                    const std::vector<double>& noise_stds);

// ---------------------------------------------------------------------------
// Snapshot export
// ---------------------------------------------------------------------------

// Writes the weight-snapshot JSON format used by the detector; layer l is
// named "layer<l>" and skip connections are recorded as residual_from.
void export_snapshot(const MlpSpec& spec, const MlpParams& params,
                     const std::filesystem::path& path);
// Reads a snapshot written by export_snapshot back into (spec, params);
// the activation is not stored, so the caller supplies it.
std::pair<MlpSpec, MlpParams> import_snapshot(const std::filesystem::path& path,
                                              Activation activation);

}  // namespace collapse
