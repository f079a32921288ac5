#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <vector>

namespace collapse {

enum class AttractivityVerdict { attractive, not_attractive, marginal };

const char* to_string(AttractivityVerdict v);

// Local curvature summary at an invariant point. alpha > 0 means gradient
// noise pulls nearby iterates onto the point faster than the loss pushes
// them away; the marginal band exists because the underlying statements say
// nothing at alpha = 0 and we refuse to guess there.
struct CurvatureReport {
  double loss_curv = 0.0;  // second derivative of the loss at 0
  double diff_curv = 0.0;  // second derivative of the diffusion at 0
  double alpha = 0.0;      // loss_curv + diff_curv / 2
  AttractivityVerdict verdict = AttractivityVerdict::marginal;
};

CurvatureReport rate_of_attractivity(double loss_curv, double diff_curv,
                                     double tol = 1e-9);

// Estimates the curvatures by central finite differences at step h after
// checking that {0} actually has the invariant-point structure
// (L'(0) = 0, D(0) = 0, D'(0) = 0 within O(h^2)).
CurvatureReport attractivity_from_functions(
    const std::function<double(double)>& loss,
    const std::function<double(double)>& diffusion, double h = 1e-4,
    double tol = 1e-9);

// Affine subset A = { anchor + basis * c }. Columns of basis are orthonormal
// directions spanning A; zero columns describe a single point.
struct AffineSet {
  Eigen::VectorXd anchor;
  Eigen::MatrixXd basis;
};

// Sampled evidence for the high-dimensional sufficient condition. The
// universal quantifier over unit normals is approximated by n_directions
// seeded samples; `holds` is evidence on those samples, not a proof.
struct HighDimProbe {
  int n_directions = 0;
  double delta = 0.0;
  std::vector<Eigen::VectorXd> directions;
  std::vector<double> margins;        // curvature of L - Tr(D_perp)/2 + (1-delta) n'Dn
  std::vector<double> d_curv_margins; // curvature of n'Dn minus delta
  bool holds = false;
};

HighDimProbe highdim_sufficient_condition(
    const std::function<double(const Eigen::VectorXd&)>& loss,
    const std::function<Eigen::MatrixXd(const Eigen::VectorXd&)>&
        diffusion_matrix,
    const AffineSet& set, int n_directions = 64, double delta = 1e-2,
    double h = 1e-4, std::uint64_t seed = 0);

// Dataset and hyperparameters for the one-neuron signal/noise comparison.
struct SingleNeuronData {
  std::vector<double> xs;
  std::vector<double> ys;
  double sigma_prime0 = 1.0;
  double eta = 1.0;
  double zeta = 0.0;
};

struct SingleNeuronThreshold {
  double signal = 0.0;      // |sum x_i y_i| / sum x_i^2
  double noise_term = 0.0;  // sigma'(0) * eta * zeta^2 / 2
  bool attractive = false;  // strict: noise_term > signal
};

SingleNeuronThreshold single_neuron_threshold(const SingleNeuronData& data);

}  // namespace collapse
