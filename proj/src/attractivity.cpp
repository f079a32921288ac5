#include "collapse/attractivity.hpp"

#include <cmath>
#include <sstream>

#include "collapse/errors.hpp"
#include "collapse/rng.hpp"

namespace collapse {

const char* to_string(AttractivityVerdict v) {
  switch (v) {
    case AttractivityVerdict::attractive:
      return "attractive";
    case AttractivityVerdict::not_attractive:
      return "not_attractive";
    case AttractivityVerdict::marginal:
      return "marginal";
  }
  return "unknown";
}

CurvatureReport rate_of_attractivity(double loss_curv, double diff_curv,
                                     double tol) {
  if (!(tol >= 0)) throw ConfigError("rate_of_attractivity: tol must be >= 0");
  if (diff_curv < -tol)
    throw ConfigError(
        "rate_of_attractivity: diffusion curvature is negative beyond "
        "tolerance; D must be a diffusion (D''(0) >= 0)");
  CurvatureReport rep;
  rep.loss_curv = loss_curv;
  rep.diff_curv = diff_curv;
  rep.alpha = loss_curv + 0.5 * diff_curv;
  if (rep.alpha > tol)
    rep.verdict = AttractivityVerdict::attractive;
  else if (rep.alpha < -tol)
    rep.verdict = AttractivityVerdict::not_attractive;
  else
    rep.verdict = AttractivityVerdict::marginal;
  return rep;
}

CurvatureReport attractivity_from_functions(
    const std::function<double(double)>& loss,
    const std::function<double(double)>& diffusion, double h, double tol) {
  if (!(h > 0)) throw ConfigError("attractivity_from_functions: h must be > 0");

  const double l_p = loss(h), l_0 = loss(0.0), l_m = loss(-h);
  const double d_p = diffusion(h), d_0 = diffusion(0.0), d_m = diffusion(-h);

  // {0} must look like an invariant point before curvature means anything.
  const double gate = 10.0 * h * h;
  const double l_prime = (l_p - l_m) / (2.0 * h);
  const double d_prime = (d_p - d_m) / (2.0 * h);
  std::ostringstream bad;
  if (std::abs(l_prime) > gate) bad << " L'(0)=" << l_prime;
  if (std::abs(d_0) > gate) bad << " D(0)=" << d_0;
  if (std::abs(d_prime) > gate) bad << " D'(0)=" << d_prime;
  if (!bad.str().empty())
    throw ConfigError(
        "attractivity_from_functions: {0} is not an invariant point;"
        " nonzero:" + bad.str());

  const double loss_curv = (l_p - 2.0 * l_0 + l_m) / (h * h);
  const double diff_curv = (d_p - 2.0 * d_0 + d_m) / (h * h);
  return rate_of_attractivity(loss_curv, diff_curv, tol);
}

namespace {

Eigen::VectorXd fd_gradient(
    const std::function<double(const Eigen::VectorXd&)>& f,
    const Eigen::VectorXd& x, double h) {
  Eigen::VectorXd g(x.size());
  Eigen::VectorXd xp = x, xm = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    xp(i) += h;
    xm(i) -= h;
    g(i) = (f(xp) - f(xm)) / (2.0 * h);
    xp(i) = x(i);
    xm(i) = x(i);
  }
  return g;
}

double second_derivative_along(
    const std::function<double(const Eigen::VectorXd&)>& f,
    const Eigen::VectorXd& x, const Eigen::VectorXd& dir, double h) {
  return (f(x + h * dir) - 2.0 * f(x) + f(x - h * dir)) / (h * h);
}

}  // namespace

HighDimProbe highdim_sufficient_condition(
    const std::function<double(const Eigen::VectorXd&)>& loss,
    const std::function<Eigen::MatrixXd(const Eigen::VectorXd&)>&
        diffusion_matrix,
    const AffineSet& set, int n_directions, double delta, double h,
    std::uint64_t seed) {
  const Eigen::Index d = set.anchor.size();
  const Eigen::Index r = set.basis.cols();
  if (d < 1) throw ConfigError("highdim: empty anchor");
  if (set.basis.rows() != d && r > 0)
    throw ConfigError("highdim: basis row count must match anchor dimension");
  if (r >= d)
    throw ConfigError("highdim: affine set has no normal directions");
  if (n_directions < 1) throw ConfigError("highdim: n_directions must be >= 1");
  if (!(delta > 0)) throw ConfigError("highdim: delta must be > 0");
  if (r > 0) {
    const Eigen::MatrixXd gram =
        set.basis.transpose() * set.basis -
        Eigen::MatrixXd::Identity(r, r);
    if (gram.cwiseAbs().maxCoeff() > 1e-10)
      throw ConfigError("highdim: basis columns must be orthonormal");
  }

  auto project_normal = [&](const Eigen::VectorXd& v) -> Eigen::VectorXd {
    if (r == 0) return v;
    return v - set.basis * (set.basis.transpose() * v);
  };

  Xoshiro256pp rng = Xoshiro256pp::for_stream(seed, 0);
  auto gaussian_vec = [&](Eigen::Index len) {
    Eigen::VectorXd v(len);
    for (Eigen::Index i = 0; i < len; ++i) v(i) = rng.normal();
    return v;
  };

  // Anchor points spread over A (just the anchor itself for a point set).
  std::vector<Eigen::VectorXd> anchors;
  const int n_anchors = (r == 0) ? 1 : 4;
  for (int a = 0; a < n_anchors; ++a) {
    Eigen::VectorXd th = set.anchor;
    if (r > 0) th += set.basis * gaussian_vec(r);
    anchors.push_back(std::move(th));
  }

  // Structure check: on A the loss gradient has no normal component and the
  // diffusion restricted to normal directions vanishes.
  for (const auto& th : anchors) {
    const Eigen::VectorXd grad = fd_gradient(loss, th, h);
    const Eigen::VectorXd gperp = project_normal(grad);
    const Eigen::MatrixXd dm = diffusion_matrix(th);
    Eigen::MatrixXd dperp = dm;
    if (r > 0) {
      const Eigen::MatrixXd p =
          Eigen::MatrixXd::Identity(d, d) - set.basis * set.basis.transpose();
      dperp = p * dm * p;
    }
    if (gperp.cwiseAbs().maxCoeff() > 1e-6 * (1.0 + grad.norm()) ||
        dperp.cwiseAbs().maxCoeff() > 1e-8 * (1.0 + dm.cwiseAbs().maxCoeff()))
      throw ConfigError(
          "highdim: sampled point violates invariant-set structure "
          "(nonzero normal gradient or normal diffusion on A)");
  }

  HighDimProbe probe;
  probe.n_directions = n_directions;
  probe.delta = delta;
  probe.directions.reserve(static_cast<std::size_t>(n_directions));
  probe.margins.reserve(static_cast<std::size_t>(n_directions));
  probe.d_curv_margins.reserve(static_cast<std::size_t>(n_directions));

  Eigen::MatrixXd p_perp = Eigen::MatrixXd::Identity(d, d);
  if (r != 0) p_perp -= set.basis * set.basis.transpose();

  // Objective whose normal curvature the sufficient condition bounds:
  // L - Tr(D_perp)/2 + (1 - delta) * n'Dn, evaluated along theta + s*n.
  auto tested = [&](const Eigen::VectorXd& x, const Eigen::VectorXd& n) {
    const Eigen::MatrixXd dm = diffusion_matrix(x);
    const double tr_perp = (p_perp * dm * p_perp).trace();
    const double ndn = n.dot(dm * n);
    return loss(x) - 0.5 * tr_perp + (1.0 - delta) * ndn;
  };
  auto ndn_only = [&](const Eigen::VectorXd& x, const Eigen::VectorXd& n) {
    return n.dot(diffusion_matrix(x) * n);
  };

  bool all_positive = true;
  for (int i = 0; i < n_directions; ++i) {
    Eigen::VectorXd n = project_normal(gaussian_vec(d));
    double norm = n.norm();
    while (norm < 1e-12) {  // essentially impossible, but stay total
      n = project_normal(gaussian_vec(d));
      norm = n.norm();
    }
    n /= norm;
    const Eigen::VectorXd& th = anchors[static_cast<std::size_t>(i) %
                                        anchors.size()];

    auto phi = [&](const Eigen::VectorXd& x) { return tested(x, n); };
    auto psi = [&](const Eigen::VectorXd& x) { return ndn_only(x, n); };
    const double margin = second_derivative_along(phi, th, n, h);
    const double d_margin = second_derivative_along(psi, th, n, h) - delta;
    probe.directions.push_back(std::move(n));
    probe.margins.push_back(margin);
    probe.d_curv_margins.push_back(d_margin);
    all_positive = all_positive && margin > 0.0 && d_margin > 0.0;
  }
  probe.holds = all_positive;
  return probe;
}

SingleNeuronThreshold single_neuron_threshold(const SingleNeuronData& data) {
  if (data.xs.size() != data.ys.size())
    throw ConfigError("single_neuron_threshold: xs and ys must pair up");
  if (data.xs.empty())
    throw ConfigError("single_neuron_threshold: empty dataset");
  if (!(data.sigma_prime0 > 0))
    throw ConfigError("single_neuron_threshold: sigma'(0) must be > 0");
  if (!(data.eta > 0))
    throw ConfigError("single_neuron_threshold: eta must be > 0");
  if (data.zeta < 0)
    throw ConfigError("single_neuron_threshold: zeta must be >= 0");

  double sum_xx = 0.0, sum_xy = 0.0;
  for (std::size_t i = 0; i < data.xs.size(); ++i) {
    sum_xx += data.xs[i] * data.xs[i];
    sum_xy += data.xs[i] * data.ys[i];
  }
  if (sum_xx == 0.0)
    throw ConfigError("single_neuron_threshold: degenerate data, sum x^2 = 0");

  SingleNeuronThreshold out;
  out.signal = std::abs(sum_xy) / sum_xx;
  out.noise_term = data.sigma_prime0 * data.eta * data.zeta * data.zeta / 2.0;
  out.attractive = out.noise_term > out.signal;
  return out;
}

}  // namespace collapse
