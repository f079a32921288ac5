#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "collapse/attractivity.hpp"
#include "collapse/errors.hpp"
#include "doctest.h"

using namespace collapse;

TEST_CASE("rate of attractivity verdicts") {
  const auto convex = rate_of_attractivity(1.0, 0.0);
  CHECK(convex.alpha == 1.0);
  CHECK(convex.verdict == AttractivityVerdict::attractive);

  // Double-well origin with strong noise: a local maximum of the loss can
  // still attract (loss curvature -mu, diffusion curvature zeta^2).
  const auto noisy_max = rate_of_attractivity(-1.5, 4.0);
  CHECK(noisy_max.alpha == doctest::Approx(0.5));
  CHECK(noisy_max.verdict == AttractivityVerdict::attractive);

  const double z = std::sqrt(3.0);
  const auto boundary = rate_of_attractivity(-1.5, z * z);
  CHECK(boundary.verdict == AttractivityVerdict::marginal);

  const auto repulsive = rate_of_attractivity(-1.5, 1.0);
  CHECK(repulsive.verdict == AttractivityVerdict::not_attractive);

  CHECK_THROWS_AS(rate_of_attractivity(1.0, -0.5), ConfigError);
}

TEST_CASE("curvatures from functions") {
  // Exact quadratics.
  const auto quad = attractivity_from_functions(
      [](double th) { return 0.5 * th * th; },
      [](double th) { return th * th; });
  CHECK(quad.alpha == doctest::Approx(2.0).epsilon(1e-8));
  CHECK(quad.verdict == AttractivityVerdict::attractive);

  // Double-well loss with multiplicative noise, mu = 1.5, zeta = 1.
  // Analytic: L''(0) = -mu, D''(0) = zeta^2, alpha = -1.
  const double mu = 1.5, zeta = 1.0;
  const auto dw = attractivity_from_functions(
      [mu](double th) {
        const double q = th * th - mu;
        return 0.25 * q * q;
      },
      [zeta](double th) { return 0.5 * zeta * zeta * th * th; });
  CHECK(dw.loss_curv == doctest::Approx(-1.5).epsilon(1e-6));
  CHECK(dw.diff_curv == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(dw.alpha == doctest::Approx(-1.0).epsilon(1e-6));
  CHECK(dw.verdict == AttractivityVerdict::not_attractive);
}

TEST_CASE("invariant-point preconditions are named on failure") {
  CHECK_THROWS_WITH_AS(
      attractivity_from_functions([](double th) { return 0.5 * th * th; },
                                  [](double th) { return th; }),
      doctest::Contains("D'(0)"), ConfigError);
  CHECK_THROWS_WITH_AS(
      attractivity_from_functions([](double th) { return th; },
                                  [](double th) { return th * th; }),
      doctest::Contains("L'(0)"), ConfigError);
  CHECK_THROWS_WITH_AS(
      attractivity_from_functions([](double th) { return th * th; },
                                  [](double th) { return th * th + 1.0; }),
      doctest::Contains("D(0)"), ConfigError);
}

TEST_CASE("finite differences are faithful on quartics") {
  // L = a th^2 + b th^3 + c th^4 has L''(0) = 2a; the cubic and quartic
  // terms only contribute O(h^2) error.
  const double a = 0.7, b = -2.0, c = 3.0;
  const auto rep = attractivity_from_functions(
      [=](double th) { return a * th * th + b * th * th * th + c * th * th * th * th; },
      [](double th) { return 2.0 * th * th + 5.0 * th * th * th * th; });
  CHECK(rep.loss_curv == doctest::Approx(2.0 * a).epsilon(1e-6));
  CHECK(rep.diff_curv == doctest::Approx(4.0).epsilon(1e-6));
}

namespace {

// The worked 2-D example: L = |th|^2/2, D = diag(th1^2, th2^2), A = {0}.
// Along n = (c, s): tested curvature = 2(1-delta)(c^4+s^4), noise curvature
// = 2(c^4+s^4).
HighDimProbe run_2d_probe(double delta,
                          bool zero_diffusion = false) {
  AffineSet origin;
  origin.anchor = Eigen::VectorXd::Zero(2);
  origin.basis = Eigen::MatrixXd::Zero(2, 0);
  return highdim_sufficient_condition(
      [](const Eigen::VectorXd& th) { return 0.5 * th.squaredNorm(); },
      [zero_diffusion](const Eigen::VectorXd& th) {
        Eigen::MatrixXd d = Eigen::MatrixXd::Zero(2, 2);
        if (!zero_diffusion) {
          d(0, 0) = th(0) * th(0);
          d(1, 1) = th(1) * th(1);
        }
        return d;
      },
      origin, 32, delta, 1e-4, 7);
}

}  // namespace

TEST_CASE("high-dimensional probe on the worked 2-D example") {
  const HighDimProbe probe = run_2d_probe(0.5);
  CHECK(probe.holds);
  REQUIRE(probe.directions.size() == 32);
  for (std::size_t i = 0; i < probe.directions.size(); ++i) {
    const double c = probe.directions[i](0);
    const double s = probe.directions[i](1);
    CHECK(probe.directions[i].norm() == doctest::Approx(1.0).epsilon(1e-12));
    const double quart = c * c * c * c + s * s * s * s;
    CHECK(probe.margins[i] ==
          doctest::Approx(2.0 * 0.5 * quart).epsilon(1e-5));
    CHECK(probe.d_curv_margins[i] ==
          doctest::Approx(2.0 * quart - 0.5).epsilon(1e-5));
    CHECK(probe.margins[i] > 0.0);
    CHECK(probe.d_curv_margins[i] > 0.0);
  }
}

TEST_CASE("zero diffusion fails the noise-curvature leg") {
  const HighDimProbe probe = run_2d_probe(0.5, /*zero_diffusion=*/true);
  CHECK_FALSE(probe.holds);
  for (double m : probe.d_curv_margins)
    CHECK(m == doctest::Approx(-0.5).epsilon(1e-6));
}

TEST_CASE("1-D probe at small delta reduces to the scalar rate") {
  // L = -0.75 th^2 (local max), D = 2 th^2: alpha = -1.5 + 2 = 0.5.
  AffineSet origin;
  origin.anchor = Eigen::VectorXd::Zero(1);
  origin.basis = Eigen::MatrixXd::Zero(1, 0);
  const HighDimProbe probe = highdim_sufficient_condition(
      [](const Eigen::VectorXd& th) { return -0.75 * th(0) * th(0); },
      [](const Eigen::VectorXd& th) {
        Eigen::MatrixXd d(1, 1);
        d(0, 0) = 2.0 * th(0) * th(0);
        return d;
      },
      origin, 4, 1e-9, 1e-4, 3);
  const auto scalar = rate_of_attractivity(-1.5, 4.0);
  for (double m : probe.margins)
    CHECK(m == doctest::Approx(scalar.alpha).epsilon(1e-5));
}

TEST_CASE("non-invariant structure is rejected") {
  AffineSet origin;
  origin.anchor = Eigen::VectorXd::Zero(2);
  origin.basis = Eigen::MatrixXd::Zero(2, 0);
  CHECK_THROWS_AS(
      highdim_sufficient_condition(
          [](const Eigen::VectorXd& th) { return 0.5 * th.squaredNorm(); },
          [](const Eigen::VectorXd&) {
            return Eigen::MatrixXd::Identity(2, 2);  // noise present on A
          },
          origin, 8, 0.1),
      ConfigError);

  // Affine set with a direction: gradient must be tangential on A.
  AffineSet line;
  line.anchor = Eigen::VectorXd::Zero(2);
  line.basis = Eigen::MatrixXd::Zero(2, 1);
  line.basis(0, 0) = 1.0;
  CHECK_THROWS_AS(
      highdim_sufficient_condition(
          [](const Eigen::VectorXd& th) { return th(1) + th(1) * th(1); },
          [](const Eigen::VectorXd&) { return Eigen::MatrixXd::Zero(2, 2); },
          line, 8, 0.1),
      ConfigError);
}

TEST_CASE("single neuron threshold") {
  SingleNeuronData sym;
  sym.xs = {1.0, 1.0};
  sym.ys = {1.0, -1.0};
  sym.eta = 0.5;
  sym.zeta = 0.1;
  const auto s = single_neuron_threshold(sym);
  CHECK(s.signal == 0.0);
  CHECK(s.attractive);  // any positive noise beats zero signal

  SingleNeuronData one;
  one.xs = {1.0};
  one.ys = {1.0};
  one.sigma_prime0 = 1.0;
  one.eta = 3.0;
  one.zeta = 1.0;
  CHECK(single_neuron_threshold(one).attractive);  // eta zeta^2 = 3 > 2
  one.eta = 1.9;
  CHECK_FALSE(single_neuron_threshold(one).attractive);
  one.eta = 2.0;  // boundary is strict
  CHECK_FALSE(single_neuron_threshold(one).attractive);

  SingleNeuronData degenerate;
  degenerate.xs = {0.0, 0.0};
  degenerate.ys = {1.0, 2.0};
  CHECK_THROWS_AS(single_neuron_threshold(degenerate), ConfigError);
}
