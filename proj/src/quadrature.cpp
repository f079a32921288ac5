#include "collapse/quadrature.hpp"

#include <array>
#include <cmath>
#include <stdexcept>

#include "collapse/errors.hpp"

namespace collapse {
namespace {

// Kronrod-15 abscissae on [0, 1] side (symmetric) and weights, plus the
// embedded Gauss-7 weights. Values are the classic QUADPACK dqk15 constants;
// the unit tests reverify polynomial exactness up to degree 22.
constexpr std::array<double, 8> kXgk = {
    0.991455371120813, 0.949107912342759, 0.864864423359769,
    0.741531185599394, 0.586087235467691, 0.405845151377397,
    0.207784955007898, 0.000000000000000};
constexpr std::array<double, 8> kWgk = {
    0.022935322010529, 0.063092092629979, 0.104790010322250,
    0.140653259715525, 0.169004726639267, 0.190350578064785,
    0.204432940075298, 0.209482141084728};
constexpr std::array<double, 4> kWg = {0.129484966168870, 0.279705391489277,
                                       0.381830050505119, 0.417959183673469};

struct PanelEstimate {
  double kronrod;
  double error;
};

PanelEstimate gk15(const std::function<double(double)>& f, double a,
                   double b) {
  const double c = 0.5 * (a + b);
  const double h = 0.5 * (b - a);
  double resk = 0.0;
  double resg = 0.0;
  for (int i = 0; i < 8; ++i) {
    const double dx = h * kXgk[i];
    const double fsum =
        (i == 7) ? f(c) : f(c - dx) + f(c + dx);
    resk += kWgk[i] * fsum;
    // Odd Kronrod indices (1, 3, 5) plus the center are the Gauss-7 nodes.
    if (i % 2 == 1 || i == 7) resg += kWg[i / 2] * fsum;
  }
  return {resk * h, std::abs(resk - resg) * h};
}

void refine(const std::function<double(double)>& f, double a, double b,
            double rel_tol, int depth, QuadratureResult& acc) {
  const PanelEstimate est = gk15(f, a, b);
  if (!std::isfinite(est.kronrod))
    throw DivergenceError("quadrature: non-finite integrand panel");
  const double scale = std::abs(est.kronrod) + 1e-300;
  if (est.error <= rel_tol * scale || depth >= 52) {
    acc.value += est.kronrod;
    acc.error_estimate += est.error;
    acc.subdivisions += 1;
    return;
  }
  const double mid = 0.5 * (a + b);
  refine(f, a, mid, rel_tol, depth + 1, acc);
  refine(f, mid, b, rel_tol, depth + 1, acc);
}

}  // namespace

QuadratureResult integrate(const std::function<double(double)>& f, double a,
                           double b, double rel_tol) {
  if (!(rel_tol > 0)) throw ConfigError("quadrature: rel_tol must be > 0");
  if (a == b) return {};
  QuadratureResult acc;
  refine(f, a, b, rel_tol, 0, acc);
  return acc;
}

QuadratureResult integrate_semi_infinite(
    const std::function<double(double)>& f, double a, double rel_tol) {
  if (!(rel_tol > 0)) throw ConfigError("quadrature: rel_tol must be > 0");
  QuadratureResult acc;
  double lo = a;
  double len = 1.0;
  int quiet_chunks = 0;
  for (int chunk = 0; chunk < 120; ++chunk) {
    const QuadratureResult part = integrate(f, lo, lo + len, rel_tol);
    acc.value += part.value;
    acc.error_estimate += part.error_estimate;
    acc.subdivisions += part.subdivisions;
    const double scale = std::abs(acc.value) + 1e-300;
    if (std::abs(part.value) < 0.01 * rel_tol * scale) {
      if (++quiet_chunks >= 2) return acc;
    } else {
      quiet_chunks = 0;
    }
    lo += len;
    len *= 2.0;
  }
  throw DivergenceError(
      "quadrature: semi-infinite integral did not settle; integrand may "
      "decay too slowly or diverge");
}

}  // namespace collapse
